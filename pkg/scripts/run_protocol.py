"""Train and test one model per fold of an evaluation protocol.

Reads the same run config as ``deepdds train``.  For every fold of the
chosen protocol a validation slice is carved from the training side for
early stopping, the model is scored on the held-out side, and per-fold
metrics plus mean/std rows go to ``<out_dir>/<protocol>.csv``.

    python scripts/run_protocol.py config.json kfold
    python scripts/run_protocol.py config.json leave_tissue --holdout breast
"""

import argparse
import logging
import math
from pathlib import Path

import numpy as np

from deepdds.cli import RunConfig
from deepdds.data import (
    PROTOCOLS,
    Corpus,
    apply_normalizer,
    fit_normalizer,
    label_records,
    load_drugs,
    load_expression,
    load_gene_list,
    load_synergy,
    load_tissues,
    make_splits,
)
from deepdds.metrics import SingleClass, evaluate, write_fold_csv
from deepdds.net import init_model
from deepdds.train import fit, predict_records

log = logging.getLogger("run_protocol")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("protocol", choices=PROTOCOLS)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--holdout", action="append")
    p.add_argument("--max-folds", type=int, default=None)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = RunConfig.load(args.config)
    drugs = load_drugs(cfg.drugs)
    raw_profiles = load_expression(cfg.expression, load_gene_list(cfg.genes))
    records, _ = label_records(load_synergy(cfg.synergy))
    tissues = load_tissues(cfg.tissue) if cfg.tissue else None
    plan = make_splits(records, args.protocol, k=args.k, holdout=args.holdout, tissue_map=tissues, seed=cfg.seed)

    reports, labels = [], []
    for f, (train_idx, test_idx) in enumerate(plan.folds[:args.max_folds]):
        rng = np.random.default_rng([cfg.seed, 2, f])
        order = rng.permutation(len(train_idx))
        n_val = max(1, math.ceil(cfg.val_fraction * len(train_idx)))
        val = [records[train_idx[i]] for i in sorted(order[:n_val])]
        train = [records[train_idx[i]] for i in sorted(order[n_val:])]
        test = [records[i] for i in test_idx]

        stats = fit_normalizer(raw_profiles[c] for c in sorted({r.cell_id for r in train}))
        corpus = Corpus(drugs, {c: apply_normalizer(stats, pr) for c, pr in raw_profiles.items()})
        model = init_model(cfg.model_config(), stats.genes, cfg.seed, stats)
        model, report = fit(model, corpus, train, val, cfg.train_config())
        scores = predict_records(model, corpus, test)
        name = plan.held_out[f] if plan.held_out else str(f)
        try:
            reports.append(evaluate(scores, [r.label for r in test]))
        except SingleClass:
            log.warning("fold %s: test side has one class, skipped", name)
            continue
        labels.append(name)
        log.info("fold %s: best epoch %d, test ROC AUC %.4f", name, report.best_epoch, reports[-1].roc_auc)

    out = Path(cfg.out_dir) / f"{args.protocol}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fold_csv(out, reports, labels)
    log.info("wrote %s", out)


if __name__ == "__main__":
    main()
