"""Command-line entry point: ``deepdds <subcommand> ...``.

Exit codes: 0 success, 2 domain or data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, CheckpointIOError, load_checkpoint, save_checkpoint
from .chem import N_ATOM_FEATURES, SmilesError, featurize, mol_from_smiles
from .data import (
    PROTOCOLS,
    Corpus,
    DataError,
    NormalizationStats,
    SplitPlan,
    SynergyRecord,
    apply_normalizer,
    fit_normalizer,
    label_records,
    load_candidates,
    load_drugs,
    load_expression,
    load_gene_list,
    load_synergy,
    load_tissues,
    make_splits,
)
from .interpret import export_pair, read_matrix_csv
from .metrics import NoPositives, SingleClass, evaluate
from .net import GeneMismatch, InvalidWidth, ModelConfig, init_model
from .train import TrainConfig, TrainingError, fit, predict_records

log = logging.getLogger("deepdds")

EXIT_OK, EXIT_DATA, EXIT_IO = 0, 2, 3


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything ``train`` needs; defaults follow the published settings."""

    drugs: str = "drugs.csv"
    expression: str = "expression.csv"
    genes: str = "genes.txt"
    synergy: str = "synergy.csv"
    tissue: str | None = None
    split: str | None = None
    fold: int = 0
    val_fraction: float = 0.1
    out_dir: str = "run"
    encoder: str = "gat"
    gcn_widths: list = (1024, 512, 156)
    gat_widths: list = (1024, 512)
    gat_heads: int = 10
    mlp_widths: list = (2048, 512)
    fc_widths: list = (1024, 512, 128)
    dropout: float = 0.2
    learning_rate: float = 1e-3
    lam: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 10
    seed: int = 0
    order_augment: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls(**d)
        if base_dir is not None:
            for name in ("drugs", "expression", "genes", "synergy", "tissue", "split", "out_dir"):
                value = getattr(cfg, name)
                if value is not None and not Path(value).is_absolute():
                    setattr(cfg, name, str(base_dir / value))
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        return cls.from_dict(d, path.parent)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.encoder, tuple(self.gcn_widths), tuple(self.gat_widths), self.gat_heads,
                           tuple(self.mlp_widths), tuple(self.fc_widths), self.dropout)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _normalized_profiles(expression_path, genes, stats: NormalizationStats | None):
    raw = load_expression(expression_path, list(genes))
    if raw and next(iter(raw.values())).genes != tuple(genes):
        missing = sorted(set(genes) - set(next(iter(raw.values())).genes))
        raise GeneMismatch(f"expression file lacks {len(missing)} model gene(s), e.g. {missing[:5]}")
    if stats is None:
        return raw
    return {c: apply_normalizer(stats, p) for c, p in raw.items()}


# -- subcommands -------------------------------------------------------------

def cmd_featurize(args) -> int:
    with open(args.drugs, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"drug_id", "smiles"} <= set(reader.fieldnames):
            raise DataError(f"{args.drugs}: needs columns drug_id,smiles")
        rows = list(reader)
    errors, out_rows, seen = [], [], set()
    for n, row in enumerate(rows, start=2):
        drug_id = row["drug_id"].strip()
        if drug_id in seen:
            errors.append(f"row {n}: duplicate drug id {drug_id!r}")
            continue
        seen.add(drug_id)
        try:
            graph = mol_from_smiles(row["smiles"].strip())
        except SmilesError as exc:
            errors.append(f"row {n}: drug {drug_id!r}: {exc}")
            continue
        for i, feats in enumerate(featurize(graph)):
            out_rows.append([drug_id, i, graph.atoms[i].element, *(int(v) for v in feats)])
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_DATA
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["drug_id", "atom", "element", *range(N_ATOM_FEATURES)])
        w.writerows(out_rows)
    return EXIT_OK


def cmd_split(args) -> int:
    seed = 0 if args.seed is None else args.seed
    records, dropped = label_records(load_synergy(args.synergy))
    tissue_map = load_tissues(args.tissue) if args.tissue else None
    if args.protocol == "leave_tissue" and tissue_map is None:
        raise DataError("leave_tissue needs --tissue")
    plan = make_splits(records, args.protocol, k=args.k, holdout=args.holdout or None,
                       tissue_map=tissue_map, seed=seed)
    doc = plan.to_dict()
    doc["n_records"] = len(records)
    doc["dropped"] = dropped
    doc["config"] = {"synergy": str(args.synergy), "protocol": args.protocol, "k": args.k,
                     "holdout": args.holdout, "tissue": args.tissue, "seed": seed}
    _write_json(args.out, doc)
    return EXIT_OK


def _train_val(records, cfg: RunConfig) -> tuple[list, list]:
    pool = list(range(len(records)))
    if cfg.split:
        plan = SplitPlan.load(cfg.split)
        if not 0 <= cfg.fold < len(plan.folds):
            raise UsageError(f"fold {cfg.fold} out of range for {len(plan.folds)} folds")
        pool = plan.folds[cfg.fold][0]
    order = np.random.default_rng([cfg.seed, 2]).permutation(len(pool))
    n_val = max(1, math.ceil(cfg.val_fraction * len(pool)))
    if n_val >= len(pool):
        raise DataError("validation carve-out leaves no training records")
    val = [records[pool[i]] for i in sorted(order[:n_val])]
    train = [records[pool[i]] for i in sorted(order[n_val:])]
    return train, val


def cmd_train(args) -> int:
    path = args.run_config or args.config
    if path is None:
        raise UsageError("train needs a config file")
    cfg = RunConfig.load(path)
    if args.seed is not None:
        cfg.seed = args.seed
    drugs = load_drugs(cfg.drugs)
    genes = load_gene_list(cfg.genes)
    raw_profiles = load_expression(cfg.expression, genes)
    records, dropped = label_records(load_synergy(cfg.synergy))
    Corpus(drugs, raw_profiles).check_records(records)
    train, val = _train_val(records, cfg)

    stats = fit_normalizer(raw_profiles[c] for c in sorted({r.cell_id for r in train}))
    profiles = {c: apply_normalizer(stats, p) for c, p in raw_profiles.items()}
    corpus = Corpus(drugs, profiles)
    model = init_model(cfg.model_config(), stats.genes, cfg.seed, stats)
    model.metadata = {"run_config": cfg.to_dict()}

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train.log", "w") as logf:
        def on_epoch(e):
            print(f"epoch {e.epoch} loss {e.train_loss!r} val_auc {e.val['roc_auc']!r}", file=logf, flush=True)
            log.info("epoch %d loss %.5f val_auc %.5f", e.epoch, e.train_loss, e.val["roc_auc"])

        model, report = fit(model, corpus, train, val, cfg.train_config(), on_epoch=on_epoch)
        print(f"best_epoch {report.best_epoch} best_val_auc {report.best_val_auc!r} wall_time {report.wall_time:.3f}s", file=logf)

    save_checkpoint(model, out / "model.dds")
    doc = report.to_dict()
    doc.update(run_config=cfg.to_dict(), n_train=len(train), n_val=len(val), dropped=dropped)
    _write_json(out / "report.json", doc)
    log.info("best epoch %d, validation ROC AUC %.4f", report.best_epoch, report.best_val_auc)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    drugs = load_drugs(args.drugs)
    profiles = _normalized_profiles(args.expression, model.gene_list, model.normalization)
    records, _ = label_records(load_synergy(args.synergy))
    if args.split:
        plan = SplitPlan.load(args.split)
        if not 0 <= args.fold < len(plan.folds):
            raise UsageError(f"fold {args.fold} out of range for {len(plan.folds)} folds")
        records = [records[i] for i in plan.folds[args.fold][1]]
    corpus = Corpus(drugs, profiles)
    corpus.check_records(records)
    labels = np.array([r.label for r in records])
    scores = predict_records(model, corpus, records)
    report = evaluate(scores, labels)
    doc = report.to_dict()
    if args.both_orders:
        swapped = predict_records(model, corpus, records, swap=True)
        doc["swapped"] = evaluate(swapped, labels).to_dict()
    doc["config"] = {"checkpoint": str(args.checkpoint), "synergy": str(args.synergy), "split": args.split,
                     "fold": args.fold, "seed": model.seed}
    if args.out:
        _write_json(args.out, doc)
    else:
        print(json.dumps(doc, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_rank(args) -> int:
    model = load_checkpoint(args.checkpoint)
    drugs = load_drugs(args.drugs)
    profiles = _normalized_profiles(args.expression, model.gene_list, model.normalization)
    if args.cell not in profiles:
        raise DataError(f"unknown cell id {args.cell!r}")
    candidates = load_candidates(args.candidates)
    for a, b in candidates:
        for d in (a, b):
            if d not in drugs:
                raise DataError(f"unknown drug id {d!r} in candidates")
    records = [SynergyRecord(a, b, args.cell, math.nan) for a, b in candidates]
    corpus = Corpus(drugs, profiles)
    scores = 0.5 * (predict_records(model, corpus, records) + predict_records(model, corpus, records, swap=True))
    order = sorted(range(len(records)), key=lambda i: -scores[i])
    if args.top_k is not None:
        order = order[:args.top_k]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["drug_a", "drug_b", "cell_id", "score"])
        for i in order:
            w.writerow([records[i].drug_a, records[i].drug_b, args.cell, repr(float(scores[i]))])
    _write_json(str(args.out) + ".json", {"config": {
        "checkpoint": str(args.checkpoint), "candidates": str(args.candidates), "cell": args.cell,
        "top_k": args.top_k, "seed": model.seed}, "n_candidates": len(records), "n_written": len(order)})
    return EXIT_OK


def cmd_interpret(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.snapshot == "initial":
        model = init_model(model.config, model.gene_list, model.seed, model.normalization)
    drugs = load_drugs(args.drugs)
    for d in (args.drug_a, args.drug_b):
        if d not in drugs:
            raise DataError(f"unknown drug id {d!r}")
    sidecar = export_pair(model, drugs[args.drug_a], drugs[args.drug_b], (args.drug_a, args.drug_b), args.outdir)
    for key in ("intra_a", "intra_b"):
        _, _, m = read_matrix_csv(Path(args.outdir) / sidecar["files"][key])
        if np.abs(m - m.T).max() > 1e-12 or np.abs(np.diag(m) - 1.0).max() > 1e-12:
            raise DataError(f"{sidecar['files'][key]} is not a symmetric unit-diagonal matrix")
    sidecar["config"] = {"checkpoint": str(args.checkpoint), "snapshot": args.snapshot, "seed": model.seed}
    _write_json(Path(args.outdir) / "ordering.json", sidecar)
    return EXIT_OK


# -- wiring ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepdds", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="run config JSON (train) or source of default input paths")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--version", action="version", version=f"deepdds {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("featurize", help="write per-atom feature rows for every drug")
    s.add_argument("drugs")
    s.add_argument("out")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("split", help="write a split plan JSON")
    s.add_argument("synergy")
    s.add_argument("protocol", choices=PROTOCOLS)
    s.add_argument("out")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--holdout", action="append", help="held-out key (repeatable)")
    s.add_argument("--tissue")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train a model from a run config")
    s.add_argument("run_config", nargs="?")
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "score labeled records"),
                              ("rank", cmd_rank, "rank candidate pairs on one cell line"),
                              ("interpret", cmd_interpret, "export atom correlation matrices")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("checkpoint")
        s.add_argument("--drugs")
        if name != "interpret":
            s.add_argument("--expression")
        s.set_defaults(func=func)
        if name == "eval":
            s.add_argument("synergy")
            s.add_argument("--split")
            s.add_argument("--fold", type=int, default=0)
            s.add_argument("--both-orders", action="store_true")
            s.add_argument("--out")
        elif name == "rank":
            s.add_argument("candidates")
            s.add_argument("--cell", required=True)
            s.add_argument("--top-k", type=int, default=None)
            s.add_argument("--out", required=True)
        else:
            s.add_argument("drug_a")
            s.add_argument("drug_b")
            s.add_argument("outdir")
            s.add_argument("--snapshot", choices=("trained", "initial"), default="trained")
    return p


def _fill_paths(args):
    """Default ``--drugs``/``--expression``/``--tissue`` from the global config."""
    if not args.config or args.command == "train":
        return
    cfg = RunConfig.load(args.config)
    for name in ("drugs", "expression", "tissue"):
        if hasattr(args, name) and getattr(args, name) is None:
            setattr(args, name, getattr(cfg, name))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        _fill_paths(args)
        for name in ("drugs", "expression"):
            if hasattr(args, name) and getattr(args, name) is None:
                raise UsageError(f"--{name} is required (or give --config)")
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (CheckpointIOError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataError, SmilesError, CheckpointError, SingleClass, NoPositives, GeneMismatch,
            InvalidWidth, UsageError, TrainingError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
