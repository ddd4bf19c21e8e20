import csv
import json

import pytest

from deepdds.checkpoint import load_checkpoint
from deepdds.cli import main
from deepdds.synthetic import make_screen


@pytest.fixture(scope="module")
def screen_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("screen")
    make_screen(n_train=600, n_val=150, n_cells=10, n_genes=8, seed=1).write(root)
    config = {
        "encoder": "gcn", "gcn_widths": [32, 16], "mlp_widths": [16], "fc_widths": [32, 16],
        "dropout": 0.1, "batch_size": 64, "max_epochs": 40, "patience": 6, "learning_rate": 3e-3,
        "val_fraction": 0.2, "out_dir": "run", "tissue": "tissue.csv",
    }
    (root / "config.json").write_text(json.dumps(config))
    return root


@pytest.fixture(scope="module")
def trained(screen_dir):
    assert main(["--quiet", "train", str(screen_dir / "config.json")]) == 0
    return screen_dir / "run"


def test_train_artifacts(trained):
    assert (trained / "model.dds").exists()
    report = json.loads((trained / "report.json").read_text())
    assert report["best_val_auc"] >= 0.95
    assert "wall_time" not in report
    assert (trained / "train.log").read_text().startswith("epoch 1 ")


def test_train_rerun_is_bit_identical(screen_dir, trained, tmp_path):
    cfg = json.loads((screen_dir / "config.json").read_text())
    cfg["out_dir"] = str(tmp_path / "again")
    (screen_dir / "config2.json").write_text(json.dumps(cfg))
    assert main(["--quiet", "train", str(screen_dir / "config2.json")]) == 0
    first, second = (json.loads((d / "report.json").read_text()) for d in (trained, tmp_path / "again"))
    first["run_config"].pop("out_dir")
    second["run_config"].pop("out_dir")
    assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)
    a, b = (load_checkpoint(d / "model.dds").state() for d in (trained, tmp_path / "again"))
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_eval(screen_dir, trained, tmp_path):
    out = tmp_path / "metrics.json"
    code = main(["--quiet", "--config", str(screen_dir / "config.json"), "eval", str(trained / "model.dds"),
                 str(screen_dir / "synergy.csv"), "--both-orders", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    for name in ("roc_auc", "pr_auc", "acc", "bacc", "prec", "tpr", "tnr", "kappa"):
        assert name in doc
    assert doc["acc"] >= 0.95 and "swapped" in doc


def test_eval_single_class_exits_2(screen_dir, trained, tmp_path):
    syn = tmp_path / "one.csv"
    rows = list(csv.reader(open(screen_dir / "synergy.csv")))
    syn.write_text("\n".join(",".join(r) for r in [rows[0]] + [r for r in rows[1:] if float(r[3]) > 10][:5]) + "\n")
    assert main(["--quiet", "--config", str(screen_dir / "config.json"), "eval",
                 str(trained / "model.dds"), str(syn)]) == 2


def test_rank(screen_dir, trained, tmp_path):
    cands = tmp_path / "cands.csv"
    ids = [f"D{i:02d}" for i in range(40)]
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]][:30]
    cands.write_text("drug_a,drug_b\n" + "".join(f"{a},{b}\n" for a, b in pairs))
    out = tmp_path / "ranked.csv"
    args = ["--quiet", "--config", str(screen_dir / "config.json"), "rank", str(trained / "model.dds"),
            str(cands), "--cell", "CELL00", "--out", str(out)]
    assert main(args) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 30
    scores = [float(r["score"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert main(args[:-2] + ["--top-k", "5", "--out", str(out)]) == 0
    assert len(list(csv.DictReader(open(out)))) == 5
    assert main(args[:-2] + ["--top-k", "500", "--out", str(out)]) == 0
    assert len(list(csv.DictReader(open(out)))) == 30


def test_interpret(screen_dir, trained, tmp_path):
    outdir = tmp_path / "interp"
    base = ["--quiet", "--config", str(screen_dir / "config.json"), "interpret", str(trained / "model.dds")]
    assert main(base + ["D00", "D25", str(outdir)]) == 0
    assert {p.name for p in outdir.iterdir()} == {"intra_D00.csv", "intra_D25.csv", "inter_D00_D25.csv", "ordering.json"}
    assert main(base + ["D00", "NOPE", str(outdir)]) == 2


def test_featurize(tmp_path):
    drugs = tmp_path / "d.csv"
    drugs.write_text("drug_id,smiles\nA,CCO\nB,c1ccccc1\n")
    out = tmp_path / "f.csv"
    assert main(["--quiet", "featurize", str(drugs), str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert len(rows) == 1 + 3 + 6 and len(rows[0]) == 3 + 67
    drugs.write_text("drug_id,smiles\nA,CCO\nB,C(C\n")
    assert main(["--quiet", "featurize", str(drugs), str(out)]) == 2
    assert main(["--quiet", "featurize", str(tmp_path / "missing.csv"), str(out)]) == 3


def test_split(screen_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    syn = str(screen_dir / "synergy.csv")
    assert main(["--quiet", "--seed", "3", "split", syn, "kfold", str(a)]) == 0
    assert main(["--quiet", "--seed", "3", "split", syn, "kfold", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(json.loads(a.read_text())["folds"]) == 5
    assert main(["--quiet", "split", syn, "leave_tissue", str(a)]) == 2
    assert main(["--quiet", "split", syn, "leave_tissue", str(a), "--tissue", str(screen_dir / "tissue.csv")]) == 0
    assert main(["--quiet", "split", syn, "leave_combination", str(a), "--holdout", "X+Y"]) == 2


def test_train_unknown_drug_exit_2(screen_dir, tmp_path, capsys):
    syn = tmp_path / "syn.csv"
    syn.write_text("drug_a,drug_b,cell_id,loewe\nD00,GHOST,CELL00,20\nD00,D01,CELL01,-20\n")
    cfg = json.loads((screen_dir / "config.json").read_text())
    cfg.update(synergy=str(syn), drugs=str(screen_dir / "drugs.csv"), expression=str(screen_dir / "expression.csv"),
               genes=str(screen_dir / "genes.txt"), out_dir=str(tmp_path / "o"), tissue=None)
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["--quiet", "train", str(tmp_path / "c.json")]) == 2
    assert "GHOST" in capsys.readouterr().err


def test_missing_checkpoint_exit_3(screen_dir, tmp_path):
    assert main(["--quiet", "--config", str(screen_dir / "config.json"), "eval", str(tmp_path / "none.dds"),
                 str(screen_dir / "synergy.csv")]) == 3


def test_unknown_config_key_exit_2(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"bogus": 1}))
    assert main(["--quiet", "train", str(tmp_path / "c.json")]) == 2
