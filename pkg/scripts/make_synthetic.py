"""Write the synthetic nitrogen-XOR-gene screen as CSV inputs for the CLI.

    python scripts/make_synthetic.py out/ --n-train 2000 --n-val 500
"""

import argparse
import json

from deepdds.synthetic import make_screen


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("outdir")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=500)
    p.add_argument("--n-cells", type=int, default=20)
    p.add_argument("--n-genes", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder", choices=("gcn", "gat"), default="gcn")
    args = p.parse_args()

    screen = make_screen(args.n_train, args.n_val, args.n_cells, args.n_genes, args.seed)
    paths = screen.write(args.outdir)
    config = {
        "drugs": paths["drugs"].name, "expression": paths["expression"].name, "genes": paths["genes"].name,
        "synergy": paths["synergy"].name, "tissue": paths["tissue"].name,
        "encoder": args.encoder, "gcn_widths": [64, 32], "gat_widths": [64, 32],
        "mlp_widths": [64, 32], "fc_widths": [64, 32], "max_epochs": 200, "patience": 15,
        "val_fraction": args.n_val / (args.n_train + args.n_val), "out_dir": "run", "seed": args.seed,
    }
    (paths["drugs"].parent / "config.json").write_text(json.dumps(config, indent=1) + "\n")
    print(f"wrote {len(screen.raw)} synergy rows and config.json to {args.outdir}")


if __name__ == "__main__":
    main()
