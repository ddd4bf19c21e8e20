"""Synthetic screen with a known rule, for learnability checks.

The label of ``(drug_a, drug_b, cell)`` is 1 iff *either drug contains a
nitrogen atom* XOR *the cell's normalized expression of gene 0 is positive*.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chem import MolGraph, mol_from_smiles
from .data import (
    CellLineProfile,
    Corpus,
    NormalizationStats,
    SynergyRecord,
    apply_normalizer,
    fit_normalizer,
    label_records,
)

WITHOUT_NITROGEN = (
    "CCO", "CCCC", "c1ccccc1", "CC(=O)O", "CCOC", "Oc1ccccc1", "CC(C)C",
    "C1CCCCC1", "OCCO", "CC(=O)C", "Clc1ccccc1", "CCS", "C=CC=C", "CC#C",
    "FC(F)F", "c1ccsc1", "c1ccoc1", "CCCCCO", "OC1CCCC1", "CC(C)(C)O",
)
WITH_NITROGEN = (
    "CCN", "c1ccncc1", "CC(=O)N", "NCCO", "C#N", "CN(C)C", "Nc1ccccc1",
    "N1CCCCC1", "CCNC(=O)C", "c1cnc[nH]1", "NC(=O)N", "CC(N)C(=O)O",
    "c1ccc2[nH]ccc2c1", "CN", "O=[N+]([O-])c1ccccc1", "NCCN", "CC#N",
    "c1ncncn1", "CCCCN", "NC1CCCC1",
)
TISSUES = ("breast", "colon", "lung", "melanoma", "ovarian")


def has_nitrogen(graph: MolGraph) -> bool:
    return any(a.element == "N" for a in graph.atoms)


@dataclass
class SyntheticScreen:
    smiles: dict[str, str]
    genes: list[str]
    expression: dict[str, np.ndarray]
    tissues: dict[str, str]
    raw: list[tuple[str, str, str, float]]
    n_train: int

    @property
    def drugs(self) -> dict[str, MolGraph]:
        return {k: mol_from_smiles(s) for k, s in self.smiles.items()}

    def profiles(self) -> dict[str, CellLineProfile]:
        genes = tuple(self.genes)
        return {c: CellLineProfile(c, v.copy(), genes) for c, v in self.expression.items()}

    def records(self) -> tuple[list[SynergyRecord], list[SynergyRecord]]:
        labeled, dropped = label_records(self.raw)
        assert dropped == 0
        return labeled[:self.n_train], labeled[self.n_train:]

    def corpus(self, train_records=None) -> tuple[Corpus, NormalizationStats]:
        """Corpus with profiles z-scored on the cell lines of ``train_records``."""
        profiles = self.profiles()
        train_records = train_records if train_records is not None else self.records()[0]
        train_cells = sorted({r.cell_id for r in train_records})
        stats = fit_normalizer(profiles[c] for c in train_cells)
        normalized = {c: apply_normalizer(stats, p) for c, p in profiles.items()}
        return Corpus(self.drugs, normalized), stats

    def write(self, outdir) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {name: outdir / fname for name, fname in (
            ("drugs", "drugs.csv"), ("expression", "expression.csv"), ("genes", "genes.txt"),
            ("synergy", "synergy.csv"), ("tissue", "tissue.csv"))}
        with open(paths["drugs"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["drug_id", "smiles"])
            w.writerows(self.smiles.items())
        with open(paths["expression"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_id", *self.genes])
            for cell, v in self.expression.items():
                w.writerow([cell, *(repr(float(x)) for x in v)])
        paths["genes"].write_text("\n".join(self.genes) + "\n")
        with open(paths["synergy"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["drug_a", "drug_b", "cell_id", "loewe"])
            w.writerows(self.raw)
        with open(paths["tissue"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_id", "tissue"])
            w.writerows(self.tissues.items())
        return paths


def make_screen(n_train: int = 2000, n_val: int = 500, n_cells: int = 20, n_genes: int = 16, seed: int = 0) -> SyntheticScreen:
    """Sample distinct (unordered pair, cell) triples; the first ``n_train``
    labeled records are for training and the rest for validation."""
    rng = np.random.default_rng(seed)
    smiles = {f"D{i:02d}": s for i, s in enumerate(WITHOUT_NITROGEN + WITH_NITROGEN)}
    nitrogen = {k: has_nitrogen(mol_from_smiles(s)) for k, s in smiles.items()}
    genes = [f"G{i}" for i in range(n_genes)]
    cells = [f"CELL{i:02d}" for i in range(n_cells)]

    # gene 0 is bimodal so its z-score sign is well separated
    expression = {}
    for i, c in enumerate(cells):
        v = rng.lognormal(mean=1.0, sigma=0.5, size=n_genes)
        v[0] = (20.0 if i % 2 == 0 else 5.0) + rng.uniform(0.0, 2.0)
        expression[c] = v
    gene0 = np.array([expression[c][0] for c in cells])
    high = {c: g > gene0.mean() for c, g in zip(cells, gene0)}
    tissues = {c: TISSUES[i % len(TISSUES)] for i, c in enumerate(cells)}

    ids = list(smiles)
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]
    total = len(pairs) * n_cells
    if n_train + n_val > total:
        raise ValueError(f"only {total} distinct triples available")
    chosen = rng.choice(total, size=n_train + n_val, replace=False)
    raw = []
    for idx in chosen:
        a, b = pairs[idx // n_cells]
        cell = cells[idx % n_cells]
        if rng.random() < 0.5:
            a, b = b, a
        label = (nitrogen[a] or nitrogen[b]) != high[cell]
        score = float(rng.uniform(15.0, 40.0) if label else rng.uniform(-40.0, -5.0))
        raw.append((a, b, cell, score))
    return SyntheticScreen(smiles, genes, expression, tissues, raw, n_train)
