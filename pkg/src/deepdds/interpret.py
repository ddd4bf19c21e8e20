"""Atom-level correlation analysis of drug encoder embeddings."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import squareform

from .chem import MolGraph, featurize
from .gnn import WidthMismatch, batch_graphs
from .net import DeepDDSModel
from .tensor import no_grad

__all__ = [
    "AtomCorrelationMatrix",
    "atom_embeddings",
    "intra_corr",
    "inter_corr",
    "cluster_order",
    "atom_labels",
    "write_matrix_csv",
    "read_matrix_csv",
]


@dataclass
class AtomCorrelationMatrix:
    drug_ids: tuple[str, ...]
    row_labels: list[str]
    col_labels: list[str]
    values: np.ndarray
    mask: np.ndarray
    ordering: list[int] = field(default_factory=list)
    zero_variance_rows: list[int] = field(default_factory=list)

    @property
    def shape(self):
        return self.values.shape


def atom_embeddings(model: DeepDDSModel, drug: MolGraph) -> np.ndarray:
    """Node embeddings after the last graph layer (before pooling), eval mode."""
    x = featurize(drug)
    with no_grad():
        return model.encoder.node_embeddings(batch_graphs([(drug, x)])).data.copy()


def _centered_unit_rows(x: np.ndarray):
    d = x - x.mean(axis=1, keepdims=True)
    norm = np.sqrt((d * d).sum(axis=1))
    ok = norm / np.sqrt(max(x.shape[1], 1)) > 1e-12
    unit = np.where(ok[:, None], d / np.where(ok, norm, 1.0)[:, None], 0.0)
    return unit, ok


def intra_corr(embeddings, labels=None, drug_id: str = "") -> AtomCorrelationMatrix:
    """Pearson correlation between every pair of atom rows.

    Rows with zero variance are flagged in ``mask`` and their off-diagonal
    entries set to 0; the diagonal is always 1.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("embeddings must be a non-empty matrix")
    unit, ok = _centered_unit_rows(x)
    m = np.clip(unit @ unit.T, -1.0, 1.0)
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    mask = ~(ok[:, None] & ok[None, :])
    np.fill_diagonal(mask, False)
    labels = labels or [str(i) for i in range(x.shape[0])]
    flagged = np.flatnonzero(~ok).tolist()
    return AtomCorrelationMatrix((drug_id,), list(labels), list(labels), m, mask, zero_variance_rows=flagged)


def inter_corr(embeddings_a, embeddings_b, labels_a=None, labels_b=None, drug_ids=("", "")) -> AtomCorrelationMatrix:
    a = np.asarray(embeddings_a, dtype=np.float64)
    b = np.asarray(embeddings_b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise WidthMismatch(f"embedding widths differ: {a.shape[1]} vs {b.shape[1]}")
    ua, oka = _centered_unit_rows(a)
    ub, okb = _centered_unit_rows(b)
    m = np.clip(ua @ ub.T, -1.0, 1.0)
    mask = ~(oka[:, None] & okb[None, :])
    return AtomCorrelationMatrix(
        tuple(drug_ids),
        list(labels_a or map(str, range(a.shape[0]))),
        list(labels_b or map(str, range(b.shape[0]))),
        m, mask, zero_variance_rows=np.flatnonzero(~oka).tolist(),
    )


def cluster_order(matrix) -> list[int]:
    """Leaf order of average-linkage clustering on ``1 - corr``.

    When every off-diagonal distance is equal there is no structure to show
    and the input order is kept.
    """
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    if n <= 2:
        return list(range(n))
    dist = np.clip(1.0 - m, 0.0, 2.0)
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    condensed = squareform(dist, checks=False)
    if np.ptp(condensed) == 0.0:
        return list(range(n))
    return leaves_list(linkage(condensed, method="average")).tolist()


def atom_labels(graph: MolGraph) -> list[str]:
    return [f"{i}:{a.element.lower() if a.aromatic else a.element}" for i, a in enumerate(graph.atoms)]


def write_matrix_csv(path, matrix: AtomCorrelationMatrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["atom", *matrix.col_labels])
        for label, row in zip(matrix.row_labels, matrix.values):
            w.writerow([label, *(repr(float(v)) for v in row)])


def read_matrix_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return labels, cols, values


def export_pair(model: DeepDDSModel, graph_a: MolGraph, graph_b: MolGraph, ids: tuple[str, str], outdir) -> dict:
    """Write intra-A, intra-B and inter matrices plus the cluster orderings."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ea, eb = atom_embeddings(model, graph_a), atom_embeddings(model, graph_b)
    la, lb = atom_labels(graph_a), atom_labels(graph_b)
    ma = intra_corr(ea, la, ids[0])
    mb = intra_corr(eb, lb, ids[1])
    mab = inter_corr(ea, eb, la, lb, ids)
    ma.ordering, mb.ordering = cluster_order(ma.values), cluster_order(mb.values)
    files = {
        "intra_a": f"intra_{ids[0]}.csv",
        "intra_b": f"intra_{ids[1]}.csv",
        "inter": f"inter_{ids[0]}_{ids[1]}.csv",
    }
    write_matrix_csv(outdir / files["intra_a"], ma)
    write_matrix_csv(outdir / files["intra_b"], mb)
    write_matrix_csv(outdir / files["inter"], mab)
    sidecar = {
        "drugs": list(ids),
        "files": files,
        "ordering": {ids[0]: ma.ordering, ids[1]: mb.ordering},
        "zero_variance_atoms": {ids[0]: ma.zero_variance_rows, ids[1]: mb.zero_variance_rows},
    }
    (outdir / "ordering.json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return sidecar
