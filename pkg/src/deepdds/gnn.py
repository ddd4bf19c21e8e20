"""Graph convolution and graph attention layers over block-diagonal batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .chem import MolGraph
from .tensor import (
    EmptyInput,
    ShapeMismatch,
    Tensor,
    elu,
    matmul,
    relu,
    scale_rows,
    segment_max,
    segment_softmax,
    spmm,
)

__all__ = [
    "EmptyBatch",
    "WidthMismatch",
    "EmptyGraph",
    "GraphBatch",
    "GcnLayer",
    "GatLayer",
    "GraphEncoder",
    "batch_graphs",
    "gcn_forward",
    "gat_forward",
    "global_max_pool",
    "glorot",
]


class EmptyBatch(ValueError):
    pass


class WidthMismatch(ValueError):
    pass


class EmptyGraph(EmptyInput):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    """Glorot-uniform draw, rounded through float32 so checkpoints are exact."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
    return w.astype(np.float32).astype(np.float64)


@dataclass
class GraphBatch:
    node_features: np.ndarray
    adjacency: sp.csr_matrix
    graph_offsets: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_graphs(self) -> int:
        return len(self.graph_offsets)

    @cached_property
    def normalized_adjacency(self) -> sp.csr_matrix:
        """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree of ``A + I``."""
        a_tilde = self.adjacency + sp.identity(self.n_nodes, format="csr")
        d = np.asarray(a_tilde.sum(axis=1)).ravel()
        inv_sqrt = sp.diags(1.0 / np.sqrt(d))
        return (inv_sqrt @ a_tilde @ inv_sqrt).tocsr()

    @cached_property
    def attention_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """``(target, source)`` pairs over each neighborhood plus self, sorted by target."""
        a = (self.adjacency + sp.identity(self.n_nodes, format="csr")).tocoo()
        order = np.lexsort((a.col, a.row))
        return a.row[order].astype(np.int64), a.col[order].astype(np.int64)

    @cached_property
    def aggregation_matrix(self) -> sp.csr_matrix:
        """Sparse ``(n_nodes, n_edges)`` indicator summing edge messages per target."""
        target, _ = self.attention_edges
        e = len(target)
        return sp.csr_matrix((np.ones(e), (target, np.arange(e))), shape=(self.n_nodes, e))


def batch_graphs(graphs) -> GraphBatch:
    """Stack ``(MolGraph, features)`` pairs into one block-diagonal batch."""
    graphs = list(graphs)
    if not graphs:
        raise EmptyBatch("cannot batch zero graphs")
    width = graphs[0][1].shape[1]
    blocks, feats, offsets = [], [], []
    start = 0
    for k, (graph, x) in enumerate(graphs):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != width:
            raise WidthMismatch(f"graph {k} has feature width {x.shape[-1]}, expected {width}")
        if x.shape[0] != graph.n_atoms:
            raise WidthMismatch(f"graph {k} has {graph.n_atoms} atoms but {x.shape[0]} feature rows")
        if graph.n_atoms == 0:
            raise EmptyGraph(f"graph {k} has no atoms")
        blocks.append(sp.csr_matrix(graph.adjacency, dtype=np.float64))
        feats.append(x)
        offsets.append((start, graph.n_atoms))
        start += graph.n_atoms
    adjacency = sp.block_diag(blocks, format="csr")
    return GraphBatch(np.vstack(feats), adjacency, offsets)


@dataclass
class GcnLayer:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, c_in: int, c_out: int) -> GcnLayer:
        return cls(
            Tensor(glorot(rng, c_in, c_out), requires_grad=True),
            Tensor(np.zeros(c_out), requires_grad=True),
        )

    @property
    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class GatLayer:
    weights: list[Tensor]
    attention: list[Tensor]

    @classmethod
    def init(cls, rng, c_in: int, c_out: int, heads: int) -> GatLayer:
        weights, attention = [], []
        for _ in range(heads):
            weights.append(Tensor(glorot(rng, c_in, c_out), requires_grad=True))
            attention.append(Tensor(glorot(rng, 2 * c_out, 1, shape=(2 * c_out,)), requires_grad=True))
        return cls(weights, attention)

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def parameters(self) -> list[Tensor]:
        return [*self.weights, *self.attention]


def _check_width(x: Tensor, weight: Tensor):
    if x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"features of width {x.shape[1]} into layer expecting {weight.shape[0]}")


def gcn_forward(layer: GcnLayer, batch: GraphBatch, x: Tensor | None = None) -> Tensor:
    x = Tensor(batch.node_features) if x is None else x
    _check_width(x, layer.weight)
    # A_hat (X W) is cheaper than (A_hat X) W when the layer narrows
    return relu(spmm(batch.normalized_adjacency, matmul(x, layer.weight)) + layer.bias)


def gat_attention(weight: Tensor, a: Tensor, batch: GraphBatch, x: Tensor) -> tuple[Tensor, Tensor]:
    """One head: returns ``(alpha per edge, aggregated node outputs)``."""
    target, source = batch.attention_edges
    c = weight.shape[1]
    wh = matmul(x, weight)
    score_self = matmul(wh, a[:c])
    score_nbr = matmul(wh, a[c:])
    e = elu(score_self[target] + score_nbr[source])
    alpha = segment_softmax(e, target, batch.n_nodes)
    out = spmm(batch.aggregation_matrix, scale_rows(wh[source], alpha))
    return alpha, out


def gat_forward(layer: GatLayer, batch: GraphBatch, x: Tensor | None = None) -> Tensor:
    x = Tensor(batch.node_features) if x is None else x
    _check_width(x, layer.weights[0])
    total = None
    for w, a in zip(layer.weights, layer.attention):
        _, out = gat_attention(w, a, batch, x)
        total = out if total is None else total + out
    return elu(total * (1.0 / layer.heads))


def global_max_pool(node_embeddings: Tensor, offsets) -> Tensor:
    for start, length in offsets:
        if length <= 0:
            raise EmptyGraph("graph with no nodes in pooling")
    return segment_max(node_embeddings, offsets)


class GraphEncoder:
    """Stack of GCN or GAT layers followed by global max pooling."""

    def __init__(self, kind: str, layers: list):
        if kind not in ("gcn", "gat"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        self.kind = kind
        self.layers = layers

    @classmethod
    def init(cls, kind: str, rng, c_in: int, widths, heads: int = 1) -> GraphEncoder:
        layers = []
        for c_out in widths:
            layers.append(GcnLayer.init(rng, c_in, c_out) if kind == "gcn" else GatLayer.init(rng, c_in, c_out, heads))
            c_in = c_out
        return cls(kind, layers)

    @property
    def out_width(self) -> int:
        last = self.layers[-1]
        return (last.weight if self.kind == "gcn" else last.weights[0]).shape[1]

    @property
    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters]

    def node_embeddings(self, batch: GraphBatch) -> Tensor:
        h = Tensor(batch.node_features)
        step = gcn_forward if self.kind == "gcn" else gat_forward
        for layer in self.layers:
            h = step(layer, batch, h)
        return h

    def __call__(self, batch: GraphBatch) -> Tensor:
        return global_max_pool(self.node_embeddings(batch), batch.graph_offsets)


def single_graph_batch(graph: MolGraph, features: np.ndarray) -> GraphBatch:
    return batch_graphs([(graph, features)])
