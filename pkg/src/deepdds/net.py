"""The full synergy network: shared drug encoder, cell-line MLP, FC head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .chem import N_ATOM_FEATURES, MolGraph, featurize
from .data import CellLineProfile, NormalizationStats
from .gnn import GraphBatch, GraphEncoder, batch_graphs, glorot
from .tensor import ShapeMismatch, Tensor, concat, log, matmul, mul, no_grad, pick, relu, softmax_rows

__all__ = [
    "ModelConfig",
    "DenseLayer",
    "DeepDDSModel",
    "InvalidWidth",
    "GeneMismatch",
    "LengthMismatch",
    "init_model",
    "forward",
    "forward_batch",
    "loss",
]


class InvalidWidth(ValueError):
    pass


class GeneMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass
class ModelConfig:
    encoder: str = "gat"
    gcn_widths: tuple[int, ...] = (1024, 512, 156)
    gat_widths: tuple[int, ...] = (1024, 512)
    gat_heads: int = 10
    mlp_widths: tuple[int, ...] = (2048, 512)
    fc_widths: tuple[int, ...] = (1024, 512, 128)
    dropout: float = 0.2

    def __post_init__(self):
        for name in ("gcn_widths", "gat_widths", "mlp_widths", "fc_widths"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))

    @property
    def graph_widths(self) -> tuple[int, ...]:
        return self.gcn_widths if self.encoder == "gcn" else self.gat_widths

    def validate(self):
        if self.encoder not in ("gcn", "gat"):
            raise ValueError(f"encoder must be 'gcn' or 'gat', got {self.encoder!r}")
        for name in ("graph_widths", "mlp_widths", "fc_widths"):
            widths = getattr(self, name)
            if not widths or any(w <= 0 for w in widths):
                raise InvalidWidth(f"{name} must be non-empty positive widths, got {widths}")
        if self.encoder == "gat" and self.gat_heads <= 0:
            raise InvalidWidth(f"gat_heads must be positive, got {self.gat_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class DenseLayer:
    weight: Tensor
    bias: Tensor
    activation: str = "relu"

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, activation: str = "relu") -> DenseLayer:
        return cls(
            Tensor(glorot(rng, n_in, n_out), requires_grad=True),
            Tensor(np.zeros(n_out), requires_grad=True),
            activation,
        )

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight) + self.bias
        return relu(out) if self.activation == "relu" else out


def _dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


@dataclass
class DeepDDSModel:
    config: ModelConfig
    encoder: GraphEncoder
    cell_mlp: list[DenseLayer]
    predictor: list[DenseLayer]
    output: DenseLayer
    gene_list: tuple[str, ...]
    normalization: NormalizationStats | None = None
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def drug_width(self) -> int:
        return self.encoder.out_width

    @property
    def cell_width(self) -> int:
        return self.cell_mlp[-1].weight.shape[1]

    @property
    def predictor_input_width(self) -> int:
        return self.predictor[0].weight.shape[0]

    def named_parameters(self) -> list[tuple[str, Tensor, bool]]:
        """``(name, tensor, is_weight)`` in a stable order; biases are not weights."""
        out = []
        for li, layer in enumerate(self.encoder.layers):
            if self.encoder.kind == "gcn":
                out.append((f"encoder.{li}.weight", layer.weight, True))
                out.append((f"encoder.{li}.bias", layer.bias, False))
            else:
                for h, (w, a) in enumerate(zip(layer.weights, layer.attention)):
                    out.append((f"encoder.{li}.head{h}.weight", w, True))
                    out.append((f"encoder.{li}.head{h}.attention", a, True))
        for prefix, layers in (("cell_mlp", self.cell_mlp), ("predictor", self.predictor)):
            for li, layer in enumerate(layers):
                out.append((f"{prefix}.{li}.weight", layer.weight, True))
                out.append((f"{prefix}.{li}.bias", layer.bias, False))
        out.append(("output.weight", self.output.weight, True))
        out.append(("output.bias", self.output.bias, False))
        return out

    @property
    def parameters(self) -> list[Tensor]:
        return [t for _, t, _ in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters:
            p.grad = None

    def cell_embedding(self, cells: Tensor, train: bool, rng) -> Tensor:
        h = cells
        for layer in self.cell_mlp:
            h = layer(h)
            if train:
                h = _dropout(h, self.config.dropout, rng)
        return h

    def logits(self, drugs: GraphBatch, idx_a, idx_b, cells: np.ndarray, train: bool = False, rng=None) -> Tensor:
        """Unnormalized scores for samples ``(drugs[idx_a[i]], drugs[idx_b[i]], cells[i])``.

        Each distinct drug graph in ``drugs`` is encoded once and shared by
        both slots.
        """
        cells = np.asarray(cells, dtype=np.float64)
        if cells.ndim != 2 or cells.shape[1] != len(self.gene_list):
            raise GeneMismatch(f"cell features of shape {cells.shape}, model expects {len(self.gene_list)} genes")
        if drugs.node_features.shape[1] != self.encoder_input_width:
            raise ShapeMismatch(f"atom features of width {drugs.node_features.shape[1]}")
        if train and rng is None:
            raise ValueError("train mode needs a dropout rng")
        pooled = self.encoder(drugs)
        ra = pooled[np.asarray(idx_a, dtype=np.int64)]
        rb = pooled[np.asarray(idx_b, dtype=np.int64)]
        h = concat([ra, rb, self.cell_embedding(Tensor(cells), train, rng)], axis=1)
        for layer in self.predictor:
            h = layer(h)
            if train:
                h = _dropout(h, self.config.dropout, rng)
        return self.output(h)

    @property
    def encoder_input_width(self) -> int:
        first = self.encoder.layers[0]
        return (first.weight if self.encoder.kind == "gcn" else first.weights[0]).shape[0]

    def round_parameters_to_f32(self):
        for p in self.parameters:
            p.data = p.data.astype(np.float32).astype(np.float64)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t, _ in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]):
        for name, t, _ in self.named_parameters():
            if state[name].shape != t.shape:
                raise ShapeMismatch(f"{name}: stored {state[name].shape}, model {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)


def init_model(config: ModelConfig, gene_list, seed: int = 0, normalization: NormalizationStats | None = None) -> DeepDDSModel:
    """Glorot-uniform weights and zero biases drawn from ``seed``."""
    config.validate()
    gene_list = tuple(gene_list)
    if not gene_list:
        raise InvalidWidth("gene list is empty")
    rng = np.random.default_rng(seed)
    encoder = GraphEncoder.init(config.encoder, rng, N_ATOM_FEATURES, config.graph_widths, config.gat_heads)
    cell_mlp = []
    n_in = len(gene_list)
    for w in config.mlp_widths:
        cell_mlp.append(DenseLayer.init(rng, n_in, w))
        n_in = w
    predictor = []
    n_in = 2 * encoder.out_width + config.mlp_widths[-1]
    for w in config.fc_widths:
        predictor.append(DenseLayer.init(rng, n_in, w))
        n_in = w
    output = DenseLayer.init(rng, n_in, 2, activation="none")
    return DeepDDSModel(config, encoder, cell_mlp, predictor, output, gene_list, normalization, seed)


def _unique_drug_batch(drugs_a, drugs_b):
    """Batch the distinct graphs among both slots; return index arrays into it."""
    index: dict[int, int] = {}
    entries = []
    idx_a, idx_b = [], []
    for slot, drugs in ((idx_a, drugs_a), (idx_b, drugs_b)):
        for graph, feats in drugs:
            key = id(graph)
            if key not in index:
                index[key] = len(entries)
                entries.append((graph, feats))
            slot.append(index[key])
    return batch_graphs(entries), np.array(idx_a), np.array(idx_b)


def forward_batch(model: DeepDDSModel, drugs_a, drugs_b, cells: np.ndarray, mode: str = "eval", rng=None) -> Tensor:
    """Class probabilities ``(antagonist, synergist)`` for parallel lists of
    ``(MolGraph, features)`` pairs and a matrix of normalized cell profiles."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if len(drugs_a) != len(drugs_b) or len(drugs_a) != len(cells):
        raise LengthMismatch("drug and cell inputs differ in length")
    batch, idx_a, idx_b = _unique_drug_batch(drugs_a, drugs_b)
    return softmax_rows(model.logits(batch, idx_a, idx_b, cells, train=(mode == "train"), rng=rng))


def forward(model: DeepDDSModel, drug_a: MolGraph, drug_b: MolGraph, cell: CellLineProfile, mode: str = "eval", rng=None) -> np.ndarray:
    if tuple(cell.genes) != model.gene_list:
        raise GeneMismatch(f"profile for {cell.cell_id} is not aligned to the model gene list")
    if not cell.normalized:
        raise GeneMismatch(f"profile for {cell.cell_id} has not been normalized")
    a = (drug_a, featurize(drug_a))
    b = a if drug_b is drug_a else (drug_b, featurize(drug_b))
    cells = cell.values[None, :]
    if mode == "eval":
        with no_grad():
            probs = forward_batch(model, [a], [b], cells, mode)
    else:
        probs = forward_batch(model, [a], [b], cells, mode, rng)
    return probs.data[0]


def l2_penalty(model: DeepDDSModel) -> Tensor:
    total = None
    for _, t, is_weight in model.named_parameters():
        if is_weight:
            sq = mul(t, t).sum()
            total = sq if total is None else total + sq
    return total


def loss(predictions: Tensor, labels, model: DeepDDSModel | None = None, lam: float = 0.0) -> Tensor:
    """Mean negative log-likelihood of the true class plus ``lam * sum ||W||^2``."""
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.ndim != 2 or predictions.shape[0] != labels.shape[0]:
        raise LengthMismatch(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    nll = -log(pick(predictions, labels)).mean()
    if model is None or lam == 0.0:
        return nll
    return nll + l2_penalty(model) * lam
