"""Adam optimization with early stopping on validation ROC AUC."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Corpus, SynergyRecord, make_batches
from .metrics import evaluate
from .net import DeepDDSModel, forward_batch, loss
from .tensor import ShapeMismatch, backward, no_grad

__all__ = [
    "TrainConfig",
    "TrainReport",
    "EpochRecord",
    "AdamState",
    "TrainingError",
    "EmptyTrainSet",
    "NonFiniteLoss",
    "adam_step",
    "fit",
    "predict_records",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class EmptyTrainSet(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    pass


@dataclass
class TrainConfig:
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

    def validate(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.lam < 0 or self.patience < 0:
            raise ValueError("lam and patience must be non-negative")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update of the arrays in ``params``, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeMismatch(f"gradient {g.shape} for parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: dict


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = -math.inf
    seed: int = 0
    dropout_seed: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d

    def log_lines(self) -> list[str]:
        return [f"epoch {e.epoch} loss {e.train_loss:.6f} val_auc {e.val['roc_auc']:.6f}" for e in self.epochs]


def predict_records(model: DeepDDSModel, corpus: Corpus, records, swap: bool = False, batch_size: int = 256) -> np.ndarray:
    """Eval-mode synergist probability for each record (drug slots swapped if ``swap``)."""
    records = list(records)
    out = np.empty(len(records))
    with no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            a = [corpus.drug_input(r.drug_b if swap else r.drug_a) for r in chunk]
            b = [corpus.drug_input(r.drug_a if swap else r.drug_b) for r in chunk]
            cells = corpus.cell_matrix([r.cell_id for r in chunk])
            out[start:start + len(chunk)] = forward_batch(model, a, b, cells, "eval").data[:, 1]
    return out


def _f32_state(model: DeepDDSModel) -> dict[str, np.ndarray]:
    return {k: v.astype(np.float32).astype(np.float64) for k, v in model.state().items()}


def fit(model: DeepDDSModel, corpus: Corpus, train_records, val_records, config: TrainConfig, on_epoch=None):
    """Train ``model`` in place and leave it holding the best-epoch parameters.

    Validation is scored on a float32-rounded copy of the parameters, so the
    parameters restored at the end (and written to checkpoints) reproduce the
    reported best validation AUC exactly.
    """
    config.validate()
    train_records: list[SynergyRecord] = list(train_records)
    val_records = list(val_records)
    if not train_records:
        raise EmptyTrainSet("no training records")
    if not val_records:
        raise EmptyTrainSet("no validation records")
    corpus.check_records(train_records)
    corpus.check_records(val_records)
    val_labels = np.array([r.label for r in val_records])

    started = time.perf_counter()
    dropout_seed = [config.seed, 1]
    dropout_rng = np.random.default_rng(dropout_seed)
    params = model.parameters
    state = AdamState.zeros_like([p.data for p in params])
    report = TrainReport(seed=config.seed, dropout_seed=dropout_seed, config=asdict(config))
    best_state = None
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(train_records, config.order_augment, config.batch_size, [config.seed, 0, epoch])
        total, count = 0.0, 0
        for bi, batch in enumerate(batches):
            drugs_a = [corpus.drug_input(d) for d in batch.drug_a]
            drugs_b = [corpus.drug_input(d) for d in batch.drug_b]
            probs = forward_batch(model, drugs_a, drugs_b, corpus.cell_matrix(batch.cell_id), "train", dropout_rng)
            objective = loss(probs, batch.labels, model, config.lam)
            value = objective.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
            model.zero_grad()
            backward(objective)
            adam_step([p.data for p in params], [p.grad for p in params], state,
                      config.learning_rate, config.beta1, config.beta2, config.eps)
            total += value * len(batch)
            count += len(batch)

        live = model.state()
        snapshot = _f32_state(model)
        model.load_state(snapshot)
        val_metrics = evaluate(predict_records(model, corpus, val_records), val_labels).to_dict()
        model.load_state(live)

        report.epochs.append(EpochRecord(epoch, total / count, val_metrics))
        log.info("epoch %d loss %.6f val_auc %.6f", epoch, total / count, val_metrics["roc_auc"])
        if on_epoch is not None:
            on_epoch(report.epochs[-1])
        if val_metrics["roc_auc"] > report.best_val_auc:
            report.best_val_auc = val_metrics["roc_auc"]
            report.best_epoch = epoch
            best_state = snapshot
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.patience:
            break

    model.load_state(best_state)
    report.wall_time = time.perf_counter() - started
    return model, report
