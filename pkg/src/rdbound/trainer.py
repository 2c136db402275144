"""Deterministic desk-scale trainer and synthetic data.

Mini-batch SGD with heavy-ball momentum and coupled weight decay::

    v <- mu * v - lr * (g + wd * w)
    w <- w + v

Batches are drawn without replacement from a per-epoch permutation of a seeded
generator, so identical configs produce bitwise-identical weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DivergedLoss, ShapeMismatch
from .linalg import as_matrix, make_rng
from .network import Activation, FcnModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 128
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during (0-based) ``epoch``."""
        k = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor**k


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = as_matrix(self.inputs, "inputs")
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        if y.size != x.shape[1]:
            raise ShapeMismatch(f"{y.size} labels for {x.shape[1]} samples")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.labels.size

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[:, idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class TrainSnapshot:
    epoch: int
    model: FcnModel
    train_error: float
    loss: float
    lr: float


@dataclass
class TrainResult:
    model: FcnModel
    snapshots: list[TrainSnapshot] = field(default_factory=list)
    lr_log: list[float] = field(default_factory=list)


def kaiming_uniform_init(widths: Sequence[int], rng, activations=None) -> FcnModel:
    """Kaiming-uniform fan-in init with ReLU gain: U(-b, b), b = sqrt(6 / fan_in)."""
    rng = make_rng(rng)
    ws = []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        b = np.sqrt(6.0 / d_in)
        ws.append(rng.uniform(-b, b, size=(d_out, d_in)))
    return FcnModel(ws, activations)


def synth_blobs(n: int, d0: int, num_classes: int, spread: float, seed: int = 0) -> LabeledDataset:
    """Balanced Gaussian blobs around the scaled simplex vertices ``4*spread*e_c``.

    Requires ``d0 >= num_classes``.  Class ``c`` receives every sample whose
    index is congruent to ``c`` modulo ``num_classes``.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if d0 < num_classes:
        raise ValueError("d0 must be at least num_classes for simplex means")
    rng = make_rng(seed)
    labels = np.arange(n) % num_classes
    means = np.zeros((d0, num_classes))
    means[np.arange(num_classes), np.arange(num_classes)] = 4.0 * spread
    x = means[:, labels] + spread * rng.standard_normal((d0, n))
    return LabeledDataset(x, labels, num_classes)


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    z = logits - logits.max(axis=0, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=0, keepdims=True)
    n = labels.size
    logp = z[labels, np.arange(n)] - np.log(ez.sum(axis=0))
    return -float(np.mean(logp)), p


def loss_and_grads(model: FcnModel, x: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. every weight matrix."""
    return _loss_and_grads(model.weights, model.activations, x, labels)


def _loss_and_grads(weights, activations, x, labels):
    feats = [x]
    pre = []
    for w, act in zip(weights, activations):
        z = w @ feats[-1]
        pre.append(z)
        feats.append(act(z))
    loss, p = _softmax_xent(feats[-1], labels)
    n = labels.size
    delta = p
    delta[labels, np.arange(n)] -= 1.0
    delta /= n
    grads = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        if activations[l] is Activation.RELU:
            delta = delta * (pre[l] > 0)
        grads[l] = delta @ feats[l].T
        if l:
            delta = weights[l].T @ delta
    return loss, grads


def evaluate(model: FcnModel, data: LabeledDataset) -> tuple[float, float]:
    """(mean loss, classification error) on ``data``."""
    f = data.inputs
    for w, act in zip(model.weights, model.activations):
        f = act(w @ f)
    loss, _ = _softmax_xent(f, data.labels)
    err = float(np.mean(np.argmax(f, axis=0) != data.labels))
    return loss, err


def train(
    model: FcnModel,
    data: LabeledDataset,
    cfg: TrainConfig,
    snapshot_epochs: Sequence[int] = (),
    trainable: Optional[Sequence[int]] = None,
) -> TrainResult:
    """Train ``model`` and record snapshots after the requested epochs.

    Epoch ``0`` in ``snapshot_epochs`` means the initial model.  ``trainable``
    restricts updates to the given 0-based layer indices.
    """
    if model.widths[-1] != data.num_classes:
        raise ShapeMismatch(f"model has {model.widths[-1]} outputs for {data.num_classes} classes")
    if model.widths[0] != data.inputs.shape[0]:
        raise ShapeMismatch("input dimension does not match the first layer")
    train_set = set(range(model.depth)) if trainable is None else set(trainable)
    wanted = set(snapshot_epochs)
    rng = make_rng(cfg.seed)
    ws = [np.array(w) for w in model.weights]
    vs = [np.zeros_like(w) for w in ws]
    result = TrainResult(model=model)

    def snap(epoch, lr):
        m = model.with_weights(ws)
        loss, err = evaluate(m, data)
        if not np.isfinite(loss):
            raise DivergedLoss(f"loss is {loss} at epoch {epoch}")
        result.snapshots.append(TrainSnapshot(epoch, m, err, loss, lr))

    if 0 in wanted:
        snap(0, cfg.lr_at(0))
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        result.lr_log.append(lr)
        perm = rng.permutation(data.n)
        for start in range(0, data.n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = _loss_and_grads(ws, model.activations, data.inputs[:, idx], data.labels[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} in epoch {epoch + 1}")
            for l in sorted(train_set):
                vs[l] = cfg.momentum * vs[l] - lr * (grads[l] + cfg.weight_decay * ws[l])
                ws[l] = ws[l] + vs[l]
        logger.debug("epoch %d lr %.3g", epoch + 1, lr)
        if epoch + 1 in wanted:
            snap(epoch + 1, lr)
    result.model = model.with_weights(ws) if cfg.epochs else model
    return result
