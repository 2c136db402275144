"""Fully connected bias-free ReLU networks and their layerwise feature spectra.

Samples are stored as columns: the input ``X`` is ``d0 x n`` and layer ``l``
features are ``F_l = act_l(W_l @ F_{l-1})`` with shape ``d_l x n``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import NonFinite, ShapeMismatch
from .linalg import Spectrum, as_matrix, gram_spectrum, sketched_gram_spectrum, spectral_norm

SKETCH_THRESHOLD = 8192
SKETCH_DIVISOR = 8


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(z, 0.0) if self is Activation.RELU else z


def default_activations(num_layers: int) -> tuple[Activation, ...]:
    """ReLU on hidden layers, identity on the output layer."""
    return (Activation.RELU,) * (num_layers - 1) + (Activation.IDENTITY,)


@dataclass(frozen=True)
class FcnModel:
    weights: tuple[np.ndarray, ...]
    activations: tuple[Activation, ...]

    def __init__(self, weights: Sequence, activations: Optional[Sequence] = None):
        ws = []
        for i, w in enumerate(weights):
            w = np.array(as_matrix(w, f"W{i + 1}"), dtype=np.float64)
            w.setflags(write=False)
            ws.append(w)
        if not ws:
            raise ShapeMismatch("a network needs at least one layer")
        for i in range(1, len(ws)):
            if ws[i].shape[1] != ws[i - 1].shape[0]:
                raise ShapeMismatch(
                    f"W{i + 1} has {ws[i].shape[1]} columns but W{i} has {ws[i - 1].shape[0]} rows"
                )
        acts = default_activations(len(ws)) if activations is None else tuple(Activation(a) for a in activations)
        if len(acts) != len(ws):
            raise ShapeMismatch(f"{len(acts)} activations for {len(ws)} layers")
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "activations", acts)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def with_weights(self, weights: Sequence) -> "FcnModel":
        return FcnModel(weights, self.activations)

    def __eq__(self, other):
        if not isinstance(other, FcnModel):
            return NotImplemented
        return self.activations == other.activations and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.weights, other.weights)
        ) and self.depth == other.depth

    __hash__ = None


@dataclass(frozen=True)
class LayerFeatureSet:
    """``features[0]`` is the input, ``features[l]`` the output of layer ``l``."""

    features: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return self.features[0].shape[1]

    def __len__(self):
        return len(self.features)

    def __getitem__(self, i):
        return self.features[i]

    def concat(self, other: "LayerFeatureSet") -> "LayerFeatureSet":
        """Column-wise concatenation ``[F^S, F^S']``; its Grams add."""
        if len(self) != len(other):
            raise ShapeMismatch("feature sets have different depths")
        return LayerFeatureSet(tuple(np.hstack([a, b]) for a, b in zip(self.features, other.features)))


@dataclass(frozen=True)
class LipschitzSurrogates:
    """``m_bar[l-1] = prod_{i>l} ||W_i||_op`` for layers ``l = 1..L``; the last entry is 1."""

    m_bar: tuple[float, ...]
    op_norms: tuple[float, ...]


def forward_with_hooks(model: FcnModel, x) -> LayerFeatureSet:
    x = as_matrix(x, "inputs")
    if x.shape[0] != model.widths[0]:
        raise ShapeMismatch(f"input has {x.shape[0]} rows, model expects {model.widths[0]}")
    feats = [x]
    with np.errstate(over="ignore", invalid="ignore"):
        for l, (w, act) in enumerate(zip(model.weights, model.activations), start=1):
            f = act(w @ feats[-1])
            if not np.all(np.isfinite(f)):
                raise NonFinite(f"overflow in the forward pass at layer {l}")
            feats.append(f)
    return LayerFeatureSet(tuple(feats))


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("RD_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def layer_gram_spectra(
    feats: LayerFeatureSet,
    sketch_threshold: int = SKETCH_THRESHOLD,
    sketch_divisor: int = SKETCH_DIVISOR,
    rng: Optional[np.random.Generator] = None,
) -> list[Spectrum]:
    """Spectra of ``F_{l-1} F_{l-1}^T`` for ``l = 1..L``.

    Layers wider than ``sketch_threshold`` use a Gaussian sketch of size
    ``min(sketch_threshold, d // sketch_divisor)``.  Each layer draws from its
    own child generator, so results do not depend on thread scheduling.
    """
    inputs = feats.features[:-1]
    rng = np.random.default_rng(0) if rng is None else rng
    children = rng.spawn(len(inputs))

    def one(args):
        f, child = args
        d = f.shape[0]
        if d <= sketch_threshold:
            return gram_spectrum(f)
        r = max(1, min(sketch_threshold, d // sketch_divisor))
        return sketched_gram_spectrum(f, r, child)

    jobs = list(zip(inputs, children))
    workers = min(_max_workers(), len(jobs))
    if workers <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, jobs))


def lipschitz_surrogates(model: FcnModel, tol: float = 1e-8) -> LipschitzSurrogates:
    norms = [spectral_norm(w, tol=tol * 1e-2) for w in model.weights]
    m_bar = [1.0] * model.depth
    for l in range(model.depth - 2, -1, -1):
        m_bar[l] = norms[l + 1] * m_bar[l + 1]
    return LipschitzSurrogates(tuple(m_bar), tuple(norms))


def frobenius_norm_all(model: FcnModel) -> float:
    return float(np.sqrt(sum(float(np.sum(w * w)) for w in model.weights)))


def param_count(model: FcnModel) -> int:
    return int(sum(w.size for w in model.weights))
