"""Subspace geometry on the Grassmannian.

Subspaces are represented by orthonormal frames; the projector ``V V^T`` is
the frame-independent object every distance is computed from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, NotPsd, RankDeficient, SpectrumTooShort
from .linalg import Spectrum, as_matrix, qr_orthonormalize, spectral_norm, sqrtm_psd, sym_eigh
from .network import LayerFeatureSet, LipschitzSurrogates, FcnModel, frobenius_norm_all
from .bounds import FROBENIUS_FLOOR

COVER_CONSTANT = 72.0**2
PINV_CUTOFF = 1e-12
MIN_HITS = 30


@dataclass(frozen=True)
class Subspace:
    frame: np.ndarray

    def __post_init__(self):
        f = as_matrix(self.frame, "frame")
        if f.shape[1] > f.shape[0]:
            raise DimensionMismatch(f"frame {f.shape} has more columns than rows")
        if f.shape[1] and np.linalg.norm(f.T @ f - np.eye(f.shape[1])) > 1e-10:
            raise ValueError("frame columns are not orthonormal")
        object.__setattr__(self, "frame", f)

    @classmethod
    def span(cls, m) -> "Subspace":
        return cls(qr_orthonormalize(m))

    @property
    def ambient_dim(self) -> int:
        return self.frame.shape[0]

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.T

    def complement_frame(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement."""
        d, r = self.frame.shape
        u, _, _ = np.linalg.svd(self.frame, full_matrices=True)
        return u[:, r:]


def _check_psd(sigma: np.ndarray) -> None:
    w, _ = sym_eigh(sigma)
    if w.size and w[-1] < -1e-9 * max(w[0], 0.0):
        raise NotPsd(f"matrix has eigenvalue {w[-1]:.3g} below zero")


def ellipsoidal_proj_metric(v1: Subspace, v2: Subspace, sigma=None) -> float:
    """``|| Sigma^{1/2} (P_1 - P_2) ||_op``; ``sigma=None`` means the identity."""
    d = v1.ambient_dim
    if v2.ambient_dim != d:
        raise DimensionMismatch("subspaces live in different ambient dimensions")
    diff = v1.projector - v2.projector
    if sigma is None:
        return float(np.linalg.norm(diff, 2))
    s = as_matrix(sigma, "sigma")
    if s.shape != (d, d):
        raise DimensionMismatch(f"sigma has shape {s.shape}, expected {(d, d)}")
    _check_psd(s)
    return spectral_norm(sqrtm_psd(s) @ diff, tol=1e-14)


def graph_chart(vbar: Subspace, x) -> Subspace:
    """Span of ``[Vbar, Vbar_perp] @ [[I_r], [X]]`` for ``X`` of shape ``(d-r) x r``."""
    d, r = vbar.frame.shape
    if r >= d or np.size(x) != (d - r) * r:
        raise DimensionMismatch(f"chart coordinates must be {(d - r, r)} for Gr({d},{r})")
    x = as_matrix(np.reshape(x, (d - r, r)), "chart coordinates")
    return Subspace.span(vbar.frame + vbar.complement_frame() @ x)


def sine_tangent_check(vbar: Subspace, x) -> tuple[float, float]:
    """(measured projection distance, ``||X|| / sqrt(1 + ||X||^2)``)."""
    v = graph_chart(vbar, x)
    rho = ellipsoidal_proj_metric(v, vbar)
    t = float(np.linalg.norm(np.reshape(x, (vbar.ambient_dim - vbar.dim, vbar.dim)), 2))
    return rho, t / math.sqrt(1.0 + t * t)


def sample_grassmannian(d: int, r: int, rng: np.random.Generator) -> Subspace:
    """Uniform draw from Gr(d, r): orthonormalized Gaussian frame."""
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    for _ in range(8):
        try:
            return Subspace(qr_orthonormalize(rng.standard_normal((d, r))))
        except RankDeficient:
            continue
    raise RankDeficient("eight consecutive rank-deficient Gaussian draws")


def _batch_frames(d, r, count, rng):
    g = rng.standard_normal((count, d, r))
    q, _ = np.linalg.qr(g)
    return q


@dataclass(frozen=True)
class MassEstimate:
    mass_hat: float
    log_inv_mass: float  # math.inf when no sample hit the ball
    hits: int
    samples: int

    @property
    def unreliable(self) -> bool:
        return self.hits < MIN_HITS


def ball_mass_estimate(center: Subspace, sigma, eps: float, samples: int,
                       rng: np.random.Generator, batch: int = 20000) -> MassEstimate:
    """Monte Carlo prior mass of the ellipsoidal projection ball of radius ``eps``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    d, r = center.frame.shape
    s = np.eye(d) if sigma is None else as_matrix(sigma, "sigma")
    _check_psd(s)
    root = sqrtm_psd(s)
    p0 = center.projector
    hits = 0
    done = 0
    while done < samples:
        k = min(batch, samples - done)
        q = _batch_frames(d, r, k, rng)
        diff = q @ np.swapaxes(q, 1, 2) - p0
        m = root @ diff
        top = np.linalg.norm(m, ord=2, axis=(1, 2))
        hits += int(np.count_nonzero(top <= eps))
        done += k
    mass = hits / samples
    return MassEstimate(mass, -math.log(mass) if hits else math.inf, hits, samples)


def grassmannian_cover_rhs(d: int, r: int, sigma_spectrum: Spectrum, eps: float,
                           c: float = COVER_CONSTANT) -> float:
    """Covering bound on ``log 1/mu(B(V, eps))`` for the ellipsoidal projection ball."""
    lam = sigma_spectrum.values
    if r == 0 or r == d:
        return 0.0
    if lam.size < max(r, d - r):
        raise SpectrumTooShort(f"need {max(r, d - r)} eigenvalues, got {lam.size}")
    e2 = eps * eps

    def term(k):
        return float(np.sum(np.log(c * np.maximum(lam[:k], e2) / e2)))

    return 0.5 * (d - r) * term(r) + 0.5 * r * term(d - r)


@dataclass(frozen=True)
class IsoLayer:
    layer: int
    theta: float
    kappa_hat: float
    b_sub_hat: float
    active_dim: int

    @property
    def degenerate(self) -> bool:
        return self.active_dim == 0


@dataclass(frozen=True)
class IsoCertificate:
    per_layer: tuple[IsoLayer, ...]
    eps: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "per_layer": [
                {"layer": t.layer, "theta": t.theta, "kappa_hat": t.kappa_hat,
                 "b_sub_hat": t.b_sub_hat, "active_dim": t.active_dim,
                 "degenerate_active_subspace": t.degenerate}
                for t in self.per_layer
            ],
        }


def resolution_threshold(n: int, eps: float, depth: int, m_bar: float, r_w: float) -> float:
    """``n eps^2 / (2 L m_bar^2 R_W^2)``; eigenvalues at or above it are active."""
    return n * eps * eps / (2.0 * depth * m_bar * m_bar * r_w * r_w)


def iso_check(feats_s: LayerFeatureSet, feats_sp: LayerFeatureSet, model: FcnModel,
              lip: LipschitzSurrogates, eps: float) -> IsoCertificate:
    """Empirical subspace-isomorphism constants for one (weights, eps) pair.

    For feature layer ``j`` the active projector ``P`` spans the eigenvectors
    of ``Gamma_j^S`` with eigenvalue at least ``theta_j``.  ``kappa_hat`` is
    the largest generalized eigenvalue of ``P Gamma^S' P`` against
    ``P Gamma^S P``, and ``b_sub_hat = ||Q Gamma^S' Q||_op / theta_j``.
    """
    L = model.depth
    if len(feats_s) != L + 1 or len(feats_sp) != L + 1:
        raise DimensionMismatch("feature sets do not match the model depth")
    n = feats_s.n
    if feats_sp.n != n:
        raise DimensionMismatch(f"samples have different sizes: {n} vs {feats_sp.n}")
    r_w = max(frobenius_norm_all(model), FROBENIUS_FLOOR)
    out = []
    with np.errstate(over="ignore", divide="ignore"):
        for j in range(L):
            fs, fp = feats_s[j], feats_sp[j]
            if fs.shape[0] != fp.shape[0]:
                raise DimensionMismatch(f"layer {j} widths differ")
            gs, gp = fs @ fs.T, fp @ fp.T
            gs, gp = 0.5 * (gs + gs.T), 0.5 * (gp + gp.T)
            theta = resolution_threshold(n, eps, L, lip.m_bar[j], r_w)
            w, v = sym_eigh(gs)
            active = w >= theta
            if w.size and w[0] > 0:
                active &= w > PINV_CUTOFF * w[0]
            else:
                active[:] = False
            k = int(np.count_nonzero(active))
            if k:
                u = v[:, active]
                whiten = u / np.sqrt(w[active])
                kappa = float(sym_eigh(whiten.T @ gp @ whiten)[0][0])
            else:
                kappa = 0.0
            q = np.eye(gs.shape[0]) - v[:, active] @ v[:, active].T
            qgq = q @ gp @ q
            b_sub = float(sym_eigh(0.5 * (qgq + qgq.T))[0][0]) / theta if gs.size else 0.0
            out.append(IsoLayer(j, float(theta), kappa, max(b_sub, 0.0), k))
    return IsoCertificate(tuple(out), float(eps))
