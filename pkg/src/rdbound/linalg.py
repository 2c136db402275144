"""Dense real linear algebra kernel.

Matrices are plain ``float64`` numpy arrays; :func:`as_matrix` is the single
validation gate (2-D, finite).  Eigenvalues are returned as :class:`Spectrum`
objects sorted nonincreasingly and tagged with their provenance (exact or
sketched).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    AsymmetryTooLarge,
    NonFinite,
    NonSquare,
    RankDeficient,
    SketchDimExceedsRows,
)

# relative tolerances
ASYMMETRY_TOL = 1e-10
PSD_CLAMP_TOL = 1e-9
QR_PIVOT_TOL = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array (no copy when possible)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFinite(f"{name}: contains NaN or Inf")
    return m


def make_rng(seed: int | np.random.Generator | None = 0) -> np.random.Generator:
    """Deterministic generator (PCG64).  Use ``rng.spawn(k)`` to split."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a symmetric matrix, sorted nonincreasingly.

    ``sketch_dim`` is ``None`` for an exact spectrum and the sketch size ``r``
    when the values come from a Gaussian sketch.
    """

    values: np.ndarray
    sketch_dim: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel().copy()
        if not np.all(np.isfinite(v)):
            raise NonFinite("spectrum contains NaN or Inf")
        if v.size > 1 and np.any(np.diff(v) > 0):
            raise ValueError("spectrum values must be sorted nonincreasingly")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def is_sketched(self) -> bool:
        return self.sketch_dim is not None

    @property
    def source(self) -> str:
        return "exact" if self.sketch_dim is None else f"sketched({self.sketch_dim})"

    @property
    def lambda_max(self) -> float:
        return float(self.values[0]) if self.values.size else 0.0

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return self.sketch_dim == other.sketch_dim and np.array_equal(self.values, other.values)

    __hash__ = None


def _clamp_small_negatives(w: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(w)) if w.size else 0.0
    w = w.copy()
    w[(w < 0) & (w >= -PSD_CLAMP_TOL * scale)] = 0.0
    return w


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    if m.shape[0] != m.shape[1]:
        raise NonSquare(f"expected a square matrix, got {m.shape}")
    fro = np.linalg.norm(m)
    if np.linalg.norm(m - m.T) > ASYMMETRY_TOL * fro:
        raise AsymmetryTooLarge("matrix is not symmetric within 1e-10 relative")
    return 0.5 * (m + m.T)


def sym_eigh(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (nonincreasing) and matching orthonormal eigenvectors."""
    s = _check_symmetric(as_matrix(m))
    if s.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    w, v = np.linalg.eigh(s)
    w, v = w[::-1], v[:, ::-1]
    return _clamp_small_negatives(w), np.ascontiguousarray(v)


def sym_eig(m) -> Spectrum:
    """Spectrum of a symmetric matrix.

    The input is symmetrized as ``(m + m.T) / 2`` after checking that the
    asymmetry is below 1e-10 relative.  Negative eigenvalues within 1e-9 of
    the largest magnitude are rounded to zero.
    """
    s = _check_symmetric(as_matrix(m))
    if s.size == 0:
        return Spectrum(np.zeros(0))
    w = np.linalg.eigvalsh(s)[::-1]
    return Spectrum(_clamp_small_negatives(w))


def spectral_norm(m, max_iters: int = 1000, tol: float = 1e-10) -> float:
    """Largest singular value by power iteration on ``m.T @ m``.

    Starts from the normalized all-ones vector.  If the converged Rayleigh
    quotient is provably not the top eigenvalue (it falls below
    ``||m||_F^2 / min(shape)``, a lower bound on ``sigma_max^2``), the
    iteration restarts once from a fixed-seed Gaussian vector.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise ValueError("spectral_norm of an empty matrix")
    fro2 = float(np.sum(a * a))
    if fro2 == 0.0:
        return 0.0
    lower = fro2 / min(a.shape)

    def run(v):
        v = v / np.linalg.norm(v)
        theta = 0.0
        for _ in range(max_iters):
            w = a.T @ (a @ v)
            theta_new = float(v @ w)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0
            v = w / nw
            if abs(theta_new - theta) <= tol * theta_new:
                return theta_new
            theta = theta_new
        return theta

    theta = run(np.ones(a.shape[1]))
    if theta < lower * (1.0 - 1e-12):
        theta = max(theta, run(make_rng(0x5EED).standard_normal(a.shape[1])))
    return float(np.sqrt(max(theta, 0.0)))


def gram(f) -> np.ndarray:
    """``F @ F.T``, symmetrized exactly."""
    a = as_matrix(f, "features")
    g = a @ a.T
    return 0.5 * (g + g.T)


def gram_spectrum(f) -> Spectrum:
    """Exact spectrum of ``F @ F.T``.

    Uses the smaller of the two Gram products; the nonzero eigenvalues agree
    and the remainder is zero-padded to ``F.shape[0]`` entries.
    """
    a = as_matrix(f, "features")
    d, n = a.shape
    if n < d:
        w = sym_eig(gram(a.T)).values
        w = np.concatenate([w, np.zeros(d - n)])
        return Spectrum(np.maximum(w, 0.0))
    return Spectrum(np.maximum(sym_eig(gram(a)).values, 0.0))


def gaussian_sketch(r: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``r x d`` matrix with i.i.d. N(0, 1/r) entries."""
    return rng.standard_normal((r, d)) / np.sqrt(r)


def sketched_gram_spectrum(f, r: int, rng: np.random.Generator, omega=None) -> Spectrum:
    """Spectrum of ``(Omega F)(Omega F).T`` for a Gaussian sketch ``Omega``.

    ``omega`` overrides the random draw (pass the identity to recover the
    exact spectrum when ``r == d``).
    """
    a = as_matrix(f, "features")
    d = a.shape[0]
    if not 1 <= r <= d:
        raise SketchDimExceedsRows(f"sketch dim r={r} must lie in [1, {d}]")
    om = gaussian_sketch(r, d, rng) if omega is None else as_matrix(omega, "omega")
    if om.shape != (r, d):
        raise ValueError(f"omega must have shape {(r, d)}, got {om.shape}")
    vals = gram_spectrum(om @ a).values
    return Spectrum(vals, sketch_dim=r)


def qr_orthonormalize(m) -> np.ndarray:
    """Orthonormal basis for the column span of ``m`` (thin QR).

    Column signs are fixed so that ``diag(R) > 0``.
    """
    a = as_matrix(m)
    d, r = a.shape
    if r > d:
        raise RankDeficient(f"cannot orthonormalize {r} columns in dimension {d}")
    q, rr = np.linalg.qr(a)
    diag = np.diag(rr)
    col_norms = np.linalg.norm(a, axis=0)
    if np.any(np.abs(diag) <= QR_PIVOT_TOL * col_norms) or np.any(col_norms == 0):
        raise RankDeficient("columns are linearly dependent")
    return q * np.sign(diag)


def sqrtm_psd(sigma) -> np.ndarray:
    """Symmetric square root of a PSD matrix (small negatives clipped)."""
    w, v = sym_eigh(sigma)
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
