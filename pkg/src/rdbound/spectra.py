"""Effective rank and effective dimension of a rescaled Gram spectrum.

A :class:`ScaledSpectrum` bundles the Gram eigenvalues ``lambda_k`` with a
single multiplier ``a`` (the squared radius is folded into ``a``), the sample
count ``n`` and the resolution ``eps``.  An eigenvalue is *counted* when

    a * lambda_k >= n * eps**2 / 2

and each counted eigenvalue contributes ``0.5 * log(8 a lambda_k / (n eps^2))``
to the effective dimension (natural log; every term is at least ``0.5*log 4``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidResolution
from .linalg import Spectrum


@dataclass(frozen=True)
class ScaledSpectrum:
    base: Spectrum
    scale_a: float
    n: int
    eps: float

    @property
    def threshold(self) -> float:
        """Eigenvalue level of ``a * lambda`` needed to be counted."""
        return self.n * self.eps**2 / 2.0


@dataclass(frozen=True)
class EffDimResult:
    r_eff: int
    d_eff: float
    per_term: tuple[float, ...]


def _check(s: ScaledSpectrum) -> None:
    if not (s.eps > 0) or not math.isfinite(s.eps):
        raise InvalidResolution(f"resolution must be positive and finite, got {s.eps}")
    if s.n < 1:
        raise ValueError(f"sample count must be >= 1, got {s.n}")
    if s.scale_a < 0:
        raise ValueError(f"scale must be nonnegative, got {s.scale_a}")


def effective_rank(s: ScaledSpectrum) -> int:
    _check(s)
    scaled = s.scale_a * s.base.values
    # values are sorted, so the qualifying set is a prefix
    return int(np.count_nonzero(scaled >= s.threshold)) if s.scale_a > 0 else 0


def effective_dimension(s: ScaledSpectrum) -> EffDimResult:
    r = effective_rank(s)
    lam = s.base.values[:r]
    terms = np.log(8.0 * s.scale_a * lam / (s.n * s.eps**2))
    return EffDimResult(r_eff=r, d_eff=0.5 * float(np.sum(terms)), per_term=tuple(float(t) for t in terms))


def exp_decay_rank(lambda0, gamma, a, R, n, eps) -> int:
    """Number of k >= 1 with ``a R^2 lambda0 exp(-gamma (k-1)) >= n eps^2 / 2``."""
    ratio = 2.0 * a * lambda0 * R**2 / (n * eps**2)
    if ratio < 1.0:
        return 0
    r = 1 + math.floor(math.log(ratio) / gamma)
    # floor of a rounded log can be off by one at exact ties
    while r > 0 and ratio * math.exp(-gamma * (r - 1)) < 1.0:
        r -= 1
    while ratio * math.exp(-gamma * r) >= 1.0:
        r += 1
    return r


def exp_decay_deff_closed_form(lambda0, gamma, a, R, n, eps) -> float:
    """Effective dimension of an exactly exponential spectrum, in closed form.

    ``lambda_k = lambda0 * exp(-gamma (k-1))`` gives
    ``(r/2) log(8 a lambda0 R^2 / (n eps^2)) - (gamma/4) r (r-1)``.
    """
    r = exp_decay_rank(lambda0, gamma, a, R, n, eps)
    if r == 0:
        return 0.0
    return 0.5 * r * math.log(8.0 * a * lambda0 * R**2 / (n * eps**2)) - 0.25 * gamma * r * (r - 1)


def low_rank_deff_upper(q, lambda0, a, R, n, eps) -> float:
    """Upper bound ``(q/2) log(e + 8 a R^2 lambda0 / (n eps^2))`` for rank <= q spectra."""
    if q == 0:
        return 0.0
    return 0.5 * q * math.log(math.e + 8.0 * a * R**2 * lambda0 / (n * eps**2))
