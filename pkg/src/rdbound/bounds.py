"""Observed-sample Riemannian Dimension, the bounds built on it, and baselines.

For layer ``l`` (1-based) with Gram spectrum ``lambda_k`` of
``Gamma_{l-1} = F_{l-1} F_{l-1}^T`` the multiplier is

    a_l = L * m_bar_l**2 * R_W**2,     R_W = ||W||_F  (floored at 1e-300)

and the layer contributes ``(d_l + d_{l-1}) * d_eff(a_l, Gamma_{l-1}, eps)``
plus, optionally, ``0.5 * log(d_{l-1} n)``.  All absolute constants are 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidResolution, MismatchedLayers
from .linalg import Spectrum, make_rng
from .network import (
    SKETCH_DIVISOR,
    SKETCH_THRESHOLD,
    FcnModel,
    LipschitzSurrogates,
    forward_with_hooks,
    frobenius_norm_all,
    layer_gram_spectra,
    lipschitz_surrogates,
    param_count,
)
from .spectra import ScaledSpectrum, effective_dimension

FROBENIUS_FLOOR = 1e-300
REFINE_POINTS = 32


@dataclass(frozen=True)
class RdConfig:
    beta: float = 1.0
    n: Optional[int] = None
    eps: Optional[float] = None  # None: search
    eps_search_steps: int = 500
    alpha_grid: int = 64
    include_log_terms: bool = True
    c_sub: float = 1.0
    delta: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.eps is not None and not self.eps > 0:
            raise InvalidResolution(f"eps must be positive, got {self.eps}")
        if self.alpha_grid < 2:
            raise ValueError("alpha_grid must be >= 2")


@dataclass(frozen=True)
class LayerTerm:
    layer: int
    d_in: int
    d_out: int
    scale_a: float
    r_eff: int
    d_eff: float
    d_eff_combined: float
    inner_term: float
    outer_term: float
    log_term: float
    lambda_max: float
    spectrum_source: str = "exact"

    @property
    def contribution(self) -> float:
        return self.d_eff_combined + self.log_term


@dataclass(frozen=True)
class Baselines:
    param_count: int
    vc_proxy: float
    spectral_bound: float
    bartlett_bound: float


@dataclass
class RdReport:
    eps_star: float
    d_r_total: float
    per_layer: list[LayerTerm]
    one_shot_bound: float
    integral_bound: float
    baselines: Optional[Baselines]
    frobenius_norm: float
    n: int
    beta: float
    delta_term: float = 0.0
    d_r_total_without_logs: float = 0.0
    search_range: tuple[float, float] = (0.0, 0.0)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_layer"] = [dict(asdict(t), contribution=t.contribution) for t in self.per_layer]
        out["search_range"] = list(self.search_range)
        return out


def _r_w(model: FcnModel) -> float:
    return max(frobenius_norm_all(model), FROBENIUS_FLOOR)


def layer_scales(model: FcnModel, lip: LipschitzSurrogates) -> np.ndarray:
    """``a_l = L * m_bar_l^2 * R_W^2`` for every layer."""
    L = model.depth
    rw2 = _r_w(model) ** 2
    return np.array([L * m * m * rw2 for m in lip.m_bar])


def rd_dimension(
    spectra: Sequence[Spectrum],
    model: FcnModel,
    lip: LipschitzSurrogates,
    cfg: RdConfig,
    eps: float,
    n: Optional[int] = None,
) -> tuple[float, list[LayerTerm]]:
    """Riemannian Dimension at resolution ``eps`` and its per-layer split."""
    if not eps > 0 or not math.isfinite(eps):
        raise InvalidResolution(f"eps must be positive and finite, got {eps}")
    L = model.depth
    if len(spectra) != L or len(lip.m_bar) != L:
        raise MismatchedLayers(f"{len(spectra)} spectra / {len(lip.m_bar)} surrogates for {L} layers")
    n = cfg.n if n is None else n
    if not n:
        raise ValueError("sample count n is required")
    widths = model.widths
    scales = layer_scales(model, lip)
    terms = []
    total = 0.0
    for l in range(1, L + 1):
        d_in, d_out = widths[l - 1], widths[l]
        spec = spectra[l - 1]
        a = float(scales[l - 1])
        res = effective_dimension(ScaledSpectrum(spec, a, n, eps))
        width = d_in + d_out
        lam = spec.values[: res.r_eff]
        inner = width * 0.5 * float(np.sum(np.log(8.0 * lam / (n * eps**2))))
        outer = width * res.r_eff * 0.5 * math.log(a) if res.r_eff else 0.0
        log_term = 0.5 * math.log(d_in * n) if cfg.include_log_terms else 0.0
        t = LayerTerm(
            layer=l,
            d_in=d_in,
            d_out=d_out,
            scale_a=a,
            r_eff=res.r_eff,
            d_eff=res.d_eff,
            d_eff_combined=width * res.d_eff,
            inner_term=inner,
            outer_term=outer,
            log_term=log_term,
            lambda_max=spec.lambda_max,
            spectrum_source=spec.source,
        )
        terms.append(t)
        total += t.contribution
    return total, terms


class RdEvaluator:
    """Fast ``eps -> d_R(eps)`` for fixed spectra and weights.

    Precomputes per-layer log eigenvalues and prefix sums so one evaluation is
    a binary search per layer.
    """

    def __init__(self, spectra, model: FcnModel, lip: LipschitzSurrogates, cfg: RdConfig, n: int):
        if len(spectra) != model.depth:
            raise MismatchedLayers(f"{len(spectra)} spectra for {model.depth} layers")
        self.spectra = list(spectra)
        self.model = model
        self.lip = lip
        self.cfg = cfg
        self.n = int(n)
        self.scales = layer_scales(model, lip)
        w = model.widths
        self.widths = np.array([w[l - 1] + w[l] for l in range(1, model.depth + 1)], dtype=float)
        self.log_total = (
            sum(0.5 * math.log(w[l - 1] * self.n) for l in range(1, model.depth + 1))
            if cfg.include_log_terms else 0.0
        )
        self._neg = []
        self._prefix = []
        for a, s in zip(self.scales, self.spectra):
            v = a * s.values
            pos = v[v > 0]
            self._neg.append(-v)  # ascending, for searchsorted
            self._prefix.append(np.concatenate([[0.0], np.cumsum(np.log(8.0 * pos))]))

    def __call__(self, eps: float) -> float:
        if not eps > 0 or not math.isfinite(eps):
            raise InvalidResolution(f"eps must be positive and finite, got {eps}")
        thr = self.n * eps * eps / 2.0
        log_ne2 = math.log(self.n * eps * eps)
        total = self.log_total
        for width, neg, pre in zip(self.widths, self._neg, self._prefix):
            r = int(np.searchsorted(neg, -thr, side="right"))
            r = min(r, pre.size - 1)
            if r:
                total += width * 0.5 * (pre[r] - r * log_ne2)
        return float(total)

    def report_at(self, eps: float):
        return rd_dimension(self.spectra, self.model, self.lip, self.cfg, eps, self.n)


def one_shot_bound(d_r: Callable[[float], float], cfg: RdConfig, eps: float, n: int) -> float:
    """``beta * eps + sqrt(d_R(eps) / n)``."""
    if not eps > 0 or not math.isfinite(eps):
        raise InvalidResolution(f"eps must be positive and finite, got {eps}")
    return cfg.beta * eps + math.sqrt(max(d_r(eps), 0.0) / n)


def delta_term(n: int, delta: float) -> float:
    """Confidence term ``sqrt(log(log(2n)/delta) / n)``, reported separately."""
    return math.sqrt(math.log(math.log(2 * n) / delta) / n)


def alpha_grid(n: int, beta: float, points: int) -> np.ndarray:
    lo, hi = math.sqrt(1.0 / n), 1.0 / beta
    if lo >= hi:
        return np.array([lo])
    return np.geomspace(lo, hi, points)


def integral_bound(d_r: Callable[[float], float], cfg: RdConfig, n: int) -> float:
    """``beta * min_alpha { alpha + n^{-1/2} int_alpha^{1/beta} sqrt(d_R(c_sub eps)) deps }``.

    The integral uses the trapezoid rule on a geometric grid from
    ``sqrt(1/n)`` to ``1/beta``; ``alpha`` ranges over the grid points.
    """
    grid = alpha_grid(n, cfg.beta, cfg.alpha_grid)
    g = np.sqrt(np.maximum([d_r(cfg.c_sub * e) for e in grid], 0.0))
    seg = np.diff(grid) * (g[:-1] + g[1:]) / 2.0
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return float(cfg.beta * np.min(grid + tail / math.sqrt(n)))


def ternary_search(f: Callable[[float], float], lo: float, hi: float, steps: int,
                   refine: int = REFINE_POINTS) -> float:
    """Minimize ``f`` on ``[lo, hi]`` by ternary search in log space.

    A final local grid of ``refine`` points around the incumbent (one coarse
    cell ``log(hi/lo)/refine`` either side) guards against the step
    discontinuities of ``d_R``.  The endpoints are always candidates.
    """
    if not hi > lo:
        return lo
    a, b = math.log(lo), math.log(hi)
    for _ in range(steps):
        if b - a < 1e-15 * max(1.0, abs(a)):
            break
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if f(math.exp(m1)) <= f(math.exp(m2)):
            b = m2
        else:
            a = m1
    inc = 0.5 * (a + b)
    width = (math.log(hi) - math.log(lo)) / refine
    local = np.linspace(max(inc - width, math.log(lo)), min(inc + width, math.log(hi)), refine)
    cands = [lo, hi, math.exp(inc)] + [math.exp(t) for t in local]
    cands = [min(max(c, lo), hi) for c in cands]
    vals = [f(c) for c in cands]
    best = min(range(len(cands)), key=lambda i: (vals[i], cands[i]))
    return cands[best]


def search_range(spectra, model: FcnModel, lip: LipschitzSurrogates, n: int) -> tuple[float, float]:
    """``[sqrt(1/n), max_l sqrt(2 a_l lambda_max(Gamma_{l-1}) / n)]``."""
    lo = math.sqrt(1.0 / n)
    scales = layer_scales(model, lip) if frobenius_norm_all(model) > 0 else np.zeros(model.depth)
    hi = max(math.sqrt(2.0 * a * s.lambda_max / n) for a, s in zip(scales, spectra))
    return lo, hi


def eps_search(evaluator: RdEvaluator, cfg: RdConfig) -> float:
    """Resolution minimizing the one-shot bound over the admissible range."""
    lo, hi = search_range(evaluator.spectra, evaluator.model, evaluator.lip, evaluator.n)
    if not hi > lo:
        return lo
    return ternary_search(lambda e: one_shot_bound(evaluator, cfg, e, evaluator.n), lo, hi,
                          cfg.eps_search_steps)


def vc_proxy(p: float, l_depth: int) -> float:
    """``P * L * log P``."""
    if p < 2:
        raise ValueError("parameter count must be >= 2")
    return p * l_depth * math.log(p)


def _prod_except(values: Sequence[float]) -> list[float]:
    return [math.prod(v for j, v in enumerate(values) if j != i) for i in range(len(values))]


def spectral_bound(model: FcnModel, b_x: float, n: int, beta: float = 1.0,
                   op_norms: Optional[Sequence[float]] = None) -> float:
    """``(beta B_x ||W||_F / sqrt n) sqrt(L sum_l (d_l + d_{l-1}) prod_{i!=l} ||W_i||^2)``."""
    norms = op_norms if op_norms is not None else lipschitz_surrogates(model).op_norms
    w = model.widths
    L = model.depth
    s = sum((w[l] + w[l + 1]) * p * p for l, p in enumerate(_prod_except(norms)))
    return beta * b_x * frobenius_norm_all(model) / math.sqrt(n) * math.sqrt(L * s)


def norm21(w: np.ndarray) -> float:
    """Sum of column Euclidean norms."""
    return float(np.sum(np.linalg.norm(w, axis=0)))


def bartlett_bound(model: FcnModel, x_frob: float, n: int, beta: float = 1.0,
                   op_norms: Optional[Sequence[float]] = None) -> float:
    """``(beta ||X||_F / n) (sum ||W_l||_{2,1}^{2/3} * sum (prod_{i!=l} ||W_i||)^{2/3})^{3/2}``."""
    norms = op_norms if op_norms is not None else lipschitz_surrogates(model).op_norms
    a = sum(norm21(w) ** (2.0 / 3.0) for w in model.weights)
    b = sum(p ** (2.0 / 3.0) for p in _prod_except(norms))
    return beta * x_frob / n * (a * b) ** 1.5


def rank_free_budget(scale_a: float, frob2: float, n: int, eps: float) -> float:
    """``8 a ||F||_F^2 / (n eps^2)``; dominates the layer's sum of log terms."""
    return 8.0 * scale_a * frob2 / (n * eps**2)


def analyze(
    model: FcnModel,
    x,
    cfg: RdConfig = RdConfig(),
    rng=None,
    sketch_threshold: int = SKETCH_THRESHOLD,
    sketch_divisor: int = SKETCH_DIVISOR,
) -> RdReport:
    """Full pipeline: forward, spectra, resolution search, bounds and baselines."""
    feats = forward_with_hooks(model, x)
    n = feats.n
    spectra = layer_gram_spectra(feats, sketch_threshold, sketch_divisor, make_rng(rng if rng is not None else 0))
    lip = lipschitz_surrogates(model)
    ev = RdEvaluator(spectra, model, lip, cfg, n)
    rng_lo, rng_hi = search_range(spectra, model, lip, n)
    eps = cfg.eps if cfg.eps is not None else eps_search(ev, cfg)
    total, terms = rd_dimension(spectra, model, lip, cfg, eps, n)
    x_mat = feats[0]
    p = param_count(model)
    baselines = Baselines(
        param_count=p,
        vc_proxy=vc_proxy(p, model.depth) if p >= 2 else 0.0,
        spectral_bound=spectral_bound(model, float(np.max(np.linalg.norm(x_mat, axis=0))), n, cfg.beta, lip.op_norms),
        bartlett_bound=bartlett_bound(model, float(np.linalg.norm(x_mat)), n, cfg.beta, lip.op_norms),
    )
    return RdReport(
        eps_star=eps,
        d_r_total=total,
        per_layer=terms,
        one_shot_bound=one_shot_bound(ev, cfg, eps, n),
        integral_bound=integral_bound(ev, cfg, n),
        baselines=baselines,
        frobenius_norm=frobenius_norm_all(model),
        n=n,
        beta=cfg.beta,
        delta_term=delta_term(n, cfg.delta),
        d_r_total_without_logs=total - sum(t.log_term for t in terms),
        search_range=(rng_lo, rng_hi),
    )
