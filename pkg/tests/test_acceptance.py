"""Acceptance criteria, one test per criterion.

Each test records a ``[PASS]``/``[FAIL]`` line; ``conftest.py`` prints them in
the terminal summary.  Run alone with ``pytest tests/test_acceptance.py`` or as
a script: ``python3 tests/test_acceptance.py``.
"""

import json
import math
import time

import numpy as np
import pytest

from rdbound.bounds import (
    RdConfig,
    RdEvaluator,
    analyze,
    rank_free_budget,
    rd_dimension,
    search_range,
    vc_proxy,
)
from rdbound.geometry import (
    COVER_CONSTANT,
    Subspace,
    ball_mass_estimate,
    ellipsoidal_proj_metric,
    grassmannian_cover_rhs,
    iso_check,
    sample_grassmannian,
    sine_tangent_check,
)
from rdbound.io import decode_bundle, encode_bundle, write_report
from rdbound.linalg import Spectrum, gram_spectrum, make_rng, qr_orthonormalize, sketched_gram_spectrum, sym_eigh
from rdbound.network import LayerFeatureSet, forward_with_hooks, layer_gram_spectra, lipschitz_surrogates
from rdbound.spectra import ScaledSpectrum, effective_dimension, low_rank_deff_upper
from rdbound.trainer import TrainConfig, evaluate, kaiming_uniform_init, loss_and_grads, synth_blobs, train

RESULTS: dict[int, str] = {}


def report(num, ok, detail):
    RESULTS[num] = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {detail}"
    print(RESULTS[num])
    assert ok, RESULTS[num]


def _random_model(rng):
    depth = int(rng.integers(1, 5))
    widths = [int(w) for w in rng.integers(2, 10, size=depth + 1)]
    x = rng.standard_normal((widths[0], int(rng.integers(5, 40))))
    model = kaiming_uniform_init(widths, rng)
    feats = forward_with_hooks(model, x)
    return model, feats, layer_gram_spectra(feats), lipschitz_surrogates(model)


def _random_eps(rng, spectra, model, lip, n):
    lo, hi = search_range(spectra, model, lip, n)
    return math.exp(rng.uniform(math.log(lo), math.log(max(hi, 2 * lo))))


def test_01_vc_proxy():
    t = time.perf_counter()
    a, b = vc_proxy(5.961e6, 10), vc_proxy(2.690e5, 20)
    dt = time.perf_counter() - t
    ea, eb = abs(a / 9.299e8 - 1), abs(b / 6.727e7 - 1)
    report(1, ea <= 1e-3 and eb <= 1e-3 and dt < 1e-3,
           f"vc_proxy = {a:.4e} (rel {ea:.1e}), {b:.4e} (rel {eb:.1e}); {dt * 1e6:.0f} us")


def test_02_exp_decay_closed_form():
    t = time.perf_counter()
    worst, cases = 0.0, 0
    a, lam0, R, n = 2.0, 3.0, 1.5, 100
    for gamma in (0.5, 1.0, 2.0):
        lam = lam0 * np.exp(-gamma * np.arange(80.0))
        for r in range(1, 51):
            # threshold half a decay step below lambda_r keeps r_eff = r away from ties
            eps = math.sqrt(2 * a * R * R * lam0 * math.exp(-gamma * (r - 0.5)) / n)
            res = effective_dimension(ScaledSpectrum(Spectrum(lam), a * R * R, n, eps))
            closed = (r / 2) * math.log(8 * a * lam0 * R * R / (n * eps**2)) - gamma / 4 * r * (r - 1)
            worst = max(worst, abs(res.d_eff - closed) if res.r_eff == r else math.inf)
            cases += 1
    dt = time.perf_counter() - t
    report(2, worst <= 1e-12 and dt < 1.0, f"{cases} cases, max |numeric - closed| = {worst:.2e}; {dt:.3f} s")


def test_03_low_rank_bound():
    t = time.perf_counter()
    rng = make_rng(3)
    violations = 0
    for _ in range(1000):
        q = int(rng.integers(1, 17))
        lam = np.sort(np.concatenate([rng.exponential(1.0, q) * 10.0 ** rng.uniform(-3, 3), np.zeros(int(rng.integers(0, 10)))]))[::-1]
        a, R, n = 10.0 ** rng.uniform(-2, 2), rng.uniform(0.1, 3), int(rng.integers(1, 1000))
        eps = 10.0 ** rng.uniform(-3, 1)
        d = effective_dimension(ScaledSpectrum(Spectrum(lam), a * R * R, n, eps)).d_eff
        violations += d > low_rank_deff_upper(q, lam[0], a, R, n, eps) * (1 + 1e-12)
    dt = time.perf_counter() - t
    report(3, violations == 0 and dt < 5.0, f"{violations} violations in 1000 rank-q spectra; {dt:.2f} s")


def test_04_split_identity():
    t = time.perf_counter()
    rng = make_rng(4)
    worst = 0.0
    for _ in range(50):
        model, feats, spectra, lip = _random_model(rng)
        eps = _random_eps(rng, spectra, model, lip, feats.n)
        for term in rd_dimension(spectra, model, lip, RdConfig(), eps, feats.n)[1]:
            combined = (term.d_in + term.d_out) * term.d_eff
            if combined:
                worst = max(worst, abs(term.inner_term + term.outer_term - combined) / abs(combined))
    dt = time.perf_counter() - t
    report(4, worst <= 1e-9 and dt < 10.0, f"max relative split error {worst:.2e} over 50 models; {dt:.2f} s")


def test_05_rank_free_domination():
    rng = make_rng(5)
    violations = checks = 0
    for _ in range(50):
        model, feats, spectra, lip = _random_model(rng)
        n = feats.n
        eps = _random_eps(rng, spectra, model, lip, n)
        for term, spec, f in zip(rd_dimension(spectra, model, lip, RdConfig(), eps, n)[1], spectra, feats.features):
            logs = float(np.sum(np.log(8 * term.scale_a * spec.values[: term.r_eff] / (n * eps**2))))
            violations += logs > rank_free_budget(term.scale_a, float(np.sum(f * f)), n, eps) * (1 + 1e-12)
            checks += 1
    report(5, violations == 0, f"{violations} violations in {checks} layer checks")


def test_06_sine_tangent():
    t = time.perf_counter()
    rng = make_rng(6)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 9))
        r = int(rng.integers(1, d))
        vbar = sample_grassmannian(d, r, rng)
        rho, pred = sine_tangent_check(vbar, rng.standard_normal((d - r, r)) * rng.uniform(0.01, 5))
        worst = max(worst, abs(rho - pred))
    dt = time.perf_counter() - t
    report(6, worst <= 1e-8 and dt < 1.0, f"max |rho - predicted| = {worst:.2e} over 100 charts; {dt:.3f} s")


def test_07_grassmannian_covering():
    t = time.perf_counter()
    rng = make_rng(7)
    d, r, eps = 4, 2, 0.9
    center = Subspace(np.eye(d)[:, :r])
    iso = ball_mass_estimate(center, None, eps, 100_000, rng)
    iso_rhs = r * (d - r) * math.log(COVER_CONSTANT / eps**2)
    sigma = np.diag([4.0, 1.0, 0.25, 0.01])
    aniso = ball_mass_estimate(center, sigma, eps, 100_000, rng)
    aniso_rhs = grassmannian_cover_rhs(d, r, Spectrum([4.0, 1.0, 0.25, 0.01]), eps)
    dt = time.perf_counter() - t
    ok = (not iso.unreliable and not aniso.unreliable and iso.log_inv_mass <= iso_rhs
          and aniso.log_inv_mass <= aniso_rhs and dt < 60)
    report(7, ok, f"-ln mass {iso.log_inv_mass:.3f} <= {iso_rhs:.2f}; anisotropic "
                  f"{aniso.log_inv_mass:.3f} <= {aniso_rhs:.2f}; {dt:.1f} s")


def test_08_eigenvalue_sandwich():
    rng = make_rng(8)
    violations = 0
    for _ in range(200):
        d = int(rng.integers(2, 11))
        r = int(rng.integers(1, d + 1))
        a = rng.standard_normal((d, d))
        sigma = a @ a.T
        w, v = sym_eigh(sigma)
        vbar = Subspace(qr_orthonormalize(v[:, :r] + rng.uniform(0, 0.5) * rng.standard_normal((d, r))))
        p = vbar.projector
        proj = sym_eigh(p @ sigma @ p)[0][:r]
        rho = ellipsoidal_proj_metric(Subspace(v[:, :r]), vbar, sigma)
        tol = 1e-9 * w[0]
        violations += bool(np.any(proj > w[:r] + tol) or np.any(proj < w[:r] / 2 - rho**2 - tol))
    report(8, violations == 0, f"{violations} violations in 200 instances")


def test_09_sketch_fidelity():
    t = time.perf_counter()
    rng = make_rng(0)
    # rank 5 with eigenvalues 1, 0.1, ..., 1e-4
    u = qr_orthonormalize(rng.standard_normal((256, 5)))
    v = qr_orthonormalize(rng.standard_normal((200, 5)))
    f = u @ np.diag(10.0 ** (-np.arange(5) / 2)) @ v.T
    exact = gram_spectrum(f).values[:5]
    sk = np.mean([sketched_gram_spectrum(f, 64, c).values[:5] for c in rng.spawn(20)], axis=0)
    rel = np.abs(sk / exact - 1)
    dt = time.perf_counter() - t
    report(9, rel.max() <= 0.10 and dt < 10, f"seed-averaged top-5 relative errors {np.round(rel, 4).tolist()}; {dt:.2f} s")


def test_10_gradient_check():
    rng = make_rng(10)
    model = kaiming_uniform_init([8, 8, 8, 8], rng)
    x, y = rng.standard_normal((8, 32)), rng.integers(0, 8, 32)
    _, grads = loss_and_grads(model, x, y)
    worst = 0.0
    for _ in range(20):
        l = int(rng.integers(3))
        i, j = int(rng.integers(8)), int(rng.integers(8))

        def at(h):
            ws = [np.array(w) for w in model.weights]
            ws[l][i, j] += h
            return loss_and_grads(model.with_weights(ws), x, y)[0]

        fd = (at(1e-5) - at(-1e-5)) / 2e-5
        worst = max(worst, abs(fd - grads[l][i, j]) / max(abs(fd), abs(grads[l][i, j]), 1e-8))
    report(10, worst <= 1e-4, f"max relative gradient error {worst:.2e} on 20 coordinates")


# optimizer settings under which compression shows within 100 epochs at this scale
COMPRESSION_CFG = dict(lr=0.05, momentum=0.9, weight_decay=5e-3, epochs=100, batch_size=64)


def _compression_run(seed):
    data = synth_blobs(1000, 16, 2, 1.0, seed=seed)
    model = kaiming_uniform_init([16, 64, 64, 64, 64, 2], make_rng(seed))
    cfg = TrainConfig(seed=seed, **COMPRESSION_CFG)
    early = list(range(0, cfg.epochs // 10 + 1))
    res = train(model, data, cfg, early + [cfg.epochs])
    ranks = {}
    for s in res.snapshots:
        rep = analyze(s.model, data.inputs, RdConfig(), seed)
        ranks[s.epoch] = sum(t.r_eff for t in rep.per_layer if t.layer >= 2)
    final = ranks[cfg.epochs]
    early_max = max(ranks[e] for e in early)
    return final, early_max, evaluate(res.model, data)[1]


@pytest.mark.slow
def test_11_rank_compression():
    t = time.perf_counter()
    rows, ok = [], True
    for seed in (0, 1, 2):
        final, early_max, err = _compression_run(seed)
        ok &= err <= 0.01 and final <= 0.8 * early_max
        rows.append(f"seed {seed}: {early_max}->{final} (err {err:.3f})")
    dt = time.perf_counter() - t
    report(11, ok and dt < 300, "; ".join(rows) + f"; {dt:.0f} s")


def test_12_iso_trivial():
    rng = make_rng(12)
    model = kaiming_uniform_init([6, 16, 16, 3], rng)
    feats = forward_with_hooks(model, rng.standard_normal((6, 80)))
    lip = lipschitz_surrogates(model)
    eps = 0.05
    same = iso_check(feats, feats, model, lip, eps)
    doubled = iso_check(feats, LayerFeatureSet(tuple(2 * f for f in feats.features)), model, lip, eps)
    active = [t for t in same.per_layer if t.active_dim]
    e1 = max(abs(t.kappa_hat - 1) for t in active)
    e4 = max(abs(t.kappa_hat - 4) for t in doubled.per_layer if t.active_dim)
    report(12, bool(active) and e1 <= 1e-9 and e4 <= 1e-6,
           f"{len(active)} active layers, max |kappa-1| = {e1:.1e}, max |kappa-4| = {e4:.1e}")


def test_13_determinism_and_round_trip(tmp_path):
    def pipeline(path):
        data = synth_blobs(120, 6, 3, 1.0, seed=13)
        model = kaiming_uniform_init([6, 12, 12, 3], make_rng(13))
        trained = train(model, data, TrainConfig(epochs=3, batch_size=16, seed=13)).model
        write_report(path, analyze(trained, data.inputs, RdConfig(), 13, sketch_threshold=8), "json")
        return path.read_bytes()

    same = pipeline(tmp_path / "a.json") == pipeline(tmp_path / "b.json")
    rng = make_rng(13)
    mismatches = 0
    for _ in range(100):
        b = {f"m{k}": rng.standard_normal((int(rng.integers(0, 6)), int(rng.integers(0, 6))))
             for k in range(int(rng.integers(0, 6)))}
        back = decode_bundle(encode_bundle(b))
        mismatches += list(back) != list(b) or any(
            back[k].shape != b[k].shape or back[k].tobytes() != b[k].tobytes() for k in b)
    report(13, same and mismatches == 0,
           f"reports bitwise identical: {same}; bundle round-trip mismatches: {mismatches}/100")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
