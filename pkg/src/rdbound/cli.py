"""Command-line entry point.

Exit codes: 0 ok, 1 verification failure, 2 input error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import geometry
from .bounds import RdConfig, RdEvaluator, analyze, eps_search, one_shot_bound, search_range
from .errors import FormatError, NonFinite, RdError, ShapeMismatch
from .io import IDX_IMAGES_MAGIC, read_bundle, read_idx, write_bundle, write_report
from .linalg import Spectrum, make_rng, qr_orthonormalize, sym_eigh
from .network import (
    SKETCH_DIVISOR,
    SKETCH_THRESHOLD,
    FcnModel,
    forward_with_hooks,
    layer_gram_spectra,
    lipschitz_surrogates,
)
from .trainer import TrainConfig, kaiming_uniform_init, synth_blobs, train

log = logging.getLogger("rdbound")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    pass


def model_to_bundle(model: FcnModel) -> dict:
    out = {f"W{i + 1}": w for i, w in enumerate(model.weights)}
    out["widths"] = np.array([model.widths], dtype=float)
    return out


def model_from_bundle(bundle: dict) -> FcnModel:
    if "widths" not in bundle:
        raise InputError("bundle has no 'widths' entry")
    widths = bundle["widths"].ravel()
    if widths.size < 2 or np.any(widths != np.round(widths)) or np.any(widths < 1):
        raise InputError(f"entry 'widths' must hold at least two positive integers, got {widths.tolist()}")
    widths = [int(w) for w in widths]
    ws = []
    for l in range(1, len(widths)):
        name = f"W{l}"
        if name not in bundle:
            raise InputError(f"bundle is missing entry {name!r}")
        w = bundle[name]
        if w.shape != (widths[l], widths[l - 1]):
            raise InputError(f"entry {name!r} has shape {w.shape}, expected {(widths[l], widths[l - 1])}")
        ws.append(w)
    return FcnModel(ws)


def parse_synthetic(spec: str):
    try:
        n, d0, classes, spread = spec.split(",")
        return int(n), int(d0), int(classes), float(spread)
    except ValueError:
        raise InputError(f"--synthetic expects n,d0,classes,spread, got {spec!r}") from None


def load_inputs(path) -> np.ndarray:
    """Input matrix (d0 x n) from an RDMB bundle entry 'X' or an IDX image file."""
    path = Path(path)
    head = path.read_bytes()[:4]
    if head == b"RDMB":
        b = read_bundle(path)
        if "X" not in b:
            raise InputError(f"{path}: bundle has no 'X' entry")
        return b["X"]
    if len(head) == 4 and int.from_bytes(head, "big") == IDX_IMAGES_MAGIC:
        return read_idx(path).images_as_columns()
    raise InputError(f"{path}: neither an RDMB bundle nor an IDX image file")


def data_from_args(args) -> np.ndarray:
    if args.synthetic and args.idx_images:
        raise InputError("--synthetic and --idx-images are mutually exclusive")
    if args.synthetic:
        n, d0, classes, spread = parse_synthetic(args.synthetic)
        x = synth_blobs(n, d0, classes, spread, args.seed).inputs
    elif args.idx_images:
        x = read_idx(args.idx_images).images_as_columns()
        if args.idx_labels:
            labels = read_idx(args.idx_labels)
            if labels.dims[0] != x.shape[1]:
                raise InputError("--idx-labels count does not match --idx-images")
    else:
        raise InputError("no data source: pass --synthetic or --idx-images")
    if args.limit:
        x = x[:, : args.limit]
    return x


def rd_config(args) -> RdConfig:
    return RdConfig(
        beta=args.beta,
        eps=args.eps,
        eps_search_steps=args.eps_steps,
        include_log_terms=not args.no_log_terms,
        delta=args.delta,
    )


def cmd_analyze(args) -> int:
    model = model_from_bundle(read_bundle(args.model))
    x = data_from_args(args)
    if x.shape[0] != model.widths[0]:
        raise InputError(f"data has dimension {x.shape[0]}, entry 'W1' expects {model.widths[0]}")
    report = analyze(model, x, rd_config(args), args.seed, args.sketch_threshold, args.sketch_divisor)
    out = args.out or f"report.{args.format}"
    write_report(out, report, args.format)
    log.info("eps*=%.6g d_R=%.6g one-shot=%.6g -> %s", report.eps_star, report.d_r_total, report.one_shot_bound, out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    model = model_from_bundle(read_bundle(args.model))
    x = data_from_args(args)
    feats = forward_with_hooks(model, x)
    spectra = layer_gram_spectra(feats, args.sketch_threshold, args.sketch_divisor, make_rng(args.seed))
    cfg = rd_config(args)
    ev = RdEvaluator(spectra, model, lipschitz_surrogates(model), cfg, feats.n)
    lo, hi = search_range(spectra, model, ev.lip, feats.n)
    grid = np.geomspace(lo, max(hi, lo * (1 + 1e-12)), args.points)
    out = args.out or "sweep.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "d_r", "one_shot", *[f"r_eff_{l}" for l in range(1, model.depth + 1)]])
        for e in grid:
            _, terms = ev.report_at(float(e))
            w.writerow([repr(float(e)), repr(float(ev(float(e)))), repr(float(one_shot_bound(ev, cfg, float(e), feats.n))),
                        *[t.r_eff for t in terms]])
    return EXIT_OK


def _snapshot_epochs(spec: str, epochs: int) -> list[int]:
    if spec == "all":
        return list(range(epochs + 1))
    eps = sorted({int(s) for s in spec.split(",") if s.strip()} | {0, epochs})
    return [e for e in eps if 0 <= e <= epochs]


def cmd_train_demo(args) -> int:
    n, d0, classes, spread = parse_synthetic(args.synthetic)
    data = synth_blobs(n, d0, classes, spread, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    widths = [int(w) for w in args.widths.split(",")]
    snaps = _snapshot_epochs(args.snapshots, args.epochs)
    for width in widths:
        arch = [d0] + [width] * args.hidden_layers + [classes]
        model = kaiming_uniform_init(arch, make_rng(args.seed))
        cfg = TrainConfig(lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
                          epochs=args.epochs, batch_size=args.batch_size,
                          lr_decay_epochs=tuple(int(e) for e in args.lr_decay_epochs.split(",") if e),
                          lr_decay_factor=args.lr_decay_factor, seed=args.seed)
        result = train(model, data, cfg, snaps)
        series = out_dir / f"series_w{width}.csv"
        with series.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_error", "eps_star", "d_r_total",
                        *[f"r_eff_{l}" for l in range(1, len(arch))]])
            for s in result.snapshots:
                rep = analyze(s.model, data.inputs, rd_config(args), args.seed,
                              args.sketch_threshold, args.sketch_divisor)
                write_report(out_dir / f"report_w{width}_e{s.epoch}.{args.format}", rep, args.format)
                w.writerow([s.epoch, repr(float(s.train_error)), repr(float(rep.eps_star)), repr(float(rep.d_r_total)),
                            *[t.r_eff for t in rep.per_layer]])
        write_bundle(out_dir / f"model_w{width}.rdmb", model_to_bundle(result.model))
        log.info("width %d: %d snapshots -> %s", width, len(result.snapshots), series)
    return EXIT_OK


def _anisotropic_sigma(d: int) -> np.ndarray:
    if d == 4:
        return np.diag([4.0, 1.0, 0.25, 0.01])
    return np.diag(np.logspace(math.log10(4.0), -2.0, d))


def cmd_geometry_verify(args) -> int:
    d, r, eps = args.d, args.r, args.eps
    if d > 8 or not 1 <= r <= d:
        raise InputError("geometry verify needs 1 <= r <= d <= 8")
    rng = make_rng(args.seed)
    results = []

    def record(name, ok, detail):
        results.append(ok)
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    center = geometry.Subspace(np.eye(d)[:, :r])
    if r < d:
        worst = 0.0
        for _ in range(100):
            vbar = geometry.sample_grassmannian(d, r, rng)
            x = rng.standard_normal((d - r, r)) * rng.uniform(0.1, 3.0)
            rho, pred = geometry.sine_tangent_check(vbar, x)
            worst = max(worst, abs(rho - pred))
        record("sine-tangent", worst <= 1e-8, f"max |rho - predicted| = {worst:.3e} (tol 1e-8)")
    else:
        record("sine-tangent", True, "d == r, no chart coordinates")

    for label, sigma in (("isotropic", np.eye(d)), ("anisotropic", _anisotropic_sigma(d))):
        spec = Spectrum(sym_eigh(sigma)[0])
        est = geometry.ball_mass_estimate(center, sigma, eps, args.samples, rng)
        rhs = geometry.grassmannian_cover_rhs(d, r, spec, eps) if eps > 0 else math.inf
        if est.unreliable:
            print(f"[WARN] covering ({label}): only {est.hits} hits in {est.samples} samples; estimate unreliable")
            results.append(True)
            continue
        record(f"covering ({label})", est.log_inv_mass <= rhs,
               f"-ln mass = {est.log_inv_mass:.4f} <= rhs = {rhs:.4f} (margin {rhs - est.log_inv_mass:.4f})")

    violations = 0
    worst = math.inf
    for _ in range(200):
        a = rng.standard_normal((d, d))
        sigma = a @ a.T
        w, v = sym_eigh(sigma)
        top = geometry.Subspace(v[:, :r])
        vb = geometry.Subspace(qr_orthonormalize(v[:, :r] + 0.3 * rng.standard_normal((d, r))))
        rho = geometry.ellipsoidal_proj_metric(top, vb, sigma)
        p = vb.projector
        proj = np.linalg.eigvalsh(p @ sigma @ p)[::-1][:r]
        lo = w[:r] / 2 - rho**2
        slack = min(np.min(w[:r] - proj), np.min(proj - lo))
        worst = min(worst, slack / max(w[0], 1.0))
        violations += int(np.any(proj > w[:r] * (1 + 1e-10) + 1e-12) or np.any(proj < lo - 1e-10 * w[0]))
    record("eigenvalue sandwich", violations == 0, f"{violations} violations in 200 instances (min rel. slack {worst:.3e})")
    return EXIT_OK if all(results) else EXIT_VERIFY


def cmd_iso_check(args) -> int:
    model = model_from_bundle(read_bundle(args.model))
    if args.synthetic:
        n, d0, classes, spread = parse_synthetic(args.synthetic)
        x = synth_blobs(n, d0, classes, spread, args.seed).inputs
        half = x.shape[1] // 2
        xs, xp = x[:, :half], x[:, half:2 * half]
    else:
        if not (args.s and args.sprime):
            raise InputError("iso-check needs --s and --sprime, or --synthetic")
        xs, xp = load_inputs(args.s), load_inputs(args.sprime)
    if xs.shape != xp.shape:
        raise InputError(f"samples have shapes {xs.shape} and {xp.shape}")
    if xs.shape[0] != model.widths[0]:
        raise InputError(f"data has dimension {xs.shape[0]}, entry 'W1' expects {model.widths[0]}")
    fs, fp = forward_with_hooks(model, xs), forward_with_hooks(model, xp)
    lip = lipschitz_surrogates(model)
    eps = args.eps
    if eps is None:
        spectra = layer_gram_spectra(fs, rng=make_rng(args.seed))
        cfg = rd_config(args)
        eps = eps_search(RdEvaluator(spectra, model, lip, cfg, fs.n), cfg)
    cert = geometry.iso_check(fs, fp, model, lip, eps)
    text = json.dumps(cert.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def _add_common(p, data=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--eps", type=float, default=None, help="fixed resolution (skips the search)")
    p.add_argument("--eps-steps", type=int, default=500)
    p.add_argument("--no-log-terms", action="store_true")
    p.add_argument("--sketch-threshold", type=int, default=SKETCH_THRESHOLD)
    p.add_argument("--sketch-divisor", type=int, default=SKETCH_DIVISOR)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    if data:
        p.add_argument("--idx-images")
        p.add_argument("--idx-labels")
        p.add_argument("--synthetic", metavar="N,D0,CLASSES,SPREAD")
        p.add_argument("--limit", type=int, default=0, help="use only the first LIMIT samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdbound", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="Riemannian Dimension report for a model bundle")
    p.add_argument("--model", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="d_R and the one-shot bound over the resolution range")
    p.add_argument("--model", required=True)
    p.add_argument("--points", type=int, default=64)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-demo", help="train on synthetic blobs and track d_R per snapshot")
    _add_common(p, data=False)
    p.add_argument("--synthetic", default="1000,16,2,1.0", metavar="N,D0,CLASSES,SPREAD")
    p.add_argument("--widths", default="64")
    p.add_argument("--hidden-layers", type=int, default=4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--snapshots", default="all", help="'all' or comma-separated epochs")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr-decay-epochs", default="")
    p.add_argument("--lr-decay-factor", type=float, default=0.1)
    p.add_argument("--out-dir", default="train_demo")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("geometry-verify", help="Monte Carlo checks of Grassmannian geometry")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--eps", type=float, default=0.9)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_geometry_verify)

    p = sub.add_parser("iso-check", help="subspace-isomorphism certificate for two samples")
    p.add_argument("--model", required=True)
    p.add_argument("--s", help="RDMB bundle with entry 'X' or IDX image file")
    p.add_argument("--sprime", help="second sample, same format")
    _add_common(p, data=False)
    p.add_argument("--synthetic", metavar="N,D0,CLASSES,SPREAD", help="split one synthetic set in halves")
    p.set_defaults(func=cmd_iso_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, FormatError, ShapeMismatch, OSError) as exc:
        print(f"rdbound: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonFinite, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"rdbound: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RdError, ValueError) as exc:
        print(f"rdbound: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
