"""Command-line interface: ``mvspectra simulate|estimate|decompose|coherence|study``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Failures also
write one JSON line ``{"status": "error", ...}`` to standard error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .condsim import PCGConfig
from .estimator import EstimatorConfig, run_estimator
from .evaluation import StudyConfig, coherence_matrix, run_study, simulate_multimatern
from .factor import conditional_factor_field, fit_factors, normalize_csd, reconstruct_band
from .io import (FormatError, format_factor_table, metadata_line, read_field, read_spectrum, write_array_field,
                 write_factor_table, write_field, write_spectrum, write_study)
from .lattice import ComponentMeans, GridSpec, MultiField, center
from .models import parsimonious_params

log = logging.getLogger("mvspectra")

SLICES = {"low": 0.0, "mid": 0.25, "high": 0.5}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail(2, message)


def _fail(code: int, message: str):
    sys.stderr.write(json.dumps({"status": "error", "code": code, "message": message}) + "\n")
    sys.exit(code)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"sizes must be positive integers, got {text!r}")
    return vals


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return p


def _stream(seed: int, label: int) -> np.random.SeedSequence:
    # fixed labels: 0 field simulation, 1 missingness, 2 estimator
    return np.random.SeedSequence(seed, spawn_key=(label,))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if not 0 <= args.missing_frac < 1:
        raise UsageError("--missing-frac must be in [0, 1)")
    if args.p not in (2, 3, 4):
        raise UsageError("--p must be 2, 3 or 4")
    spec = parsimonious_params(args.p)
    field = simulate_multimatern(spec, args.grid, _stream(args.seed, 0))
    mask = np.ones(field.mask.shape, dtype=bool)
    n_drop = int(round(args.missing_frac * mask.size))
    if n_drop:
        rng = np.random.default_rng(_stream(args.seed, 1))
        mask.reshape(-1)[rng.choice(mask.size, n_drop, replace=False)] = False
        field = MultiField(field.grid, np.where(mask, field.values, 0.0), mask)
    write_field(args.out, field, config=_echo(args))
    log.info("wrote %d observations to %s", field.n, args.out)
    return 0


def _estimator_config(args) -> EstimatorConfig:
    return EstimatorConfig(tau=args.tau, bandwidth=args.bandwidth, burn_in=args.burn_in, epsilon=args.epsilon,
                           max_avg_iters=args.max_avg_iters, seed=args.seed,
                           pcg=PCGConfig(rel_tolerance=args.pcg_tol, max_iters=args.pcg_max_iters,
                                         neighbors=args.neighbors))


def cmd_estimate(args) -> int:
    field = read_field(args.field)
    try:
        cfg = _estimator_config(args)
    except ValueError as exc:
        raise UsageError(str(exc))
    res = run_estimator(field, cfg)
    if not res.converged:
        log.warning("estimator did not converge after %d iterations", res.iterations)
    meta = dict(config=_echo(args), obs_grid=list(field.grid.obs_sizes), tau=cfg.tau,
                converged=res.converged, iterations=res.iterations, trace=res.trace,
                mu_hat=res.means.mu_hat, var_hat=res.means.var_hat, pcg_failures=res.pcg_failures,
                timing=res.timing, marginals=[asdict(m) if m is not None else None for m in res.marginals])
    write_spectrum(args.out, res.f_hat, **meta)
    print(json.dumps({"status": "ok", "iterations": res.iterations, "converged": res.converged,
                      "seconds": round(res.timing.get("total", 0.0), 3)}))
    return 0


def _embed_to(field: MultiField, sizes) -> MultiField:
    a = field.grid.obs_sizes
    grid = GridSpec(a, tuple(sizes))
    values = np.zeros((field.p,) + grid.emb_sizes)
    mask = np.zeros_like(values, dtype=bool)
    region = (slice(None),) + grid.obs_region()
    values[region] = np.where(field.mask, field.values, 0.0)
    mask[region] = field.mask
    return MultiField(grid, values, mask)


def cmd_decompose(args) -> int:
    if any(J not in (1, 2) for J in args.J):
        raise UsageError("only J = 1 or 2 factors are supported")
    f, meta = read_spectrum(args.spectrum)
    field = read_field(args.field)
    if field.p != f.p:
        raise UsageError(f"field has p={field.p} components, spectrum has p={f.p}")
    if any(s < a for s, a in zip(f.sizes, field.grid.obs_sizes)) or len(f.sizes) != field.grid.dims:
        raise UsageError(f"spectrum lattice {f.sizes} cannot hold field lattice {field.grid.obs_sizes}")
    emb = _embed_to(field, f.sizes)
    # the estimator's own centring and lag-0 variances, when recorded
    mu = np.asarray(meta["mu_hat"], float) if "mu_hat" in meta else center(emb)[1].mu_hat
    var = np.asarray(meta["var_hat"], float) if "var_hat" in meta else np.diag(f.lag0_cov()).real.copy()
    means = ComponentMeans(mu, var)
    ft = normalize_csd(f, var)
    scaled = emb.with_values(np.where(emb.mask, (emb.values - _bcast(mu, emb)) / _bcast(np.sqrt(var), emb), 0.0))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pcg = PCGConfig(rel_tolerance=args.pcg_tol, neighbors=args.neighbors)
    models = []
    obs = field.grid.obs_region()
    for J in args.J:
        model = fit_factors(ft, J, seed=args.seed)
        models.append(model)
        fields_j = [conditional_factor_field(model, ft, scaled, j, pcg) for j in range(J)]
        for j, w in enumerate(fields_j):
            write_array_field(out / f"factor_J{J}_W{j + 1}.csv", w[obs], J=J, factor=j + 1, config=_echo(args))
        recon = np.stack([reconstruct_band(model, means, fields_j, k, scale=args.scale)[obs] for k in range(f.p)])
        write_field(out / f"reconstruction_J{J}.csv", MultiField.from_observations(recon, np.ones_like(recon, bool)),
                    J=J, scale=args.scale, config=_echo(args))
    write_factor_table(out / "factor_table.csv", models, config=_echo(args),
                       converged=[m.converged for m in models])
    print(format_factor_table(models))
    return 0


def _bcast(v, field: MultiField) -> np.ndarray:
    return np.asarray(v, float).reshape((field.p,) + (1,) * field.grid.dims)


def slice_indices(levels, sizes) -> tuple[int, ...]:
    """Nearest lattice frequency index to each named level (``low`` 0, ``mid`` 1/4, ``high`` 1/2).

    Ties (odd ``b`` at 1/2, say) go to the lower index.
    """
    return tuple(int(np.ceil(SLICES[lv] * b - 0.5)) % b for lv, b in zip(levels, sizes))


def cmd_coherence(args) -> int:
    f, _ = read_spectrum(args.spectrum)
    sizes = f.sizes
    if args.index:
        idx = tuple(args.index)
        if len(idx) != len(sizes) or any(not 0 <= i < b for i, b in zip(idx, sizes)):
            raise UsageError(f"frequency index {idx} outside grid {sizes}")
        picks = [("index", idx)]
    else:
        bad = [s for s in args.slices if s not in SLICES]
        if bad:
            raise UsageError(f"unknown slice level(s) {bad}; choose from {sorted(SLICES)}")
        picks = [(",".join(c), slice_indices(c, sizes)) for c in itertools.product(args.slices, repeat=len(sizes))]
    coh = coherence_matrix(f)
    lines = ["slice," + ",".join(f"omega{i + 1}" for i in range(len(sizes))) + ",j,k,re,im\n"]
    for label, idx in picks:
        om = [i / b for i, b in zip(idx, sizes)]
        mat = coh[idx]
        for j in range(f.p):
            for k in range(f.p):
                lines.append(f'"{label}",' + ",".join(f"{w:.17g}" for w in om)
                             + f",{j + 1},{k + 1},{mat[j, k].real:.17g},{mat[j, k].imag:.17g}\n")
    Path(args.out).write_text(metadata_line("coherence", grid=list(sizes), config=_echo(args)) + "".join(lines))
    return 0


def cmd_study(args) -> int:
    try:
        cfg = StudyConfig(p=args.p, grid=tuple(args.grid), replicates=args.replicates, taus=tuple(args.taus),
                          bandwidths=tuple(args.bandwidths), seed=args.seed,
                          ml_checkpoints=tuple(args.ml_checkpoints or ()), ml_start=args.ml_start,
                          burn_in=args.burn_in, epsilon=args.epsilon, workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc))
    res = run_study(cfg)
    write_study(args.out, res.rows, config=asdict(cfg))
    sidecar = Path(str(args.out) + ".failures.txt")
    if res.failures:
        sidecar.write_text("\n".join(res.failures) + "\n")
        log.warning("%d failures written to %s", len(res.failures), sidecar)
    elif sidecar.exists():
        sidecar.unlink()
    for row in res.summary():
        print(json.dumps(row))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _echo(args) -> dict:
    # output locations are left out so identical runs write identical bytes
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
            if k not in ("func", "out", "out_dir")}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mvspectra", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw a multivariate Matern field")
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--grid", type=_int_list, default=(16, 16))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--missing-frac", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    def estimator_flags(q, tau=1.25, burn_in=50, epsilon=0.01):
        q.add_argument("--tau", type=float, default=tau)
        q.add_argument("--bandwidth", type=float, default=0.30)
        q.add_argument("--burn-in", type=int, default=burn_in)
        q.add_argument("--epsilon", type=float, default=epsilon)
        q.add_argument("--max-avg-iters", type=int, default=200)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--pcg-tol", type=float, default=1e-6)
        q.add_argument("--pcg-max-iters", type=int, default=500)
        q.add_argument("--neighbors", type=int, default=10)

    e = sub.add_parser("estimate", help="estimate the cross-spectrum of a field CSV")
    e.add_argument("field", type=_existing)
    e.add_argument("--out", required=True)
    estimator_flags(e)
    e.set_defaults(func=cmd_estimate)

    d = sub.add_parser("decompose", help="factor decomposition of an estimated spectrum")
    d.add_argument("spectrum", type=_existing)
    d.add_argument("field", type=_existing)
    d.add_argument("--J", type=int, nargs="+", default=[1, 2])
    d.add_argument("--scale", choices=["sd", "variance"], default="sd",
                   help="multiplier in the band reconstruction: sqrt(C_kk(0)) or C_kk(0)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--pcg-tol", type=float, default=1e-6)
    d.add_argument("--neighbors", type=int, default=10)
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_decompose)

    c = sub.add_parser("coherence", help="coherence matrices at low/mid/high frequency slices")
    c.add_argument("spectrum", type=_existing)
    c.add_argument("--slices", type=lambda t: t.split(","), default=["low", "mid", "high"])
    c.add_argument("--index", type=lambda t: tuple(int(v) for v in t.split(",")), default=None,
                   help="explicit 0-based frequency index instead of named slices")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_coherence)

    t = sub.add_parser("study", help="simulation study of estimator accuracy")
    t.add_argument("--p", type=int, default=2)
    t.add_argument("--grid", type=_int_list, default=(16, 16))
    t.add_argument("--replicates", type=int, default=1)
    t.add_argument("--taus", type=_float_list, default=(1.0, 1.25))
    t.add_argument("--bandwidths", type=_float_list, default=(0.30,))
    t.add_argument("--ml-checkpoints", type=_int_list, default=None)
    t.add_argument("--ml-start", choices=["empirical", "perturbed"], default="empirical")
    t.add_argument("--burn-in", type=int, default=50)
    t.add_argument("--epsilon", type=float, default=0.01)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_study)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        _fail(2, str(exc))
    except (FormatError, FileNotFoundError) as exc:
        _fail(2, f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        _fail(1, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
