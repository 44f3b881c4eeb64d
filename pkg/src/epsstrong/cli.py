"""Command-line experiment runner.

Subcommands ``bm``, ``diffusion``, ``validate`` and ``euler-compare`` write
CSV files (header row plus ``#`` provenance lines) into ``--out``.

Exit codes: 0 ok, 1 usage, 2 precondition, 3 validation failure, 4 runtime.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .diffusion import (
    ConfigError,
    PreconditionError,
    example1_model,
    example2_model,
    load_model,
)
from .distributions import (
    EXIT_SPEC,
    ExitLaw,
    laplace_bound,
    loggamma_laplace,
    loggamma_moment,
    sample_gamma32,
    sample_w,
    w_cdf,
)
from .oracle import EulerDiverged, euler_terminal, exit_study
from .rng import RngStream
from .skeleton import ModelError, SkeletonRunaway, generate_until, simulate_counts
from .stats import (
    CountSample,
    TailBoundSpec,
    clt_standardize,
    empirical_survival,
    fit_inverse_eps,
    ks_statistic,
    ks_two_sample,
    limit_functional,
    mean_bound,
    normal_cdf,
    regression_csv,
    renewal_limit_bm,
    summary_csv,
    tail_bound,
    tail_grid,
)

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- output helpers -------------------------------------------------------------------

def config_hash(args) -> str:
    """SHA-256 of the run configuration; ``threads`` and ``out`` do not change results."""
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("threads", "out", "func") and not k.startswith("_")}
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def provenance(args) -> list[str]:
    return [f"epsstrong {__version__}", f"command {args.command}",
            f"config_sha256 {config_hash(args)}", f"seed {args.seed}"]


def write_csv(path: Path, header, rows, args):
    buf = io.StringIO()
    for line in provenance(args):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def eps_tag(eps: float) -> str:
    return repr(float(eps))


def histogram_rows(counts):
    counts = np.asarray(counts, dtype=np.int64)
    lo, hi = int(counts.min()), int(counts.max())
    freq = np.bincount(counts - lo, minlength=hi - lo + 1)
    return [(lo + i, int(f)) for i, f in enumerate(freq)]


def _metric(name: str, eps: float, multi: bool) -> str:
    return f"{name}[eps={eps_tag(eps)}]" if multi else name


def _check_common(args):
    if args.seed is None:
        raise UsageError("--seed is required (runs are never unseeded)")
    eps = args.epsilon or []
    for e in eps:
        if not (e > 0 and math.isfinite(e)):
            raise UsageError(f"--epsilon must be positive, got {e}")
    if args.paths is not None and args.paths < 1:
        raise UsageError(f"--paths must be >= 1, got {args.paths}")
    if not args.horizon > 0:
        raise UsageError(f"--horizon must be positive, got {args.horizon}")
    if args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")


def _load_model(args):
    """Returns ``(model, lipschitz_constant)``."""
    if args.model and args.example:
        raise UsageError("give either --model or --example, not both")
    if args.model:
        try:
            spec = load_model(args.model, horizon=args.horizon, x0=args.x0)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read model config {args.model}: {exc}") from exc
        except (KeyError, TypeError) as exc:
            raise UsageError(f"model config {args.model}: missing or bad field {exc}") from exc
        return spec.model, spec.lipschitz_constant
    if args.example == 1:
        return example1_model(args.horizon, args.x0), None
    if args.example == 2:
        return example2_model(args.horizon, args.x0), None
    raise UsageError("need --example {1,2} or --model FILE")


# -- bm ---------------------------------------------------------------------------------

def cmd_bm(args) -> int:
    _check_common(args)
    eps_list = args.epsilon or [0.02]
    paths = args.paths or (1000 if args.quick else 10_000)
    out = Path(args.out)
    multi = len(eps_list) > 1
    rows, sweep = [], []
    for eps in eps_list:
        batch = simulate_counts(args.x0, args.horizon, None, eps, args.seed, paths, threads=args.threads)
        _count_outputs(out, eps, batch.counts, args, rows, sweep, multi)
        sample = CountSample(eps, args.horizon, batch.counts)
        z = clt_standardize(sample)
        n = len(z)
        rows += [
            (_metric("clt_mean", eps, multi), float(z.mean()), float(z.std(ddof=1) / math.sqrt(n)) if n > 1 else None, n),
            (_metric("clt_var", eps, multi), float(z.var(ddof=1)) if n > 1 else None, None, n),
            (_metric("clt_ks", eps, multi), ks_statistic(z, normal_cdf), None, n),
        ]
        write_csv(out / f"clt_eps{eps_tag(eps)}.csv", ["path", "count", "standardized"],
                  [(i, int(c), float(v)) for i, (c, v) in enumerate(zip(batch.counts, z))], args)
    rows.append(("renewal_limit", renewal_limit_bm(args.horizon), None, 0))
    _finish_sweep(out, rows, sweep, args)
    return EXIT_OK


def _count_outputs(out, eps, counts, args, rows, sweep, multi):
    n = len(counts)
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(n)) if n > 1 else None
    e2 = eps * eps
    rows += [
        (_metric("mean_count", eps, multi), mean, se, n),
        (_metric("eps2_mean_count", eps, multi), e2 * mean, None if se is None else e2 * se, n),
        (_metric("var_count", eps, multi), float(counts.var(ddof=1)) if n > 1 else None, None, n),
    ]
    sweep.append((eps, mean))
    write_csv(out / f"histogram_eps{eps_tag(eps)}.csv", ["count", "paths"], histogram_rows(counts), args)
    print(f"eps={eps_tag(eps)} paths={n} mean_count={mean:.6g} eps2_mean={e2 * mean:.6g}"
          + (f" +- {e2 * se:.2g}" if se else ""))


def _finish_sweep(out, rows, sweep, args):
    if len({e for e, _ in sweep}) >= 3:
        fit = fit_inverse_eps(sweep)
        n = len(sweep)
        rows += [("slope", fit.slope, None, n), ("intercept", fit.intercept, None, n),
                 ("r_squared", fit.r_squared, None, n)]
        print(f"fit mean_count = {fit.slope:.6g} / eps^2 + {fit.intercept:.6g} (r2={fit.r_squared:.6f})")
    write_text(out / "sweep.csv", regression_csv(sweep, provenance(args)))
    write_text(out / "summary.csv", summary_csv(rows, provenance(args)))


# -- diffusion ----------------------------------------------------------------------------

def cmd_diffusion(args) -> int:
    _check_common(args)
    if not args.epsilon:
        raise UsageError("--epsilon is required for diffusion runs")
    model, lip = _load_model(args)
    paths = args.paths or (1000 if args.quick else 10_000)
    out = Path(args.out)
    multi = len(args.epsilon) > 1
    rows, sweep = [], []
    T = args.horizon
    s_end = float(model.rho(T))
    for eps in args.epsilon:
        if lip is None:
            model.check_epsilon(eps)
            batch = simulate_counts(model.x0, s_end, model.eta, eps, args.seed, paths, threads=args.threads)
        else:
            if not lip > 0:
                raise PreconditionError("lipschitz_constant must be positive")
            batch = simulate_counts(model.x0, s_end, None, eps / lip, args.seed, paths, threads=args.threads)
        _count_outputs(out, eps, batch.counts, args, rows, sweep, multi)
        for i in range(min(args.dump_paths, paths)):
            _dump_path(out, model, lip, T, eps, i, args)
    if args.functional_paths:
        est = limit_functional(model, T, args.functional_paths, args.functional_grid, args.seed,
                               threads=args.threads, start_index=1 << 41)
        rows.append(("limit_functional", est.value, est.stderr, est.n))
        print(f"limit functional = {est.value:.6g} +- {est.stderr:.2g}")
    _finish_sweep(out, rows, sweep, args)
    return EXIT_OK


def _dump_path(out, model, lip, T, eps, i, args):
    stream = RngStream(args.seed, i)
    s_end = float(model.rho(T))
    if lip is None:
        path = generate_until(model.x0, s_end, model.eta, eps, stream)
    else:
        path = generate_until(model.x0, s_end, None, eps / lip, stream)
    t = np.asarray(model.rho_inv(path.s), dtype=float)
    t[0] = 0.0
    y = np.asarray(model.f(t, path.x), dtype=float)
    head = "".join(f"# {line}\n" for line in provenance(args)) + "n,t,y,s,x\n"
    body = "".join(f"{n},{a!r},{b!r},{c!r},{d!r}\n" for n, (a, b, c, d) in
                   enumerate(zip(t.tolist(), y.tolist(), path.s.tolist(), path.x.tolist())))
    write_text(out / "paths" / f"path_eps{eps_tag(eps)}_{i}.csv", head + body)


# -- validate -------------------------------------------------------------------------------

class _Checks:
    def __init__(self):
        self.rows = []

    def add(self, name, value, threshold, ok):
        self.rows.append((name, float(value), float(threshold), bool(ok)))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.6g} (threshold {threshold:.6g})")

    @property
    def failed(self):
        return [r[0] for r in self.rows if not r[3]]


def cmd_validate(args) -> int:
    _check_common(args)
    quick = args.quick
    n_samples = args.paths or (100_000 if quick else 1_000_000)
    checks = _Checks()
    out = Path(args.out)
    seed = args.seed

    # log-gamma moments and the Gamma(3/2, 2) sampler
    w = sample_w(RngStream(seed, 0), n_samples)
    for k in (1, 2, 3):
        wk = w ** k
        z = abs(wk.mean() - loggamma_moment(EXIT_SPEC, k)) / (wk.std(ddof=1) / math.sqrt(n_samples))
        checks.add(f"w_moment_{k}_zscore", z, 5.0, z < 5.0)
    a = sample_gamma32(RngStream(seed, 1), n_samples)
    z = abs(a.mean() - 3.0) / (a.std(ddof=1) / math.sqrt(n_samples))
    checks.add("gamma32_mean_zscore", z, 5.0, z < 5.0)
    ks = ks_statistic(w, w_cdf)
    thr = 1.63 / math.sqrt(n_samples) + 0.002
    checks.add("w_sample_ks", ks, thr, ks < thr)

    # Laplace transform: bound domination and MC agreement
    worst = -math.inf
    for bp in (3.0, 4.0, 6.0):
        for lam in (1.0, 10.0, 1e2, 1e3, 1e4):
            worst = max(worst, loggamma_laplace(EXIT_SPEC, lam) / laplace_bound(EXIT_SPEC, lam, bp))
    checks.add("laplace_over_bound_max_ratio", worst, 1.0, worst <= 1.0)
    for lam in (0.5, 1.0, 5.0):
        v = np.exp(-lam * w)
        z = abs(v.mean() - loggamma_laplace(EXIT_SPEC, lam)) / (v.std(ddof=1) / math.sqrt(n_samples))
        checks.add(f"laplace_mc_zscore_lambda_{lam:g}", z, 5.0, z < 5.0)

    # brute-force exit oracle at 3 grid levels
    eps = 0.1
    r = ExitLaw(eps).r_eps
    n_rec = 2000 if quick else 10_000
    dt = r * (2e-5 if quick else 5e-6)
    study = exit_study(eps, dt, 3, n_rec, seed + 1, threads=args.threads, phi_scale=args.phi_scale)
    write_text(out / "oracle_exit.csv", study.to_csv(provenance(args)))
    for d, k in zip(study.dt, study.ks):
        # sampling noise plus the late-exit bias of a discretely monitored walk
        thr = 1.63 / math.sqrt(n_rec) + 15.0 * math.sqrt(d / r)
        checks.add(f"grid_exit_ks_dt_{d / r:.3g}r", k, thr, k < thr)
    trend = float(np.max(np.diff(study.ks)))
    checks.add("grid_exit_ks_shrinks_with_dt", -trend, 0.0, trend > 0.0)
    side = float(study.plus_fraction[0])
    thr = 4.0 * 0.5 / math.sqrt(n_rec)
    checks.add("grid_exit_side_balance", abs(side - 0.5), thr, abs(side - 0.5) < thr)

    # tail-bound domination and the mean bound at eps = 0.1, T = 1
    n_paths = 2000 if quick else 10_000
    counts = simulate_counts(0.0, 1.0, None, 0.1, seed + 2, n_paths, threads=args.threads).counts
    js = tail_grid(counts, TailBoundSpec.brownian(4.0), 1.0, 0.1)
    bound = tail_bound(TailBoundSpec.brownian(4.0), 1.0, 0.1, js, clip=False)
    live = bound <= 1.0
    excess = float(np.max(empirical_survival(counts, js[live]) - bound[live])) if live.any() else -1.0
    checks.add("tail_bound_excess", excess, 0.0, excess <= 0.0)
    mb = mean_bound(1.0, 0.1, 1.1)
    checks.add("mean_count_over_mean_bound", counts.mean() / mb, 1.0, counts.mean() <= mb)

    write_csv(out / "validate.csv", ["check", "value", "threshold", "pass"], checks.rows, args)
    if checks.failed:
        print(f"{len(checks.failed)} check(s) failed: {', '.join(checks.failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


# -- euler-compare ----------------------------------------------------------------------------

def cmd_euler_compare(args) -> int:
    _check_common(args)
    model, lip = _load_model(args)
    if model.coeffs is None:
        raise PreconditionError(f"model {model.label!r} has no SDE coefficients for an Euler run")
    eps = (args.epsilon or [0.1])[0]
    paths = args.paths or (1000 if args.quick else 10_000)
    T = args.horizon
    s_end = float(model.rho(T))

    t0 = time.perf_counter()
    if lip is None:
        model.check_epsilon(eps)
        batch = simulate_counts(model.x0, s_end, model.eta, eps, args.seed, paths, threads=args.threads)
    else:
        batch = simulate_counts(model.x0, s_end, None, eps / lip, args.seed, paths, threads=args.threads)
    t_before = np.asarray(model.rho_inv(batch.s_before), dtype=float)
    y_sk = np.asarray(model.f(t_before, batch.x_before), dtype=float)
    wall_sk = time.perf_counter() - t0
    avg_step = T / float(batch.counts.mean())

    dt = args.dt or avg_step
    t0 = time.perf_counter()
    y_eu = euler_terminal(model.coeffs, float(model.f(0.0, model.x0)), T, dt, args.seed, paths,
                          threads=args.threads)
    wall_eu = time.perf_counter() - t0
    ks = ks_two_sample(y_sk, y_eu)
    rows = [("skeleton", paths, wall_sk, avg_step, ks), ("euler", paths, wall_eu, dt, ks)]
    write_csv(Path(args.out) / "euler_compare.csv", ["method", "paths", "wall_s", "avg_step", "ks"], rows, args)
    print(f"skeleton: {wall_sk:.3f} s, average step {avg_step:.3g}")
    print(f"euler:    {wall_eu:.3f} s, step {dt:.3g}")
    print(f"marginal KS at T={T}: {ks:.4f}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--epsilon", type=float, action="append",
                        help="tolerance; repeat for a sweep")
    common.add_argument("--horizon", type=float, default=1.0)
    common.add_argument("--x0", type=float, default=0.0)
    common.add_argument("--paths", type=int, default=None)
    common.add_argument("--seed", type=int, default=None, help="mandatory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--model", default=None, help="model config (JSON)")
    common.add_argument("--example", type=int, choices=(1, 2), default=None)
    common.add_argument("--quick", action="store_true", help="reduced sample sizes")

    parser = _Parser(prog="epsstrong", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"epsstrong {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("bm", parents=[common], help="Brownian skeleton step counts")
    p.set_defaults(func=cmd_bm)

    p = sub.add_parser("diffusion", parents=[common], help="L/G-class diffusion approximations")
    p.add_argument("--dump-paths", type=int, default=0, help="write the first N paths")
    p.add_argument("--functional-paths", type=int, default=0,
                   help="estimate the limit functional with this many Brownian paths")
    p.add_argument("--functional-grid", type=int, default=10_000)
    p.set_defaults(func=cmd_diffusion)

    p = sub.add_parser("validate", parents=[common], help="oracle checks")
    p.add_argument("--phi-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("euler-compare", parents=[common], help="skeleton vs Euler-Maruyama")
    p.add_argument("--dt", type=float, default=None, help="Euler step (default: matched)")
    p.set_defaults(func=cmd_euler_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PreconditionError, ModelError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (SkeletonRunaway, EulerDiverged) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
