"""L-class and G-class diffusions as functions of a time-changed Brownian motion.

An L-class SDE ``dX = (a(t) X + b(t)) dt + sigma_bar(t) dB`` has the
representation ``X_t = f(t, x0 + B_rho(t))`` with::

    f(t, x)  = sigma_bar(t) / sqrt(rho'(t)) * x + c(t)
    c(t)     = exp(I(t)) * int_0^t b(s) exp(-I(s)) ds,   I(t) = int_0^t a
    rho(t)   = int_0^t sigma_bar(s)^2 exp(-2 I(s)) ds

A G-class model uses ``exp(f)`` in place of ``f``. Running the Brownian
skeleton with ``eta(x) = 1 / ((e / kappa_min + 1) F(2x^2 + 1))`` and mapping
each point through ``(s, x) -> (rho^-1(s), f(rho^-1(s), x))`` gives a path
within ``eps`` of the diffusion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .rng import RngStream
from .skeleton import (
    ETA_EXP,
    ETA_SQRT,
    Eta,
    ModelError,
    SkeletonPath,
    generate_until,
    simulate_counts,
)

SCHEMA_VERSION = 1
TABLE_NODES = 1024
GL_ORDER = 16
QUAD_TOL = 1e-13
KAPPA_NODES = 10_000
KAPPA_SAFETY = 0.99
BISECT_TOL = 1e-12
BISECT_MAX_ITER = 200
ENVELOPE_T_NODES = 41
ENVELOPE_X_NODES = 401
ENVELOPE_X_RANGE = (-10.0, 10.0)


class ConfigError(ModelError):
    """Malformed model configuration (missing or unknown field)."""


class PreconditionError(ValueError):
    """Tolerance too large for the model (``eps * eta(0) > 1/sqrt(2)``)."""


def _vectorize_t(fn):
    """Make a coefficient function return an array shaped like its input."""
    def wrapped(t):
        t_arr = np.asarray(t, dtype=float)
        out = np.broadcast_to(np.asarray(fn(t_arr), dtype=float), t_arr.shape)
        return float(out) if out.ndim == 0 else np.array(out)
    return wrapped


@dataclass(frozen=True)
class CoefficientSet:
    """Time-dependent SDE coefficients.

    L-class: ``sigma(t, x) = sigma_bar(t)``, ``mu(t, x) = a(t) x + b(t)``.
    G-class: ``sigma(t, x) = sigma_under * x``, ``mu(t, x) = a(t) x + b(t) x ln x``.
    """

    kind: str
    a: Callable
    b: Callable
    sigma_bar: Callable | None = None
    sigma_under: float | None = None

    def __post_init__(self):
        if self.kind not in ("L", "G"):
            raise ModelError(f"kind must be 'L' or 'G', got {self.kind!r}")
        if self.kind == "L" and self.sigma_bar is None:
            raise ModelError("L-class coefficients need sigma_bar")
        if self.kind == "G" and (self.sigma_under is None or self.sigma_under < 0):
            raise ModelError("G-class coefficients need a constant sigma_under >= 0")

    def drift(self, t, x):
        if self.kind == "L":
            return self.a(t) * x + self.b(t)
        return self.a(t) * x + self.b(t) * x * np.log(x)

    def diffusion(self, t, x):
        if self.kind == "L":
            return self.sigma_bar(t) * np.ones_like(x)
        return self.sigma_under * x


@dataclass(frozen=True)
class Envelope:
    """Growth envelope ``F``: ``p0 + p1 sqrt|y|`` (``sqrt``) or ``p0 exp(p1 sqrt|y|)`` (``exp``)."""

    kind: str
    p0: float
    p1: float

    def __post_init__(self):
        if self.kind not in ("sqrt", "exp"):
            raise ModelError(f"unknown envelope kind {self.kind!r}")
        if self.p0 <= 0 or self.p1 < 0:
            raise ModelError("envelope parameters must satisfy p0 > 0, p1 >= 0")

    def __call__(self, y):
        r = np.sqrt(np.abs(np.asarray(y, dtype=float)))
        out = self.p0 + self.p1 * r if self.kind == "sqrt" else self.p0 * np.exp(self.p1 * r)
        return float(out) if np.ndim(out) == 0 else out

    def eta(self, kappa_min: float) -> Eta:
        kind = ETA_SQRT if self.kind == "sqrt" else ETA_EXP
        return Eta(kind, float(self.p0), float(self.p1), math.e / kappa_min + 1.0)


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    coeffs: CoefficientSet | None
    f: Callable
    c: Callable
    rho: Callable
    rho_inv: Callable
    rho_prime: Callable
    F: Envelope
    kappa_min: float
    eta: Eta
    x0: float
    horizon: float
    df_dt: Callable | None = None
    df_dx: Callable | None = None
    label: str = "custom"
    base: "DiffusionModel | None" = field(default=None, repr=False)

    @property
    def eps_max(self) -> float:
        """Largest admissible tolerance: ``eps * eta(0) <= 1/sqrt(2)``.

        eta is even and decreasing on the positive axis, so ``eta(0)`` is its maximum.
        """
        return 1.0 / (math.sqrt(2.0) * self.eta(0.0))

    def check_epsilon(self, epsilon: float):
        if not epsilon > 0:
            raise PreconditionError("epsilon must be positive")
        if epsilon * self.eta(0.0) > 1.0 / math.sqrt(2.0):
            raise PreconditionError(
                f"epsilon={epsilon} exceeds the admissible eps_0={self.eps_max:.6g} "
                f"for model {self.label!r}"
            )


# -- numerical building blocks -----------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


def _panel_integrals(fn, edges):
    """Gauss-Legendre integral of ``fn`` over each panel ``[edges[i], edges[i+1]]``."""
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    pts = lo + half * (_GL_X[None, :] + 1.0)
    vals = np.asarray(fn(pts), dtype=float) * np.ones_like(pts)
    return (half[:, 0] * (vals @ _GL_W))


def cumulative_integral(fn, nodes, tol: float = QUAD_TOL, max_split: int = 6):
    """``int_{nodes[0]}^{nodes[i]} fn`` for every node.

    Each panel is split in two until the cumulative values of successive
    refinements agree to ``tol``; ``fn`` must accept arrays.
    """
    prev = None
    for level in range(max_split + 1):
        k = 2 ** level
        edges = np.concatenate([np.linspace(a, b, k + 1)[:-1] for a, b in zip(nodes[:-1], nodes[1:])]
                               + [nodes[-1:]])
        panels = _panel_integrals(fn, edges).reshape(len(nodes) - 1, k).sum(axis=1)
        cum = np.concatenate([[0.0], np.cumsum(panels)])
        if prev is not None and np.max(np.abs(cum - prev)) <= tol * max(1.0, np.max(np.abs(cum))):
            return cum
        prev = cum
    raise ModelError("quadrature did not converge; are the coefficients smooth?")


def monotone_inverse(fn, targets, lo: float, hi: float, tol: float = BISECT_TOL,
                     max_iter: int = BISECT_MAX_ITER):
    """Vectorized bisection for an increasing ``fn`` on ``[lo, hi]``."""
    y = np.asarray(targets, dtype=float)
    a = np.full_like(y, lo)
    b = np.full_like(y, hi)
    if np.any(y < fn(lo) - tol) or np.any(y > fn(hi) + tol):
        raise ModelError(f"inverse requested outside [{fn(lo)}, {fn(hi)}]")
    for _ in range(max_iter):
        if np.all(b - a <= tol):
            break
        mid = 0.5 * (a + b)
        below = fn(mid) < y
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    out = 0.5 * (a + b)
    return float(out) if out.ndim == 0 else out


def _fd_partials(f, t, x, horizon):
    ht = 1e-6 * max(1.0, horizon)
    hx = 1e-6 * np.maximum(1.0, np.abs(x))
    t_lo = np.maximum(t - ht, 0.0)
    t_hi = t + ht
    dt = (f(t_hi, x) - f(t_lo, x)) / (t_hi - t_lo)
    dx = (f(t, x + hx) - f(t, x - hx)) / (2.0 * hx)
    return dt, dx


def validate_envelope(f, F: Envelope, horizon: float, df_dt=None, df_dx=None,
                      t_nodes: int = ENVELOPE_T_NODES, x_nodes: int = ENVELOPE_X_NODES,
                      x_range=ENVELOPE_X_RANGE):
    """Check ``max(|df/dt|, |df/dx|) <= F(x^2)`` on a ``(t, x)`` grid.

    Analytic partials are used when given; otherwise central differences, with
    a relative slack that covers their truncation error.
    """
    t = np.linspace(0.0, horizon, t_nodes)[:, None]
    x = np.linspace(*x_range, x_nodes)[None, :]
    t, x = np.broadcast_arrays(t, x)
    if df_dt is not None and df_dx is not None:
        pt, px = df_dt(t, x), df_dx(t, x)
        rel = 1e-12
    else:
        pt, px = _fd_partials(f, t, x, horizon)
        rel = 1e-6
    worst = np.maximum(np.abs(pt), np.abs(px))
    bound = F(x * x)
    bad = ~(worst <= bound * (1.0 + rel) + 1e-12)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ModelError(
            f"envelope violated at t={t[i, j]:.6g}, x={x[i, j]:.6g}: "
            f"|partial f|={worst[i, j]:.6g} > F(x^2)={bound[i, j]:.6g}"
        )


def _smoothness_check(coeffs: CoefficientSet, horizon: float):
    grid = np.linspace(0.0, horizon, 2049)
    h = grid[1] - grid[0]
    funcs = {"a": coeffs.a, "b": coeffs.b}
    if coeffs.kind == "L":
        funcs["sigma_bar"] = coeffs.sigma_bar
    for name, fn in funcs.items():
        v = np.asarray(fn(grid), dtype=float) * np.ones_like(grid)
        if not np.all(np.isfinite(v)):
            raise ModelError(f"coefficient {name} is not finite on [0, {horizon}]")
        d = np.diff(v) / h
        # a jump shows up as a derivative spike against its neighbours
        if np.any(np.abs(np.diff(d)) > 1e3 * (np.median(np.abs(d)) + 1.0)):
            raise ModelError(f"coefficient {name} does not look C^1 on [0, {horizon}]")
    if coeffs.kind == "L" and np.any(coeffs.sigma_bar(grid) <= 0):
        raise ModelError("sigma_bar must be positive on the horizon")


# -- model construction --------------------------------------------------------------

def build_lclass(coeffs: CoefficientSet, horizon: float, envelope: Envelope, x0: float = 0.0,
                 overrides: dict | None = None, label: str = "custom",
                 table_nodes: int = TABLE_NODES) -> DiffusionModel:
    """Derive ``f, c, rho, rho^-1, kappa_min, eta`` for an L-class SDE.

    ``overrides`` may supply closed forms for any of ``rho``, ``rho_inv``,
    ``rho_prime``, ``c``, ``f``, ``df_dt``, ``df_dx`` and ``kappa_min``; the
    rest is computed numerically. Tables extend to twice the horizon so the
    final skeleton step, which overshoots ``rho(T)``, can still be mapped back.
    """
    if coeffs.kind != "L":
        raise ModelError("build_lclass needs L-class coefficients")
    if not horizon > 0:
        raise ModelError("horizon must be positive")
    ov = dict(overrides or {})
    a = _vectorize_t(coeffs.a)
    b = _vectorize_t(coeffs.b)
    sig = _vectorize_t(coeffs.sigma_bar)
    _smoothness_check(CoefficientSet("L", a, b, sig), horizon)

    t_max = 2.0 * horizon
    nodes = np.linspace(0.0, t_max, table_nodes + 1)

    int_a_nodes = cumulative_integral(a, nodes)
    int_a = CubicHermiteSpline(nodes, int_a_nodes, a(nodes))

    def rho_prime_num(t):
        return sig(t) ** 2 * np.exp(-2.0 * int_a(t))

    rho_prime = ov.get("rho_prime", rho_prime_num)
    if "rho" in ov:
        rho = ov["rho"]
    else:
        rho_nodes = cumulative_integral(rho_prime_num, nodes)
        if np.any(np.diff(rho_nodes) <= 0) or np.any(rho_prime_num(nodes) <= 0):
            raise ModelError("rho is not strictly increasing")
        rho_spline = CubicHermiteSpline(nodes, rho_nodes, rho_prime_num(nodes))

        def rho(t):
            out = rho_spline(t)
            return float(out) if np.ndim(out) == 0 else out

    if "rho_inv" in ov:
        rho_inv = ov["rho_inv"]
    else:
        def rho_inv(s):
            return monotone_inverse(rho, s, 0.0, t_max)

    if "c" in ov:
        c = ov["c"]
    else:
        j_nodes = cumulative_integral(lambda s: b(s) * np.exp(-int_a(s)), nodes)
        j_spline = CubicHermiteSpline(nodes, j_nodes, b(nodes) * np.exp(-int_a(nodes)))

        def c(t):
            out = np.exp(int_a(t)) * j_spline(t)
            return float(out) if np.ndim(out) == 0 else out

    if "f" in ov:
        f = ov["f"]
    else:
        def f(t, x):
            return sig(t) / np.sqrt(rho_prime(t)) * x + c(t)

    if "kappa_min" in ov:
        kappa_min = float(ov["kappa_min"])
    else:
        grid = np.linspace(0.0, rho(horizon), KAPPA_NODES)
        kappa_min = KAPPA_SAFETY * float(np.min(rho_prime(rho_inv(grid))))
    if not kappa_min > 0:
        raise ModelError(f"kappa_min={kappa_min} must be positive")

    df_dt, df_dx = ov.get("df_dt"), ov.get("df_dx")
    validate_envelope(f, envelope, horizon, df_dt, df_dx)

    return DiffusionModel(coeffs=CoefficientSet("L", a, b, sig), f=f, c=c, rho=rho,
                          rho_inv=rho_inv, rho_prime=rho_prime, F=envelope,
                          kappa_min=kappa_min, eta=envelope.eta(kappa_min), x0=float(x0),
                          horizon=float(horizon), df_dt=df_dt, df_dx=df_dx, label=label)


def build_gclass(base: DiffusionModel, envelope: Envelope, label: str | None = None) -> DiffusionModel:
    """Replace ``f`` by ``exp(f)``, keeping the time change of ``base``."""
    base_f = base.f

    def f(t, x):
        return np.exp(base_f(t, x))

    df_dt = df_dx = None
    if base.df_dt is not None and base.df_dx is not None:
        bdt, bdx = base.df_dt, base.df_dx

        def df_dt(t, x):
            return np.exp(base_f(t, x)) * bdt(t, x)

        def df_dx(t, x):
            return np.exp(base_f(t, x)) * bdx(t, x)

    validate_envelope(f, envelope, base.horizon, df_dt, df_dx)

    coeffs = None
    if base.coeffs is not None:
        grid = np.linspace(0.0, 2.0 * base.horizon, 257)
        sig = np.asarray(base.coeffs.sigma_bar(grid)) * np.ones_like(grid)
        # exp of an L-class process is G-class only for constant sigma_bar
        if np.allclose(sig, sig[0], rtol=1e-12, atol=0.0):
            s0 = float(sig[0])
            a_l, b_l = base.coeffs.a, base.coeffs.b
            coeffs = CoefficientSet("G", a=_vectorize_t(lambda t: b_l(t) + 0.5 * s0 * s0),
                                    b=_vectorize_t(a_l), sigma_under=s0)
    return DiffusionModel(coeffs=coeffs, f=f, c=base.c, rho=base.rho, rho_inv=base.rho_inv,
                          rho_prime=base.rho_prime, F=envelope, kappa_min=base.kappa_min,
                          eta=envelope.eta(base.kappa_min), x0=base.x0, horizon=base.horizon,
                          df_dt=df_dt, df_dx=df_dx, label=label or f"exp({base.label})",
                          base=base)


# -- paper examples -------------------------------------------------------------------

def example1_coefficients() -> CoefficientSet:
    return CoefficientSet(
        "L",
        a=lambda t: np.cos(t) / (2.0 + np.sin(t)),
        b=lambda t: np.cos(t),
        sigma_bar=lambda t: 2.0 + np.sin(t),
    )


def example1_closed_forms(horizon: float = 1.0) -> dict:
    def c(t):
        return (2.0 + np.sin(t)) * np.log1p(np.sin(t) / 2.0)

    def f(t, x):
        return (2.0 + np.sin(t)) * (x / 2.0 + np.log1p(np.sin(t) / 2.0))

    def df_dt(t, x):
        return np.cos(t) * (x / 2.0 + np.log1p(np.sin(t) / 2.0)) + np.cos(t)

    def df_dx(t, x):
        return (2.0 + np.sin(t)) / 2.0 * np.ones_like(x)

    return {
        "rho": lambda t: 4.0 * np.asarray(t, dtype=float) if np.ndim(t) else 4.0 * float(t),
        "rho_inv": lambda s: np.asarray(s, dtype=float) / 4.0 if np.ndim(s) else float(s) / 4.0,
        "rho_prime": lambda t: np.full_like(np.asarray(t, dtype=float), 4.0),
        "c": c,
        "f": f,
        "df_dt": df_dt,
        "df_dx": df_dx,
        "kappa_min": 4.0,
    }


EXAMPLE1_ENVELOPE = Envelope("sqrt", 3.0, 0.5)


def example1_model(horizon: float = 1.0, x0: float = 0.0, closed_form: bool = True) -> DiffusionModel:
    ov = example1_closed_forms(horizon) if closed_form else None
    return build_lclass(example1_coefficients(), horizon, EXAMPLE1_ENVELOPE, x0=x0,
                        overrides=ov, label="example1")


def example2_coefficients() -> CoefficientSet:
    return CoefficientSet(
        "L",
        a=lambda t: 0.5 / (1.0 + t),
        b=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        sigma_bar=lambda t: np.full_like(np.asarray(t, dtype=float), 2.0),
    )


def example2_closed_forms(horizon: float = 1.0) -> dict:
    return {
        "rho": lambda t: 4.0 * np.log1p(t),
        "rho_inv": lambda s: np.expm1(np.asarray(s, dtype=float) / 4.0)
        if np.ndim(s) else math.expm1(float(s) / 4.0),
        "rho_prime": lambda t: 4.0 / (1.0 + np.asarray(t, dtype=float)),
        "c": lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        "f": lambda t, x: x * np.sqrt(1.0 + t),
        "df_dt": lambda t, x: x / (2.0 * np.sqrt(1.0 + t)),
        "df_dx": lambda t, x: np.sqrt(1.0 + t) * np.ones_like(x),
        # rho'(rho^-1(s)) = 4 exp(-s/4) is smallest at s = rho(horizon)
        "kappa_min": 4.0 / (1.0 + horizon),
    }


EXAMPLE2_ENVELOPE = Envelope("sqrt", math.sqrt(2.0), 0.5)


def example2_model(horizon: float = 1.0, x0: float = 0.0, closed_form: bool = True) -> DiffusionModel:
    ov = example2_closed_forms(horizon) if closed_form else None
    return build_lclass(example2_coefficients(), horizon, EXAMPLE2_ENVELOPE, x0=x0,
                        overrides=ov, label="example2")


def pure_bm_model(horizon: float = 1.0, x0: float = 0.0, closed_form: bool = True) -> DiffusionModel:
    zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))  # noqa: E731
    one = lambda t: np.ones_like(np.asarray(t, dtype=float))  # noqa: E731
    coeffs = CoefficientSet("L", a=zero, b=zero, sigma_bar=one)
    ov = None
    if closed_form:
        ov = {"rho": lambda t: t, "rho_inv": lambda s: s, "rho_prime": one, "c": zero,
              "f": lambda t, x: x * np.ones_like(np.asarray(t, dtype=float)),
              "df_dt": lambda t, x: np.zeros_like(x), "df_dx": lambda t, x: np.ones_like(x),
              "kappa_min": 1.0}
    return build_lclass(coeffs, horizon, Envelope("sqrt", 1.0, 0.0), x0=x0, overrides=ov,
                        label="pure-bm")


# -- approximation ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiffusionApproximation:
    t: np.ndarray
    y: np.ndarray
    epsilon: float
    base: SkeletonPath
    horizon: float

    @property
    def count(self) -> int:
        """Number of skeleton points needed to cover the horizon."""
        return len(self.base)

    def value_at(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr > self.t[-1]):
            raise ValueError(f"t must lie in [0, {self.t[-1]}]")
        idx = np.searchsorted(self.t, t_arr, side="right") - 1
        out = self.y[idx]
        return float(out) if out.ndim == 0 else out

    def to_csv(self) -> str:
        lines = ["n,t,y"]
        lines += [f"{n},{float(tn)!r},{float(yn)!r}" for n, (tn, yn) in enumerate(zip(self.t, self.y))]
        return "\n".join(lines) + "\n"


def map_skeleton(model: DiffusionModel, path: SkeletonPath):
    t = np.asarray(model.rho_inv(path.s), dtype=float)
    t[0] = 0.0
    y = np.asarray(model.f(t, path.x), dtype=float)
    return t, y


def approximate(model: DiffusionModel, horizon: float, epsilon: float, stream: RngStream,
                cap: int | None = None) -> DiffusionApproximation:
    """An ``eps``-strong approximation of the model's diffusion on ``[0, horizon]``."""
    model.check_epsilon(epsilon)
    kwargs = {} if cap is None else {"cap": cap}
    path = generate_until(model.x0, model.rho(horizon), model.eta, epsilon, stream, **kwargs)
    t, y = map_skeleton(model, path)
    return DiffusionApproximation(t=t, y=y, epsilon=float(epsilon), base=path, horizon=float(horizon))


def approximate_lipschitz(f_lip: Callable, K: float, rho: Callable, horizon: float,
                          epsilon: float, stream: RngStream, rho_inv: Callable | None = None,
                          x0: float = 0.0) -> DiffusionApproximation:
    """Approximation for a Lipschitz ``f`` (constant ``K``): an ``eps/K``-strong
    Brownian skeleton with ``eta = 1`` mapped through ``f``."""
    if not K > 0:
        raise ValueError("Lipschitz constant must be positive")
    theta = epsilon / K
    s_end = float(rho(horizon))
    if rho_inv is None:
        def rho_inv(s):
            hi = 2.0 * horizon
            while rho(hi) < np.max(s):
                hi *= 2.0
            return monotone_inverse(rho, s, 0.0, hi)
    path = generate_until(x0, s_end, None, theta, stream)
    t = np.asarray(rho_inv(path.s), dtype=float)
    t[0] = 0.0
    y = np.asarray(f_lip(t, path.x), dtype=float)
    return DiffusionApproximation(t=t, y=y, epsilon=float(epsilon), base=path, horizon=float(horizon))


@dataclass(frozen=True)
class ApproxBatch:
    counts: np.ndarray
    y_at_horizon: np.ndarray


def approximate_counts(model: DiffusionModel, horizon: float, epsilon: float, seed: int,
                       n_paths: int, threads: int = 1, start_index: int = 0) -> ApproxBatch:
    """Counts and terminal values of many approximations without storing paths."""
    model.check_epsilon(epsilon)
    batch = simulate_counts(model.x0, model.rho(horizon), model.eta, epsilon, seed, n_paths,
                            threads=threads, start_index=start_index)
    t_before = np.asarray(model.rho_inv(batch.s_before), dtype=float)
    y = np.asarray(model.f(t_before, batch.x_before), dtype=float)
    return ApproxBatch(counts=batch.counts, y_at_horizon=y)


# -- JSON model configuration -------------------------------------------------------------

def _parse_expr(text, name: str):
    """Compile a coefficient expression in ``t`` (sympy syntax) to a numpy function."""
    import sympy

    t = sympy.Symbol("t")
    try:
        expr = sympy.sympify(str(text), locals={"t": t})
    except (sympy.SympifyError, TypeError, SyntaxError) as exc:
        raise ConfigError(f"coefficients.{name}: cannot parse {text!r}") from exc
    if expr.free_symbols - {t}:
        raise ConfigError(f"coefficients.{name}: only the variable t is allowed, got {expr.free_symbols}")
    return _vectorize_t(sympy.lambdify(t, expr, "numpy"))


def _envelope_from(cfg):
    if cfg is None:
        raise ConfigError("model config needs an 'envelope' entry")
    kind = cfg.get("type")
    if kind == "sqrt":
        return Envelope("sqrt", float(cfg["c0"]), float(cfg["c1"]))
    if kind == "exp":
        return Envelope("exp", float(cfg["k1"]), float(cfg["k2"]))
    raise ConfigError(f"unknown envelope type {kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    """A parsed model config: the model plus an optional Lipschitz constant.

    When ``lipschitz_constant`` is set the CLI uses the Lipschitz route
    (``eta = 1`` skeleton at tolerance ``eps / K``).
    """

    model: DiffusionModel
    lipschitz_constant: float | None = None


def model_from_config(cfg: dict, horizon: float | None = None, x0: float | None = None) -> ModelSpec:
    """Build a model from a ``schema_version: 1`` config mapping.

    Keys: ``kind`` ("L-class" | "G-class"), ``example`` ("example1" |
    "example2" | "custom"), ``closed_form`` (bool), ``horizon``, ``x0``,
    ``envelope`` ({"type": "sqrt", "c0", "c1"} or {"type": "exp", "k1", "k2"}),
    ``base_envelope`` (G-class only: envelope of the underlying L-class model),
    ``coefficients`` ({"a", "b", "sigma_bar"} as expressions in ``t``; custom only)
    and ``lipschitz_constant`` (optional).
    """
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    kind = cfg.get("kind", "L-class")
    if kind not in ("L-class", "G-class"):
        raise ConfigError(f"kind must be 'L-class' or 'G-class', got {kind!r}")
    example = cfg.get("example", "custom")
    closed = bool(cfg.get("closed_form", True))
    T = float(horizon if horizon is not None else cfg.get("horizon", 1.0))
    start = float(x0 if x0 is not None else cfg.get("x0", 0.0))
    env = _envelope_from(cfg.get("envelope")) if "envelope" in cfg else None
    base_env = _envelope_from(cfg["base_envelope"]) if "base_envelope" in cfg else None
    l_env = base_env if kind == "G-class" else env

    if example == "example1":
        base = example1_model(T, start, closed)
        if l_env is not None:
            base = build_lclass(example1_coefficients(), T, l_env, start,
                                example1_closed_forms(T) if closed else None, label="example1")
    elif example == "example2":
        base = example2_model(T, start, closed)
        if l_env is not None:
            base = build_lclass(example2_coefficients(), T, l_env, start,
                                example2_closed_forms(T) if closed else None, label="example2")
    elif example == "custom":
        co = cfg.get("coefficients")
        if not co:
            raise ConfigError("custom model needs 'coefficients'")
        if l_env is None:
            raise ConfigError("custom model needs an envelope")
        coeffs = CoefficientSet("L", a=_parse_expr(co.get("a", "0"), "a"),
                                b=_parse_expr(co.get("b", "0"), "b"),
                                sigma_bar=_parse_expr(co.get("sigma_bar", "1"), "sigma_bar"))
        base = build_lclass(coeffs, T, l_env, start, label=cfg.get("label", "custom"))
    else:
        raise ConfigError(f"unknown example {example!r}")

    model = base
    if kind == "G-class":
        if env is None:
            raise ConfigError("G-class model needs an 'envelope' for exp(f)")
        model = build_gclass(base, env)
    lip = cfg.get("lipschitz_constant")
    return ModelSpec(model=model, lipschitz_constant=None if lip is None else float(lip))


def load_model(path, horizon=None, x0=None) -> ModelSpec:
    with open(path) as fh:
        cfg = json.load(fh)
    return model_from_config(cfg, horizon=horizon, x0=x0)


def with_start(model: DiffusionModel, x0: float) -> DiffusionModel:
    return replace(model, x0=float(x0))
