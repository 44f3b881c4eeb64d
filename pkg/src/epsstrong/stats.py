"""Step-count statistics: renewal limits, CLT, tail bounds, regression, KS."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .distributions import laplace_bound_omega
from .parallel import map_paths

SQRT27 = 3.0 ** 1.5
# mean and variance of exp(1 - A), A ~ Gamma(3/2, 2)
RENEWAL_MU = math.e * 3.0 ** -1.5
RENEWAL_SIGMA2 = (5.0 ** -1.5 - 3.0 ** -3.0) * math.e ** 2


@dataclass(frozen=True)
class CountSample:
    epsilon: float
    horizon: float
    counts: np.ndarray
    model_id: str = "bm"

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.size == 0:
            raise ValueError("count sample is empty")
        if np.any(c < 1):
            raise ValueError("step counts must be >= 1")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts))

    @property
    def stderr(self) -> float:
        n = len(self.counts)
        return float(np.std(self.counts, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")


@dataclass(frozen=True)
class TailBoundSpec:
    """``kind='thm31'`` uses ``beta_prime``; ``kind='prop22'`` uses ``(C, kappa)``.

    The generic form assumes ``E[exp(-lam U / eps^2)] <= C lam^-kappa`` for the
    per-step time ``U`` of the skeleton.
    """

    kind: str
    beta_prime: float | None = None
    C: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.kind == "thm31":
            if self.beta_prime is None or not self.beta_prime > 2.0:
                raise ValueError(f"beta_prime must exceed 2, got {self.beta_prime}")
        elif self.kind == "prop22":
            if not (self.C is not None and self.C > 0 and self.kappa is not None and self.kappa > 0):
                raise ValueError("generic bound needs C > 0 and kappa > 0")
        else:
            raise ValueError(f"unknown tail bound kind {self.kind!r}")

    @classmethod
    def brownian(cls, beta_prime: float = 4.0) -> "TailBoundSpec":
        return cls("thm31", beta_prime=beta_prime)

    @classmethod
    def generic(cls, C: float, kappa: float) -> "TailBoundSpec":
        return cls("prop22", C=C, kappa=kappa)


def log_tail_bound(spec: TailBoundSpec, T: float, epsilon: float, j):
    """Natural log of the unclipped bound on ``P(N_T > j)``."""
    j = np.asarray(j, dtype=float)
    if np.any(j < 1):
        raise ValueError("j must be >= 1")
    eps2 = epsilon * epsilon
    if spec.kind == "thm31":
        bp = spec.beta_prime
        omega = laplace_bound_omega(1.5, 2.0, bp)
        return (j / bp) * (math.log(bp * T * omega ** bp / eps2) - np.log(j))
    k = spec.kappa
    return j * k * (math.log(math.e * T * spec.C ** (1.0 / k) / (k * eps2)) - np.log(j))


def tail_bound(spec: TailBoundSpec, T: float, epsilon: float, j, clip: bool = True):
    """Analytic bound on ``P(N_T^eps > j)``; clipped at 1 unless ``clip=False``."""
    with np.errstate(over="ignore"):
        out = np.exp(log_tail_bound(spec, T, epsilon, j))
    if clip:
        out = np.minimum(out, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def mean_bound(T: float, epsilon: float, delta: float) -> float:
    """``E[N_T] <= 3^{3/2} delta T / eps^2`` (valid for eps small enough)."""
    if not delta > 1.0:
        raise ValueError("delta must exceed 1")
    return SQRT27 * delta * T / (epsilon * epsilon)


def renewal_limit_bm(T: float) -> float:
    """``lim eps^2 E[N_T] = T 3^{3/2} / e``."""
    if not T > 0:
        raise ValueError("T must be positive")
    return T * SQRT27 / math.e


def clt_standardize(sample: CountSample):
    mu, s2 = RENEWAL_MU, RENEWAL_SIGMA2
    eps2 = sample.epsilon ** 2
    scale = math.sqrt(mu ** 3 / (eps2 * s2 * sample.horizon))
    return scale * (eps2 * sample.counts - renewal_limit_bm(sample.horizon))


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int


def limit_functional(model, T: float, n_paths: int, n_grid: int, seed: int, threads: int = 1,
                     start_index: int = 0) -> Estimate:
    """MC estimate of ``(3^{3/2}/e) E[int_0^{rho(T)} eta(x0 + B_s)^-2 ds]``.

    Brownian paths on a uniform grid of ``n_grid`` steps, trapezoid rule.
    Path ``i`` uses ``RngStream(seed, start_index + i)``.
    """
    if n_paths < 2 or n_grid < 1:
        raise ValueError("need n_paths >= 2 and n_grid >= 1")
    s_end = float(model.rho(T))
    dt = s_end / n_grid
    eta = model.eta
    x0 = model.x0

    def one(stream, _i):
        b = np.empty(n_grid + 1)
        b[0] = x0
        np.cumsum(stream.normal(n_grid) * math.sqrt(dt), out=b[1:])
        b[1:] += x0
        v = np.asarray(eta(b), dtype=float) ** -2
        return dt * (v.sum() - 0.5 * (v[0] + v[-1]))

    vals = np.array(map_paths(one, seed, n_paths, threads=threads, start=start_index))
    vals *= SQRT27 / math.e
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), int(n_paths))


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r_squared: float


def fit_inverse_eps(points) -> RegressionFit:
    """OLS of mean count against ``1/eps^2``."""
    pts = [(float(e), float(m)) for e, m in points]
    if len({e for e, _ in pts}) < 3:
        raise ValueError("need at least 3 distinct epsilon values")
    x = np.array([1.0 / (e * e) for e, _ in pts])
    y = np.array([m for _, m in pts])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RegressionFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0))


def ks_statistic(sample, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance ``sup |F_n - F|``."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("sample is empty")
    f = np.asarray(cdf(x), dtype=float) * np.ones(n)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n), 0.0))


def ks_two_sample(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def normal_cdf(x):
    from scipy.special import ndtr

    return ndtr(x)


def bound_threshold(spec: TailBoundSpec, T: float, epsilon: float) -> float:
    """Smallest real ``j`` past which the bound is below 1 and decreasing."""
    if spec.kind == "thm31":
        return spec.beta_prime * T * laplace_bound_omega(1.5, 2.0, spec.beta_prime) ** spec.beta_prime / epsilon ** 2
    k = spec.kappa
    return math.e * T * spec.C ** (1.0 / k) / (k * epsilon ** 2)


def tail_grid(counts, spec: TailBoundSpec, T: float, epsilon: float):
    """Integers ``1..J`` reaching past both the sample maximum and twice the bound threshold."""
    top = max(int(np.max(counts)) + 1, int(math.ceil(2.0 * bound_threshold(spec, T, epsilon))))
    return np.arange(1, top + 1)


def empirical_survival(counts, js):
    """``P(N > j)`` for each ``j`` in ``js``."""
    c = np.sort(np.asarray(counts))
    return 1.0 - np.searchsorted(c, np.asarray(js), side="right") / len(c)


# -- CSV emitters ---------------------------------------------------------------

def summary_csv(rows, header_lines=()) -> str:
    """``metric,value,stderr,n`` rows; ``rows`` are ``(metric, value, stderr, n)``."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "stderr", "n"])
    for metric, value, stderr, n in rows:
        w.writerow([metric, _fmt(value), _fmt(stderr), int(n)])
    return buf.getvalue()


def regression_csv(points, header_lines=()) -> str:
    """``epsilon,inv_eps2,mean_count`` rows."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "inv_eps2", "mean_count"])
    for eps, mean in points:
        w.writerow([_fmt(eps), _fmt(1.0 / (eps * eps)), _fmt(mean)])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
