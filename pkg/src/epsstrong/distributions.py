"""Exit law of the heat ball and the log-gamma family behind it.

The normalized exit time ``W = U^2 exp(-G^2)`` has density
``(-ln t)^(alpha-1) t^(1/beta-1) / (Gamma(alpha) beta^alpha)`` on (0, 1] with
``alpha = 3/2`` and ``beta = 2``; equivalently ``-ln W ~ Gamma(3/2, scale=2)``.
The exit time of the epsilon heat ball is ``e * eps**2 * W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .rng import RngStream

W_FLOOR = 1e-300
LAPLACE_SWITCH = 15.0
LAPLACE_MAX_TERMS = 400
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 500


@dataclass(frozen=True)
class LogGammaSpec:
    alpha: float = 1.5
    beta: float = 2.0

    def __post_init__(self):
        if not (self.alpha >= 1.0 and self.beta >= 1.0):
            raise ValueError(f"log-gamma requires alpha >= 1 and beta >= 1, got {self}")


EXIT_SPEC = LogGammaSpec(1.5, 2.0)


@dataclass(frozen=True)
class ExitLaw:
    """Law of the first exit time of Brownian motion from the epsilon heat ball."""

    epsilon: float
    r_eps: float = field(init=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "r_eps", math.e * self.epsilon * self.epsilon)


# -- sampling -----------------------------------------------------------------

def w_from_uniform_normal(u, g):
    """Deterministic map ``(U, G) -> U^2 exp(-G^2)``, clamped to [1e-300, 1]."""
    w = np.square(u) * np.exp(-np.square(g))
    w = np.clip(w, W_FLOOR, 1.0)
    return float(w) if np.ndim(w) == 0 else w


def gamma32_from_uniform_normal(u, g):
    """Deterministic map ``(U, G) -> -2 ln U + G^2`` (a Gamma(3/2, 2) variate)."""
    a = -2.0 * np.log(u) + np.square(g)
    return float(a) if np.ndim(a) == 0 else a


def sample_w(stream: RngStream, size=None):
    u = stream.uniform_open(size)
    g = stream.normal(size)
    return w_from_uniform_normal(u, g)


def sample_gamma32(stream: RngStream, size=None):
    """Gamma(3/2, scale 2) as Gamma(1, 2) + Gamma(1/2, 2); no rejection step."""
    u = stream.uniform_open(size)
    g = stream.normal(size)
    return gamma32_from_uniform_normal(u, g)


def sample_rademacher(stream: RngStream, size=None):
    z = stream.signs(size)
    return float(z) if size is None else z


# -- log-gamma analytics ----------------------------------------------------------

def loggamma_pdf(spec: LogGammaSpec, t):
    t_arr = np.asarray(t, dtype=float)
    out = np.zeros_like(t_arr)
    inside = (t_arr > 0.0) & (t_arr <= 1.0)
    ti = t_arr[inside]
    a, b = spec.alpha, spec.beta
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        # log-space keeps t -> 0+ finite; underflow returns 0
        logv = (
            (a - 1.0) * np.log(np.maximum(-np.log(ti), 0.0))
            + (1.0 / b - 1.0) * np.log(ti)
            - special.gammaln(a)
            - a * math.log(b)
        )
        vals = np.exp(logv)
    if a == 1.0:
        vals = np.exp((1.0 / b - 1.0) * np.log(ti) - math.log(b))
    out[inside] = np.where(np.isfinite(vals), vals, 0.0)
    return float(out) if out.ndim == 0 else out


def _neglog_density(spec: LogGammaSpec, u):
    """Density of ``-ln W``: Gamma(alpha, scale=beta)."""
    return np.exp(
        (spec.alpha - 1.0) * np.log(u) - u / spec.beta
        - special.gammaln(spec.alpha) - spec.alpha * math.log(spec.beta)
    ) if u > 0 else (1.0 / spec.beta if spec.alpha == 1.0 else 0.0)


def loggamma_integral(spec: LogGammaSpec, fn, lower_u=0.0, breakpoints=()):
    """``E[fn(W); -ln W >= lower_u]`` by quadrature after substituting ``t = exp(-u)``.

    The substitution removes the endpoint singularity of the pdf at t = 0.
    """
    def integrand(u):
        return fn(math.exp(-u)) * _neglog_density(spec, u)

    cuts = sorted(p for p in breakpoints if p > lower_u)
    edges = [lower_u, *cuts]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=QUAD_EPSABS,
                                epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)[0]
    total += integrate.quad(integrand, edges[-1], np.inf, epsabs=QUAD_EPSABS,
                            epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)[0]
    return total


def loggamma_moment(spec: LogGammaSpec, k: int) -> float:
    if int(k) != k or k < 1:
        raise ValueError(f"moment order must be an integer >= 1, got {k}")
    return (1.0 + k * spec.beta) ** (-spec.alpha)


def _laplace_series(spec: LogGammaSpec, lam: float, tol: float):
    total = 0.0
    log_lam = math.log(lam) if lam > 0 else -math.inf
    for k in range(LAPLACE_MAX_TERMS):
        if k == 0:
            term = 1.0
        else:
            mag = math.exp(k * log_lam - math.lgamma(k + 1) - spec.alpha * math.log1p(k * spec.beta))
            term = -mag if k % 2 else mag
        total += term
        # the terms grow until k ~ lam, so only stop past the peak
        if abs(term) < tol and k > lam:
            return total
    return None


def loggamma_laplace(spec: LogGammaSpec, lam: float, tol: float = 1e-15) -> float:
    """``E[exp(-lam W)]``.

    The alternating series is used for ``lam <= 15``; beyond that it cancels
    catastrophically and the transform is integrated numerically instead.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        return 1.0
    value = None
    if lam <= LAPLACE_SWITCH:
        value = _laplace_series(spec, lam, tol)
    if value is None:
        value = loggamma_integral(spec, lambda t: math.exp(-lam * t),
                                  breakpoints=(math.log(lam),))
    return min(max(value, 0.0), 1.0)


def laplace_bound_omega(alpha: float, beta: float, beta_prime: float | None = None) -> float:
    """Constant ``omega`` with ``E[exp(-lam W)] <= omega / lam**(1/beta')``.

    For ``alpha == 1`` the sharper constant ``Gamma(1/beta)/beta`` (exponent
    ``1/beta``) is returned and ``beta_prime`` is ignored.
    """
    if alpha == 1.0:
        return math.gamma(1.0 / beta) / beta
    if not alpha > 1.0:
        raise ValueError("alpha must be >= 1")
    if beta_prime is None or not beta_prime > beta:
        raise ValueError(f"beta_prime must exceed beta={beta}, got {beta_prime}")
    gap = 1.0 / beta - 1.0 / beta_prime
    return ((alpha - 1.0) ** (alpha - 1.0) * math.gamma(1.0 / beta_prime)
            / (math.gamma(alpha) * beta ** alpha * math.e ** (alpha - 1.0) * gap ** (alpha - 1.0)))


def laplace_bound(spec: LogGammaSpec, lam: float, beta_prime: float | None = None) -> float:
    omega = laplace_bound_omega(spec.alpha, spec.beta, beta_prime)
    exponent = 1.0 / spec.beta if spec.alpha == 1.0 else 1.0 / beta_prime
    return omega / lam ** exponent


# -- exit time of the heat ball ---------------------------------------------------

def exit_time_pdf(law: ExitLaw, t):
    t_arr = np.asarray(t, dtype=float)
    out = np.zeros_like(t_arr)
    inside = (t_arr > 0.0) & (t_arr < law.r_eps)
    ti = t_arr[inside]
    eps = law.epsilon
    out[inside] = np.sqrt(np.log(eps * eps * math.e / ti)) / (eps * np.sqrt(2.0 * math.e * math.pi * ti))
    return float(out) if out.ndim == 0 else out


def _exit_time_cdf_scalar(law: ExitLaw, t: float) -> float:
    if t <= 0.0:
        return 0.0
    if t >= law.r_eps:
        return 1.0
    # P(U <= t) = P(-ln W >= ln(r/t))
    # log difference: r / t overflows for subnormal t
    u0 = math.log(law.r_eps) - math.log(t)
    v = loggamma_integral(EXIT_SPEC, lambda _w: 1.0, lower_u=u0)
    return min(max(v, 0.0), 1.0)


def exit_time_cdf(law: ExitLaw, t):
    """``P(U_1 <= t)`` by quadrature of the exit-time density."""
    if np.ndim(t) == 0:
        return _exit_time_cdf_scalar(law, float(t))
    return np.array([_exit_time_cdf_scalar(law, float(v)) for v in np.ravel(t)]).reshape(np.shape(t))


def w_cdf(t):
    """CDF of the normalized exit time ``W`` (closed form via the regularized gamma)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        u = -np.log(np.clip(t, 0.0, 1.0))
    out = special.gammaincc(EXIT_SPEC.alpha, u / EXIT_SPEC.beta)
    out = np.where(t <= 0, 0.0, np.where(t >= 1, 1.0, out))
    return float(out) if out.ndim == 0 else out
