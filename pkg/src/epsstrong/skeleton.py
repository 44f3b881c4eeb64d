"""Brownian skeleton: successive exit times and positions of scaled heat balls.

Step ``n`` draws ``A_n ~ Gamma(3/2, 2)`` and a sign ``Z_n`` and sets::

    u_n = eps^2 eta(x_{n-1})^2 exp(1 - A_n)
    s_n = s_{n-1} + u_n
    x_n = x_{n-1} + Z_n eta(x_{n-1}) phi_eps(u_n / eta(x_{n-1})^2)

with ``phi_eps(t) = sqrt(t ln(eps^2 e / t))`` on ``[0, e eps^2]``. For
``eta == 1`` the piecewise-constant path stays within ``eps`` of a Brownian
path that passes through every skeleton point.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numba
import numpy as np

from .parallel import map_paths
from .rng import RngStream

E = math.e
DEFAULT_STEP_CAP = 10**9
_MIN_CHUNK = 64
_MAX_CHUNK = 1 << 16
# mean of exp(1 - A), A ~ Gamma(3/2, 2)
_MEAN_MULT = E * 3.0 ** -1.5

ETA_CONST = 0
ETA_SQRT = 1
ETA_EXP = 2

_OK, _DONE, _BAD_ETA, _CAPPED = 0, 1, 2, 3


class ModelError(ValueError):
    """Invalid model input (non-positive eta, envelope violation, ...)."""


class SkeletonRunaway(RuntimeError):
    """A path exceeded its step budget before covering the horizon."""


# -- phi ----------------------------------------------------------------------

@dataclass(frozen=True)
class PhiDomain:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def r_eps(self) -> float:
        return E * self.epsilon * self.epsilon


@numba.njit(nogil=True, cache=True)
def _phi(eps, t):
    r = E * eps * eps
    if t <= 0.0 or t >= r:
        return 0.0
    # ln(eps^2 e / t) as a difference: the quotient overflows for subnormal t
    lg = math.log(r) - math.log(t)
    # rounding near t = r can make it slightly negative
    if lg < 0.0:
        lg = 0.0
    return math.sqrt(t * lg)


def phi(domain: PhiDomain, t):
    if np.ndim(t) == 0:
        return _phi(domain.epsilon, float(t))
    t = np.asarray(t, dtype=float)
    return np.array([_phi(domain.epsilon, v) for v in t.ravel()]).reshape(t.shape)


# -- eta ----------------------------------------------------------------------

@dataclass(frozen=True)
class Eta:
    """Tube-scaling function from a small closed family the path kernel can compile.

    * ``const``: ``eta(x) = p0``
    * ``sqrt``:  ``eta(x) = 1 / (scale * (p0 + p1 * sqrt(2x^2 + 1)))``
    * ``exp``:   ``eta(x) = 1 / (scale * p0 * exp(p1 * sqrt(2x^2 + 1)))``

    The last two are ``1 / (scale * F(2x^2 + 1))`` for the envelopes
    ``F(y) = p0 + p1 sqrt|y|`` and ``F(y) = p0 exp(p1 sqrt|y|)``.
    """

    kind: int
    p0: float
    p1: float = 0.0
    scale: float = 1.0

    @classmethod
    def constant(cls, value: float = 1.0) -> "Eta":
        return cls(ETA_CONST, float(value))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == ETA_CONST:
            out = np.full_like(x, self.p0)
        elif self.kind == ETA_SQRT:
            out = 1.0 / (self.scale * (self.p0 + self.p1 * np.sqrt(2.0 * x * x + 1.0)))
        elif self.kind == ETA_EXP:
            out = 1.0 / (self.scale * self.p0 * np.exp(self.p1 * np.sqrt(2.0 * x * x + 1.0)))
        else:
            raise ModelError(f"unknown eta kind {self.kind}")
        return float(out) if out.ndim == 0 else out

    @property
    def label(self) -> str:
        names = {ETA_CONST: "const", ETA_SQRT: "sqrt", ETA_EXP: "exp"}
        return f"{names.get(self.kind, '?')}({self.p0!r},{self.p1!r},{self.scale!r})"


@numba.njit(nogil=True, cache=True)
def _eta_value(kind, p0, p1, scale, x):
    if kind == ETA_CONST:
        return p0
    y = math.sqrt(2.0 * x * x + 1.0)
    if kind == ETA_SQRT:
        return 1.0 / (scale * (p0 + p1 * y))
    return 1.0 / (scale * p0 * math.exp(p1 * y))


# -- steps and paths ----------------------------------------------------------

@dataclass(frozen=True)
class SkeletonStep:
    u: float
    s: float
    x: float
    z: float


@dataclass(frozen=True, eq=False)
class SkeletonPath:
    """Skeleton points with the origin stored as index 0.

    ``s[n], x[n], u[n], z[n]`` for ``n = 0..N``; ``u[0] = z[0] = 0``.
    """

    s: np.ndarray
    x: np.ndarray
    u: np.ndarray
    z: np.ndarray
    epsilon: float
    eta_id: str
    horizon: float

    def __len__(self) -> int:
        return len(self.s) - 1

    @property
    def x0(self) -> float:
        return float(self.x[0])

    @property
    def n_steps(self) -> int:
        return len(self.s) - 1

    def step(self, n: int) -> SkeletonStep:
        return SkeletonStep(float(self.u[n]), float(self.s[n]), float(self.x[n]), float(self.z[n]))

    @property
    def steps(self):
        return [self.step(n) for n in range(1, len(self.s))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "s", "x", "u", "z"])
        for n in range(len(self.s)):
            w.writerow([n, repr(float(self.s[n])), repr(float(self.x[n])),
                        repr(float(self.u[n])), int(self.z[n])])
        return buf.getvalue()


# -- the kernel ----------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _advance(state, horizon, eps, kind, p0, p1, scale, unif, gauss, signs, cap,
             store, out_u, out_s, out_x, out_z):
    """Consume one chunk of variates.

    ``state`` is ``[s, x, n, s_prev, x_prev]`` and is updated in place.
    Returns ``(status, used)``.
    """
    s = state[0]
    x = state[1]
    n = state[2]
    s_prev = state[3]
    x_prev = state[4]
    status = _OK
    k = 0
    m = unif.shape[0]
    while k < m:
        eta = _eta_value(kind, p0, p1, scale, x)
        if not (eta > 0.0) or not math.isfinite(eta):
            status = _BAD_ETA
            break
        a = -2.0 * math.log(unif[k]) + gauss[k] * gauss[k]
        mult = math.exp(1.0 - a)
        u = eps * eps * eta * eta * mult
        # u / eta^2 == eps^2 * mult; use it directly to avoid a rounding trip
        dx = signs[k] * eta * _phi(eps, eps * eps * mult)
        s_prev = s
        x_prev = x
        s = s + u
        x = x + dx
        n += 1.0
        if store:
            out_u[k] = u
            out_s[k] = s
            out_x[k] = x
            out_z[k] = signs[k]
        k += 1
        if s >= horizon:
            status = _DONE
            break
        if n >= cap:
            status = _CAPPED
            break
    state[0] = s
    state[1] = x
    state[2] = n
    state[3] = s_prev
    state[4] = x_prev
    return status, k


def _chunk_size(horizon, s, eps, h):
    """Variates to draw next: the expected number of remaining steps plus slack.

    A function of the path state only, so the draw pattern is reproducible.
    """
    expected = (horizon - s) / (eps * eps * h * h * _MEAN_MULT)
    if not math.isfinite(expected):
        return _MAX_CHUNK
    return int(min(_MAX_CHUNK, max(_MIN_CHUNK, 1.05 * expected + 16)))


def _draw_chunk(stream: RngStream, size: int):
    unif = stream.uniform_open(size)
    gauss = stream.normal(size)
    signs = stream.signs(size)
    return unif, gauss, signs


def _runaway(eps, horizon, eta_id, n, x):
    return SkeletonRunaway(
        f"step budget exhausted after {int(n)} steps: eps={eps}, horizon={horizon}, "
        f"eta={eta_id}, last x={x}"
    )


def _run_kernel(x0, horizon, eps, eta: Eta, stream, cap, store):
    state = np.array([0.0, float(x0), 0.0, 0.0, float(x0)])
    pieces = []
    while True:
        h = float(eta(state[1]))
        if not (h > 0.0) or not math.isfinite(h):
            raise ModelError(f"eta({state[1]}) = {h} is not a positive finite number")
        size = _chunk_size(horizon, state[0], eps, h)
        unif, gauss, signs = _draw_chunk(stream, size)
        if store:
            bufs = [np.empty(size) for _ in range(4)]
        else:
            bufs = [np.empty(0) for _ in range(4)]
        status, used = _advance(state, float(horizon), float(eps), eta.kind, float(eta.p0),
                                float(eta.p1), float(eta.scale), unif, gauss, signs,
                                float(cap), store, *bufs)
        if store:
            pieces.append([b[:used] for b in bufs])
        if status == _DONE:
            return state, pieces
        if status == _BAD_ETA:
            raise ModelError(f"eta({state[1]}) is not a positive finite number")
        if status == _CAPPED:
            raise _runaway(eps, horizon, eta.label, state[2], state[1])


def _run_python(x0, horizon, eps, eta, stream, cap, store):
    """Same recurrence and variate consumption for an arbitrary callable ``eta``."""
    state = np.array([0.0, float(x0), 0.0, 0.0, float(x0)])
    pieces = []
    s, x, n = 0.0, float(x0), 0
    while True:
        h = float(eta(x))
        if not (h > 0.0) or not math.isfinite(h):
            raise ModelError(f"eta({x}) = {h} is not a positive finite number")
        size = _chunk_size(horizon, s, eps, h)
        unif, gauss, signs = _draw_chunk(stream, size)
        us, ss, xs, zs = [], [], [], []
        done = False
        for k in range(size):
            prev = SkeletonStep(0.0, s, x, 0.0)
            a = -2.0 * math.log(unif[k]) + gauss[k] * gauss[k]
            nxt = next_step(prev, eta, eps, a=a, z=float(signs[k]))
            state[3], state[4] = s, x
            s, x, n = nxt.s, nxt.x, n + 1
            if store:
                us.append(nxt.u)
                ss.append(s)
                xs.append(x)
                zs.append(nxt.z)
            if s >= horizon:
                done = True
                break
            if n >= cap:
                raise _runaway(eps, horizon, getattr(eta, "__name__", repr(eta)), n, x)
        if store:
            pieces.append([np.array(v, dtype=float) for v in (us, ss, xs, zs)])
        if done:
            state[0], state[1], state[2] = s, x, n
            return state, pieces


def _resolve_eta(eta):
    if eta is None:
        return Eta.constant(1.0)
    if isinstance(eta, (int, float)):
        return Eta.constant(float(eta))
    return eta


# -- public operations -------------------------------------------------------------

def next_step(prev: SkeletonStep, eta, epsilon: float, stream: RngStream | None = None,
              *, a: float | None = None, z: float | None = None) -> SkeletonStep:
    """One skeleton step from ``prev``.

    ``a`` (the Gamma(3/2, 2) variate) and ``z`` (the sign) may be forced; any
    that are missing are drawn from ``stream``.
    """
    eta = _resolve_eta(eta)
    h = float(eta(prev.x))
    if not (h > 0.0) or not math.isfinite(h):
        raise ModelError(f"eta({prev.x}) = {h} is not a positive finite number")
    if a is None:
        if stream is None:
            raise ValueError("need a stream or a forced gamma variate")
        a = -2.0 * math.log(stream.uniform_open()) + stream.normal() ** 2
    if z is None:
        if stream is None:
            raise ValueError("need a stream or a forced sign")
        z = float(stream.signs())
    mult = math.exp(1.0 - a)
    u = epsilon * epsilon * h * h * mult
    x = prev.x + z * h * _phi(float(epsilon), epsilon * epsilon * mult)
    return SkeletonStep(u=u, s=prev.s + u, x=x, z=float(z))


def generate_until(x0: float, horizon: float, eta, epsilon: float, stream: RngStream,
                   cap: int = DEFAULT_STEP_CAP) -> SkeletonPath:
    """Run the skeleton from ``(0, x0)`` until the first ``s_n >= horizon``.

    ``eta`` is ``None`` (eta = 1), a number, an :class:`Eta` (compiled kernel)
    or any callable (pure Python loop with the same variate consumption).
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    eta = _resolve_eta(eta)
    runner = _run_kernel if isinstance(eta, Eta) else _run_python
    _, pieces = runner(x0, horizon, epsilon, eta, stream, cap, True)
    u, s, x, z = (np.concatenate([[0.0]] + [p[i] for p in pieces]) for i in range(4))
    x[0] = x0
    eta_id = eta.label if isinstance(eta, Eta) else getattr(eta, "__name__", repr(eta))
    return SkeletonPath(s=s, x=x, u=u, z=z, epsilon=float(epsilon), eta_id=eta_id,
                        horizon=float(horizon))


def evaluate(path: SkeletonPath, t):
    """Piecewise-constant, left-closed evaluation ``x_t = x_n`` for ``s_n <= t < s_{n+1}``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > path.s[-1]):
        raise ValueError(f"t must lie in [0, {path.s[-1]}]")
    idx = np.searchsorted(path.s, t_arr, side="right") - 1
    out = path.x[idx]
    return float(out) if out.ndim == 0 else out


def count_steps(path: SkeletonPath, t: float) -> int:
    """``inf{n >= 1 : s_n >= t}``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t > path.s[-1]:
        raise ValueError(f"t={t} lies beyond the generated path (last s={path.s[-1]})")
    return int(np.searchsorted(path.s[1:], t, side="left")) + 1


@dataclass(frozen=True)
class CountBatch:
    """Per-path summaries of a batch run.

    ``counts[i]`` is ``N`` for path ``i``; ``s_before/x_before`` is the last
    skeleton point strictly before the horizon and ``s_end/x_end`` the first
    one at or past it.
    """

    counts: np.ndarray
    s_before: np.ndarray
    x_before: np.ndarray
    s_end: np.ndarray
    x_end: np.ndarray


def simulate_counts(x0: float, horizon: float, eta, epsilon: float, seed: int, n_paths: int,
                    threads: int = 1, start_index: int = 0,
                    cap: int = DEFAULT_STEP_CAP) -> CountBatch:
    """Run ``n_paths`` skeletons (path ``i`` uses ``RngStream(seed, start_index + i)``)
    without storing the paths."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    eta = _resolve_eta(eta)
    runner = _run_kernel if isinstance(eta, Eta) else _run_python

    def one(stream, _i):
        state, _ = runner(x0, horizon, epsilon, eta, stream, cap, False)
        return state

    states = map_paths(one, seed, n_paths, threads=threads, start=start_index)
    arr = np.array(states).reshape(n_paths, 5)
    return CountBatch(counts=arr[:, 2].astype(np.int64), s_before=arr[:, 3], x_before=arr[:, 4],
                      s_end=arr[:, 0], x_end=arr[:, 1])


def generate_paths(x0, horizon, eta, epsilon, seed, n_paths, threads=1, start_index=0,
                   cap=DEFAULT_STEP_CAP):
    def one(stream, _i):
        return generate_until(x0, horizon, eta, epsilon, stream, cap=cap)

    return map_paths(one, seed, n_paths, threads=threads, start=start_index)
