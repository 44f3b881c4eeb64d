"""Brute-force validators that share none of the skeleton's machinery.

* a fine-grid Brownian walk that records the first grid node outside the
  ``phi_eps`` domain (no bridge correction, so exits are biased late by
  ``O(sqrt(dt))``);
* an explicit Euler-Maruyama integrator for L- and G-class SDEs.
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
from .stats import ks_statistic, ks_two_sample

E = math.e
_BLOCK = 8192
EULER_STREAM_OFFSET = 1 << 40


class EulerDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class GridExitRecord:
    exit_time: float
    exit_side: int
    dt: float


@numba.njit(nogil=True, cache=True)
def _grid_phi(eps, t):
    r = E * eps * eps
    if t <= 0.0 or t >= r:
        return 0.0
    return math.sqrt(t * math.log(eps * eps * E / t))


@numba.njit(nogil=True, cache=True)
def _scan_block(incr, b0, k0, dt, eps, phi_scale, strides, found, times, sides):
    """Walk one block of fine increments, updating every level not yet exited.

    Level ``j`` looks only at fine nodes whose index is a multiple of
    ``strides[j]``. Returns the position at the end of the block.
    """
    b = b0
    for i in range(incr.shape[0]):
        b += incr[i]
        k = k0 + i + 1
        t = k * dt
        bound = phi_scale * _grid_phi(eps, t)
        if abs(b) >= bound:
            for j in range(strides.shape[0]):
                if found[j] == 0 and k % strides[j] == 0:
                    found[j] = 1
                    times[j] = t
                    sides[j] = 1.0 if b >= 0.0 else -1.0
    return b


def brute_force_exit_levels(epsilon: float, dt: float, n_levels: int, stream: RngStream,
                            phi_scale: float = 1.0):
    """Exit records at steps ``dt, 2 dt, ..., 2^(n_levels-1) dt`` from one fine path.

    Level 0 is the finest grid. Because every coarse node is also a fine node,
    a coarse exit is never earlier than the fine one. ``phi_scale`` shrinks or
    widens the domain and exists only for negative-control tests.
    """
    r = E * epsilon * epsilon
    if not 0 < dt <= r / 1e4 * (1 + 1e-12):
        raise ValueError(f"dt must lie in (0, e eps^2 / 1e4] = (0, {r / 1e4}]")
    strides = np.array([1 << j for j in range(n_levels)], dtype=np.int64)
    found = np.zeros(n_levels, dtype=np.int64)
    times = np.zeros(n_levels)
    sides = np.zeros(n_levels)
    n_total = int(math.floor(r / dt * (1 + 1e-12)))
    sd = math.sqrt(dt)
    b, k = 0.0, 0
    while k < n_total and not found.all():
        m = min(_BLOCK, n_total - k)
        incr = stream.normal(m) * sd
        b = _scan_block(incr, b, k, dt, epsilon, phi_scale, strides, found, times, sides)
        k += m
    # the domain closes at e eps^2: force the exit there
    side = 1.0 if b >= 0.0 else -1.0
    out = []
    for j in range(n_levels):
        if found[j]:
            out.append(GridExitRecord(float(times[j]), int(sides[j]), dt * strides[j]))
        else:
            out.append(GridExitRecord(r, int(side), dt * strides[j]))
    return out


def brute_force_exit(epsilon: float, dt: float, stream: RngStream, phi_scale: float = 1.0) -> GridExitRecord:
    return brute_force_exit_levels(epsilon, dt, 1, stream, phi_scale)[0]


@dataclass(frozen=True)
class ExitStudy:
    dt: np.ndarray
    ks: np.ndarray
    mean_exit: np.ndarray
    plus_fraction: np.ndarray
    n: int
    times: np.ndarray

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dt", "ks", "mean_exit", "n"])
        for d, k, m in zip(self.dt, self.ks, self.mean_exit):
            w.writerow([repr(float(d)), repr(float(k)), repr(float(m)), self.n])
        return buf.getvalue()


def exit_study(epsilon: float, dt: float, n_levels: int, n_records: int, seed: int,
               threads: int = 1, phi_scale: float = 1.0, cdf=None) -> ExitStudy:
    """KS distance and mean exit time at ``n_levels`` grid steps ``dt * 2^j``."""
    from .distributions import ExitLaw, w_cdf

    if cdf is None:
        r = ExitLaw(epsilon).r_eps

        def cdf(t):
            return w_cdf(np.asarray(t) / r)

    recs = map_paths(lambda st, _i: brute_force_exit_levels(epsilon, dt, n_levels, st, phi_scale),
                     seed, n_records, threads=threads)
    times = np.array([[rec.exit_time for rec in row] for row in recs])
    sides = np.array([[rec.exit_side for rec in row] for row in recs])
    ks = np.array([ks_statistic(times[:, j], cdf) for j in range(n_levels)])
    return ExitStudy(dt=dt * 2.0 ** np.arange(n_levels), ks=ks, mean_exit=times.mean(axis=0),
                     plus_fraction=(sides > 0).mean(axis=0), n=n_records, times=times)


# -- Euler-Maruyama ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EulerPath:
    dt: float
    values: np.ndarray

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


@numba.njit(nogil=True, cache=True)
def _euler_kernel(geometric, x0, dt, a, b, sig, dw, out, store):
    """Returns ``(x, bad_step)``; ``bad_step`` is -1 unless the state went non-finite."""
    x = x0
    if store:
        out[0] = x
    for k in range(dw.shape[0]):
        if geometric:
            drift = a[k] * x + (b[k] * x * math.log(x) if x > 0.0 else 0.0)
            vol = sig[k] * x
        else:
            drift = a[k] * x + b[k]
            vol = sig[k]
        x = x + drift * dt + vol * dw[k]
        if not math.isfinite(x) or (geometric and x <= 0.0):
            return x, k + 1
        if store:
            out[k + 1] = x
    return x, -1


def _euler_grid(coeffs, T, dt):
    n = int(math.floor(T / dt * (1 + 1e-12)))
    t = np.arange(n) * dt
    ones = np.ones_like(t)
    a = np.asarray(coeffs.a(t), dtype=float) * ones
    b = np.asarray(coeffs.b(t), dtype=float) * ones
    if coeffs.kind == "L":
        sig = np.asarray(coeffs.sigma_bar(t), dtype=float) * ones
    else:
        sig = coeffs.sigma_under * ones
    return n, a, b, sig


def euler_simulate(coeffs, x0: float, T: float, dt: float, stream: RngStream | None = None,
                   increments=None, store: bool = True) -> EulerPath:
    """Explicit Euler-Maruyama on the grid ``k dt``, ``k = 0..floor(T/dt)``.

    ``increments`` (Brownian increments, length ``floor(T/dt)``) may be passed
    to pair two runs on the same noise; otherwise they are drawn from ``stream``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, a, b, sig = _euler_grid(coeffs, T, dt)
    if increments is None:
        if stream is None:
            raise ValueError("need a stream or increments")
        dw = stream.normal(n) * math.sqrt(dt)
    else:
        dw = np.asarray(increments, dtype=float)
        if dw.shape != (n,):
            raise ValueError(f"expected {n} increments, got {dw.shape}")
    out = np.empty(n + 1 if store else 0)
    x, bad = _euler_kernel(coeffs.kind == "G", float(x0), dt, a, b, sig, dw, out, store)
    if bad >= 0:
        raise EulerDiverged(f"Euler state non-finite or non-positive at step {bad}: x={x}")
    if not store:
        out = np.array([float(x0), x])
    return EulerPath(dt=float(dt), values=out)


def euler_terminal(coeffs, x0: float, T: float, dt: float, seed: int, n_paths: int,
                   threads: int = 1, start_index: int = EULER_STREAM_OFFSET) -> np.ndarray:
    """``X_T`` for ``n_paths`` Euler paths; path ``i`` uses ``RngStream(seed, start_index + i)``."""
    n, a, b, sig = _euler_grid(coeffs, T, dt)
    sd = math.sqrt(dt)
    geometric = coeffs.kind == "G"
    empty = np.empty(0)

    def one(stream, _i):
        x = float(x0)
        for lo in range(0, n, 1 << 16):
            hi = min(n, lo + (1 << 16))
            dw = stream.normal(hi - lo) * sd
            x, bad = _euler_kernel(geometric, x, dt, a[lo:hi], b[lo:hi], sig[lo:hi], dw, empty, False)
            if bad >= 0:
                raise EulerDiverged(f"Euler state non-finite or non-positive at step {lo + bad}: x={x}")
        return x

    return np.array(map_paths(one, seed, n_paths, threads=threads, start=start_index))


@dataclass(frozen=True)
class MarginalComparison:
    ks: float
    skeleton_values: np.ndarray
    euler_values: np.ndarray
    mean_count: float


def marginal_compare(model, T: float, epsilon: float, n_paths: int, dt: float, seed: int,
                     threads: int = 1) -> MarginalComparison:
    """Two-sample KS between the skeleton output at ``T`` and Euler ``X_T``.

    Skeleton path ``i`` uses stream ``i``; Euler path ``i`` uses stream
    ``EULER_STREAM_OFFSET + i`` of the same seed.
    """
    from .diffusion import approximate_counts

    if model.coeffs is None:
        raise ValueError(f"model {model.label!r} has no SDE coefficients for an Euler run")
    batch = approximate_counts(model, T, epsilon, seed, n_paths, threads=threads)
    # the Euler scheme runs on the SDE, which starts at f(0, x0)
    start = float(model.f(0.0, model.x0))
    xe = euler_terminal(model.coeffs, start, T, dt, seed, n_paths, threads=threads)
    return MarginalComparison(ks=ks_two_sample(batch.y_at_horizon, xe),
                              skeleton_values=batch.y_at_horizon, euler_values=xe,
                              mean_count=float(batch.counts.mean()))
