"""Euler-Maruyama paths, local times and the derivative flow.

Single-path operations (:func:`euler_path`, :func:`derivative_flow`, ...) keep
the full trajectory.  Ensemble runners (:func:`simulate_ensemble`,
:func:`coupled_difference`) integrate many paths at once and only record
requested grid points; they draw noise from a :class:`~hyperdrift.rng.NoiseSource`
so that path ``i`` sees the same increments whatever the chunking.

Local time at the hyperplane is estimated by the occupation formula
``dL = dt / (2 eps) * 1{|x_d| <= eps}`` with left-point evaluation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import DivergedError, DomainError, InvalidStateError
from .model import HyperplaneDriftModel
from .rng import BLOCK_STEPS, GROUP_SIZE, NoiseSource

CHUNK_PATHS = 16 * GROUP_SIZE
# Below |delta| < 2**SMALL_EXPONENT the difference of two same-side states is
# propagated with the branch Jacobians instead of subtracting coefficient values.
SMALL_EXPONENT = -27
_GRID_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j * dt`` for ``j = start_index, ..., start_index + n_steps``."""

    dt: float
    n_steps: int
    start_index: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise DomainError(f"dt must be positive, got {self.dt!r}")
        if self.n_steps < 0:
            raise DomainError("n_steps must be >= 0")

    @property
    def t_start(self) -> float:
        return self.start_index * self.dt

    @property
    def t_end(self) -> float:
        return (self.start_index + self.n_steps) * self.dt

    @property
    def end_index(self) -> int:
        return self.start_index + self.n_steps

    def times(self) -> np.ndarray:
        return (self.start_index + np.arange(self.n_steps + 1)) * self.dt

    @staticmethod
    def index_of(t: float, dt: float) -> int:
        j = round(t / dt)
        if abs(j * dt - t) > _GRID_RTOL * max(1.0, abs(t)):
            raise DomainError(f"time {t!r} is not on the grid with step {dt!r}")
        return int(j)

    @classmethod
    def span(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        if t_end < t_start:
            raise DomainError("t_end must be >= t_start")
        j0 = cls.index_of(t_start, dt)
        j1 = cls.index_of(t_end, dt)
        return cls(dt=float(dt), n_steps=j1 - j0, start_index=j0)

    def offset_of(self, t: float) -> int:
        k = self.index_of(t, self.dt) - self.start_index
        if not 0 <= k <= self.n_steps:
            raise DomainError(f"time {t!r} is outside [{self.t_start}, {self.t_end}]")
        return k


@dataclass(frozen=True, eq=False)
class WienerIncrements:
    grid: TimeGrid
    increments: np.ndarray  # (n_steps, m)
    seed: int
    stream_id: int

    def feed(self) -> Callable[[int, int], np.ndarray]:
        j0 = self.grid.start_index
        inc = self.increments

        def get(a, b):
            return inc[a - j0 : b - j0, None, :]

        return get


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, d)
    local_time_increments: np.ndarray  # (n_steps,)
    epsilon: float


@dataclass(frozen=True, eq=False)
class FlowPath:
    grid: TimeGrid
    matrices: np.ndarray  # (n_steps + 1, d, d)


def wiener(m: int, grid: TimeGrid, seed: int, stream_id: int = 0) -> WienerIncrements:
    src = NoiseSource(seed, m, grid.dt)
    inc = src.increments([stream_id], grid.start_index, grid.end_index)[:, 0, :]
    return WienerIncrements(grid, inc, int(seed), int(stream_id))


def wiener_two_sided(
    m: int, grid_neg: TimeGrid, grid_pos: TimeGrid, seed: int, stream_id: int = 0
) -> tuple[WienerIncrements, WienerIncrements]:
    """Increments of a two-sided Wiener process on a grid left of 0 and one right of 0.

    The two halves come from independent streams; the left half is a
    time-reversed Brownian motion.
    """
    if grid_neg.dt != grid_pos.dt:
        raise DomainError("both grids must share dt")
    if grid_neg.end_index > 0 or grid_pos.start_index < 0:
        raise DomainError("grid_neg must end at or before 0 and grid_pos start at or after 0")
    return wiener(m, grid_neg, seed, stream_id), wiener(m, grid_pos, seed, stream_id)


def default_epsilon(dt: float) -> float:
    return math.sqrt(dt)


# -- step kernels -------------------------------------------------------------


def _block_bounds(j0: int, j1: int):
    """Split ``[j0, j1)`` at multiples of the noise block length."""
    a = j0
    while a < j1:
        b = min(j1, (a // BLOCK_STEPS + 1) * BLOCK_STEPS)
        yield a, b
        a = b


def flow_increment(model, x, Y, dL, dw, dt):
    """Euler increment of the derivative flow including the local-time jump term."""
    dY = (model.alpha_jac(x) @ Y - model.lam * Y) * dt
    hit = np.nonzero(dL)[0]
    if hit.size:
        cols = model.jump_columns(x[hit])
        dY[hit] += cols[:, :, None] * Y[hit, -1, None, :] * dL[hit, None, None]
    if model.sigma_constant is None:
        dY += np.einsum("nkij,njl,nk->nil", model.sigma_columns_jac(x), Y, dw)
    return dY


def _check_finite(arr, step):
    if not np.isfinite(arr).all():
        raise DivergedError(step)


@dataclass(frozen=True, eq=False)
class EnsembleRecord:
    """Values of an ensemble at recorded grid offsets (axis 0) for every path (axis 1)."""

    times: np.ndarray
    states: np.ndarray  # (k, n, d)
    local_time: np.ndarray | None  # (k, n)
    tanaka: np.ndarray | None  # (k, n)
    flow: np.ndarray | None  # (k, n, d, d)


def _integrate(
    model: HyperplaneDriftModel,
    x0: np.ndarray,
    feed: Callable[[int, int], np.ndarray],
    grid: TimeGrid,
    record: np.ndarray,
    eps: float | None,
    flow: bool,
    tanaka: bool,
):
    n, d = x0.shape
    dt = grid.dt
    x = x0.copy()
    k = len(record)
    states = np.empty((k, n, d))
    want_L = eps is not None
    L = np.zeros(n)
    rec_L = np.empty((k, n)) if want_L else None
    occ = dt / (2.0 * eps) if want_L else 0.0
    I = np.zeros(n)
    x0_pos = 2.0 * np.maximum(x0[:, -1], 0.0)
    rec_T = np.empty((k, n)) if tanaka else None
    Y = np.broadcast_to(np.eye(d), (n, d, d)).copy() if flow else None
    rec_Y = np.empty((k, n, d, d)) if flow else None
    lam = model.lam
    pos = {int(r): i for i, r in enumerate(record)}

    def save(offset):
        i = pos.get(offset)
        if i is None:
            return
        states[i] = x
        if want_L:
            rec_L[i] = L
        if tanaka:
            rec_T[i] = 2.0 * np.maximum(x[:, -1], 0.0) - x0_pos - 2.0 * I
        if flow:
            rec_Y[i] = Y

    save(0)
    if model.family is not None:
        fa, fc, fs0, fb = model.family
        for a, b in _block_bounds(grid.start_index, grid.end_index):
            # kernels read one noise row per path; expand shared rows
            dw_blk = np.ascontiguousarray(np.broadcast_to(feed(a, b), (b - a, n, model.dim_m)))
            slots = np.array([pos.get(a - grid.start_index + s + 1, -1) for s in range(b - a)], dtype=np.int64)
            bad = _kernels.ensemble_block(
                x, L, I, Y if flow else np.empty((0, d, d)), dw_blk, dt, lam, fa, fc, fs0, fb,
                eps if want_L else 1.0, want_L, tanaka, flow, slots, x0_pos, states,
                rec_L if want_L else np.empty((0, 0)), rec_T if tanaka else np.empty((0, 0)),
                rec_Y if flow else np.empty((0, 0, d, d)),
            )
            if bad >= 0:
                raise DivergedError(a - grid.start_index + bad + 1)
        return EnsembleRecord(grid.times()[record], states, rec_L, rec_T, rec_Y)
    for a, b in _block_bounds(grid.start_index, grid.end_index):
        dw_blk = feed(a, b)
        for s in range(b - a):
            dw = dw_blk[s]
            offset = a - grid.start_index + s
            dL = occ * (np.abs(x[:, -1]) <= eps) if want_L else None
            dx = (model.alpha(x) - lam * x) * dt + model.noise(x, dw)
            if tanaka:
                I += np.where(x[:, -1] > 0.0, dx[:, -1], 0.0)
            if flow:
                Y = Y + flow_increment(model, x, Y, dL, dw, dt)
            x = x + dx
            _check_finite(x, offset + 1)
            if want_L:
                L += dL
            save(offset + 1)
    return EnsembleRecord(grid.times()[record], states, rec_L, rec_T, rec_Y)


def _as_batch(x, n, d) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (d,):
            raise InvalidStateError(f"initial state must have {d} coordinates")
        arr = np.broadcast_to(arr, (n, d))
    if arr.shape != (n, d):
        raise InvalidStateError(f"initial states must have shape ({n}, {d})")
    if not np.isfinite(arr).all():
        raise InvalidStateError("initial state contains non-finite entries")
    return np.array(arr, dtype=float)


def _record_offsets(grid: TimeGrid, record) -> np.ndarray:
    if record is None:
        return np.arange(grid.n_steps + 1)
    rec = np.unique(np.asarray(record, dtype=np.int64))
    if rec.size and (rec[0] < 0 or rec[-1] > grid.n_steps):
        raise DomainError("record offsets outside the grid")
    return rec


def record_offsets_for_times(grid: TimeGrid, times: Sequence[float]) -> np.ndarray:
    return np.array([grid.offset_of(t) for t in times], dtype=np.int64)


def run_chunked(fn, n: int, workers: int = 1, chunk: int = CHUNK_PATHS):
    """Apply ``fn(slice)`` to consecutive path chunks and concatenate along axis 1.

    Chunks are fixed by ``chunk`` alone, so the result does not depend on
    ``workers``.
    """
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, slices))
    else:
        parts = [fn(s) for s in slices]
    return parts


def _concat(parts, axis=1):
    if parts[0] is None:
        return None
    return np.concatenate(parts, axis=axis)


def simulate_ensemble(
    model: HyperplaneDriftModel,
    x0,
    grid: TimeGrid,
    noise: NoiseSource,
    n_paths: int,
    eps: float | None = None,
    record=None,
    flow: bool = False,
    tanaka: bool = False,
    first_stream: int = 0,
    workers: int = 1,
) -> EnsembleRecord:
    """Integrate ``n_paths`` Euler paths; path ``i`` uses noise stream ``first_stream + i``."""
    if noise.m != model.dim_m or noise.dt != grid.dt:
        raise DomainError("noise source does not match model or grid")
    x0 = _as_batch(x0, n_paths, model.dim_d)
    rec = _record_offsets(grid, record)
    streams = first_stream + np.arange(n_paths)

    def part(sl):
        st = streams[sl]
        return _integrate(model, x0[sl], lambda a, b: noise.increments(st, a, b), grid, rec, eps, flow, tanaka)

    parts = run_chunked(part, n_paths, workers)
    return EnsembleRecord(
        parts[0].times,
        _concat([p.states for p in parts]),
        _concat([p.local_time for p in parts]),
        _concat([p.tanaka for p in parts]),
        _concat([p.flow for p in parts]),
    )


# -- single paths -------------------------------------------------------------


def euler_path(model: HyperplaneDriftModel, x0, w: WienerIncrements, epsilon: float | None = None) -> Trajectory:
    """Euler-Maruyama path driven by ``w`` with occupation local-time increments."""
    eps = default_epsilon(w.grid.dt) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise DomainError("epsilon must be positive")
    if w.increments.shape != (w.grid.n_steps, model.dim_m):
        raise DomainError("increments do not match the grid and noise dimension")
    rec = _integrate(model, _as_batch(x0, 1, model.dim_d), w.feed(), w.grid, np.arange(w.grid.n_steps + 1), eps, False, False)
    return Trajectory(w.grid, rec.states[:, 0, :], np.diff(rec.local_time[:, 0]) if w.grid.n_steps else np.zeros(0), eps)


def _local_time_increments(states: np.ndarray, dt: float, eps: float) -> np.ndarray:
    return (dt / (2.0 * eps)) * (np.abs(states[:-1, -1]) <= eps)


def occupation_local_time(traj: Trajectory) -> np.ndarray:
    """Cumulative occupation estimate of the local time at the hyperplane, one value per grid point."""
    return np.concatenate([[0.0], np.cumsum(traj.local_time_increments)])


def _check_match(traj: Trajectory, w: WienerIncrements):
    if traj.grid != w.grid:
        raise DomainError("trajectory and increments live on different grids")


def tanaka_local_time(model: HyperplaneDriftModel, traj: Trajectory, w: WienerIncrements) -> np.ndarray:
    """Semimartingale local time of the last coordinate at 0 from Tanaka's formula.

    ``2 (x_t)^+ - 2 (x_0)^+ - 2 sum 1{x_n > 0} dx_n`` where ``dx_n`` is rebuilt
    from the scheme's own drift and noise increments.
    """
    _check_match(traj, w)
    x = traj.states
    dt = traj.grid.dt
    if traj.grid.n_steps == 0:
        return np.zeros(1)
    left = x[:-1]
    dxd = model.drift(left)[:, -1] * dt + model.noise(left, w.increments)[:, -1]
    integral = np.concatenate([[0.0], np.cumsum(np.where(left[:, -1] > 0.0, dxd, 0.0))])
    return 2.0 * np.maximum(x[:, -1], 0.0) - 2.0 * max(x[0, -1], 0.0) - 2.0 * integral


def local_time_comparison(model: HyperplaneDriftModel, traj: Trajectory, w: WienerIncrements):
    """Pair ``(L_occupation, L_tanaka / B_sigma)``; the first should not exceed the second."""
    return occupation_local_time(traj), tanaka_local_time(model, traj, w) / model.declared.B_sigma


def derivative_flow(model: HyperplaneDriftModel, traj: Trajectory, w: WienerIncrements) -> FlowPath:
    """Derivative of the solution map along ``traj``, started at the identity."""
    _check_match(traj, w)
    if not model.has_jacobians:
        from .errors import CapabilityError

        raise CapabilityError(f"model {model.name!r} does not supply Jacobians")
    d = model.dim_d
    n = traj.grid.n_steps
    out = np.empty((n + 1, d, d))
    Y = np.eye(d)[None]
    out[0] = Y[0]
    dL = traj.local_time_increments
    for i in range(n):
        x = traj.states[i : i + 1]
        Y = Y + flow_increment(model, x, Y, dL[i : i + 1], w.increments[i : i + 1], traj.grid.dt)
        out[i + 1] = Y[0]
    return FlowPath(traj.grid, out)


def finite_difference_flow(model: HyperplaneDriftModel, x, v, eps_list: Sequence[float], w: WienerIncrements) -> list[np.ndarray]:
    """Quotients ``(phi_T(x + eps v) - phi_T(x)) / eps`` under shared increments."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise DomainError("direction must have unit length")
    out = []
    for eps in eps_list:
        if eps == 0:
            raise DomainError("finite-difference step must be nonzero")
        starts = np.stack([x, x + eps * v])
        rec = _integrate(model, starts, w.feed(), w.grid, np.array([w.grid.n_steps]), None, False, False)
        end = rec.states[0]
        out.append((end[1] - end[0]) / eps)
    return out


# -- coupled differences in scaled form ----------------------------------------


@dataclass(frozen=True, eq=False)
class DifferenceRecord:
    """``log|phi_t(y) - phi_t(x)|`` at recorded offsets, plus the base states."""

    times: np.ndarray
    log_norm: np.ndarray  # (k, n); -inf where the difference is exactly zero
    base: np.ndarray  # (k, n, d)


def difference_step(model, x, u, e, dw, dt, ax=None):
    """Advance a base state ``x`` and a difference ``u * 2**e`` by one Euler step.

    Returns ``(x_next, u_next, e_next)`` with ``max|u_next|`` renormalised to
    ``[1/2, 1)`` (zero rows stay zero).  Coefficient differences are exact
    subtractions unless both states share a side and the difference is below
    ``2**SMALL_EXPONENT``, in which case branch Jacobians propagate it.
    """
    lam = model.lam
    if ax is None:
        ax = model.alpha(x)
    delta = np.ldexp(u, e[:, None])
    y = x + delta
    cross = model.upper(x) != model.upper(y)
    lin = (e <= SMALL_EXPONENT) & ~cross if model.has_jacobians else np.zeros(len(x), bool)
    du = -lam * dt * u
    direct = np.nonzero(~lin)[0]
    linear = np.nonzero(lin)[0]
    if linear.size:
        xl = x[linear]
        du[linear] += dt * np.einsum("nij,nj->ni", model.alpha_jac(xl), u[linear])
        if model.sigma_constant is None:
            du[linear] += np.einsum("nkij,nj,nk->ni", model.sigma_columns_jac(xl), u[linear], dw[linear])
    if direct.size:
        xd, yd, ed = x[direct], y[direct], e[direct]
        diff = (model.alpha(yd) - ax[direct]) * dt
        if model.sigma_constant is None:
            diff += model.noise(yd, dw[direct]) - model.noise(xd, dw[direct])
        du[direct] += np.ldexp(diff, -ed[:, None])
    x_next = x + (ax - lam * x) * dt + model.noise(x, dw)
    u_next = u + du
    _, shift = np.frexp(np.max(np.abs(u_next), axis=1))
    return x_next, np.ldexp(u_next, -shift[:, None]), e + shift


def scaled_difference(delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split differences ``(n, d)`` into ``u * 2**e`` with ``max|u|`` in ``[1/2, 1)``."""
    delta = np.asarray(delta, dtype=float)
    _, e = np.frexp(np.max(np.abs(delta), axis=1))
    return np.ldexp(delta, -e[:, None]), e.astype(np.int64)


def log_norm(u: np.ndarray, e: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.linalg.norm(u, axis=-1)) + e * math.log(2.0)


def _integrate_difference(model, x, u, e, feed, grid, record):
    """Advance ``(x, u, e)`` in place over ``grid``, recording at ``record`` offsets."""
    n, d = x.shape
    k = len(record)
    logs = np.empty((k, n))
    base = np.empty((k, n, d))
    pos = {int(r): i for i, r in enumerate(record)}

    def save(offset):
        i = pos.get(offset)
        if i is not None:
            logs[i] = log_norm(u, e)
            base[i] = x

    save(0)
    if model.family is not None:
        fa, fc, fs0, fb = model.family
        for a, b in _block_bounds(grid.start_index, grid.end_index):
            # kernels read one noise row per path; expand shared rows
            dw_blk = np.ascontiguousarray(np.broadcast_to(feed(a, b), (b - a, n, model.dim_m)))
            slots = np.array([pos.get(a - grid.start_index + s + 1, -1) for s in range(b - a)], dtype=np.int64)
            bad = _kernels.difference_block(x, u, e, dw_blk, grid.dt, model.lam, fa, fc, fs0, fb, SMALL_EXPONENT, slots, logs, base)
            if bad >= 0:
                raise DivergedError(a - grid.start_index + bad + 1)
        return DifferenceRecord(grid.times()[record], logs, base)
    out = (x, u, e)
    for a, b in _block_bounds(grid.start_index, grid.end_index):
        dw_blk = feed(a, b)
        for s in range(b - a):
            offset = a - grid.start_index + s
            x, u, e = difference_step(model, x, u, e, dw_blk[s], grid.dt)
            _check_finite(x, offset + 1)
            save(offset + 1)
    out[0][...], out[1][...], out[2][...] = x, u, e
    return DifferenceRecord(grid.times()[record], logs, base)


def advance_difference(model: HyperplaneDriftModel, x, u, e, grid: TimeGrid, noise: NoiseSource, streams) -> None:
    """Advance base states ``x`` and scaled differences ``u * 2**e`` in place over ``grid``.

    Row ``i`` is driven by noise stream ``streams[i]``; streams may repeat.
    """
    if noise.m != model.dim_m or noise.dt != grid.dt:
        raise DomainError("noise source does not match model or grid")
    st = np.asarray(streams, dtype=np.int64)
    _integrate_difference(model, x, u, e, lambda a, b: noise.increments(st, a, b), grid, np.array([grid.n_steps]))


def coupled_difference(
    model: HyperplaneDriftModel,
    x,
    y,
    grid: TimeGrid,
    noise: NoiseSource,
    n_paths: int,
    record=None,
    first_stream: int = 0,
    workers: int = 1,
) -> DifferenceRecord:
    """Track ``phi_t(y) - phi_t(x)`` for ``n_paths`` shared-noise pairs without underflow."""
    if noise.m != model.dim_m or noise.dt != grid.dt:
        raise DomainError("noise source does not match model or grid")
    x0 = _as_batch(x, n_paths, model.dim_d)
    y0 = _as_batch(y, n_paths, model.dim_d)
    rec = _record_offsets(grid, record)
    streams = first_stream + np.arange(n_paths)

    def part(sl):
        st = streams[sl]
        x = x0[sl].copy()
        u, e = scaled_difference(y0[sl] - x)
        return _integrate_difference(model, x, u, e, lambda a, b: noise.increments(st, a, b), grid, rec)

    parts = run_chunked(part, n_paths, workers)
    return DifferenceRecord(parts[0].times, _concat([p.log_norm for p in parts]), _concat([p.base for p in parts]))
