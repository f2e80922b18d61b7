"""Pullback construction of the stationary solution on a two-sided noise field.

A realization is one noise stream of a :class:`~hyperdrift.rng.NoiseSource`
read at negative and positive step indices.  Starting the equation at 0 at
earlier and earlier times ``s`` and evaluating at a fixed ``t`` produces a
Cauchy sequence whose limit is the stationary solution at ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .constants import DecayConstants, GeneratorBound, decay_constants, generator_bound
from .errors import ConfigError, DomainError
from .model import HyperplaneDriftModel
from .montecarlo import C_ALLOW, BoundCheck, MCEstimate, allowance
from .paths import (
    TimeGrid,
    advance_difference,
    coupled_difference,
    record_offsets_for_times,
    scaled_difference,
    simulate_ensemble,
)
from .rng import NoiseSource

KS_ALPHA = 1e-3
DEPTH_TARGET = 0.01


@dataclass(frozen=True, eq=False)
class PullbackRun:
    """Pullback endpoints ``phi_{s_j, t}(0)`` for every start time and realization.

    ``endpoints`` has shape ``(len(s_list), n, d)``; ``log_diffs[j]`` holds
    ``log|phi_{s_{j+1}, t}(0) - phi_{s_j, t}(0)|`` with shape ``(len(s_list) - 1, n)``.
    """

    t_eval: float
    s_list: np.ndarray
    endpoints: np.ndarray
    log_diffs: np.ndarray
    seed: int

    @property
    def diffs(self) -> np.ndarray:
        return np.exp(self.log_diffs)

    @property
    def depths(self) -> np.ndarray:
        return self.t_eval - self.s_list


def pullback_sample(
    model: HyperplaneDriftModel,
    t_eval: float,
    s_list: Sequence[float],
    dt: float,
    seed: int,
    n_realizations: int = 1,
    first_stream: int = 0,
) -> PullbackRun:
    """Solutions started at 0 at each ``s_j`` and evaluated at ``t_eval``, on shared noise.

    One forward sweep from the earliest start: a new copy is started at 0 at
    each ``s_j`` while the difference to the copy started just before is
    carried in scaled form, so differences far below double-precision range
    keep their size.
    """
    s = np.asarray(s_list, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise DomainError("s_list must be a nonempty sequence")
    if np.any(np.diff(s) >= 0):
        raise DomainError("s_list must be strictly decreasing")
    if s[0] > t_eval:
        raise DomainError("start times must not exceed t_eval")
    idx = [TimeGrid.index_of(v, dt) for v in s] + [TimeGrid.index_of(t_eval, dt)]
    n, d, J = int(n_realizations), model.dim_d, s.size
    noise = NoiseSource(seed, model.dim_m, dt)
    real = first_stream + np.arange(n)
    # rows are (slot, realization) pairs, slot j started at s_j; slots are born deepest first
    x = np.zeros((0, d))
    u = np.zeros((0, d))
    e = np.zeros(0, dtype=np.int64)
    streams = np.zeros(0, dtype=np.int64)
    for j in range(J - 1, -1, -1):
        if x.shape[0]:
            grid = TimeGrid(dt, idx[j] - idx[j + 1], idx[j + 1])
            advance_difference(model, x, u, e, grid, noise, streams)
        if j == J - 1:
            nu, ne = np.zeros((n, d)), np.zeros(n, dtype=np.int64)
        else:
            # the copy started one step deeper sits in the first n rows
            nu, ne = scaled_difference(x[:n])
        x = np.concatenate([np.zeros((n, d)), x])
        u = np.concatenate([nu, u])
        e = np.concatenate([ne, e])
        streams = np.concatenate([real, streams])
    grid = TimeGrid(dt, idx[-1] - idx[0], idx[0])
    advance_difference(model, x, u, e, grid, noise, streams)
    endpoints = x.reshape(J, n, d)
    with np.errstate(divide="ignore"):
        logs = np.log(np.linalg.norm(u, axis=1)) + e * math.log(2.0)
    return PullbackRun(float(t_eval), s, endpoints, logs.reshape(J, n)[:-1], int(seed))


def depth_schedule(t_eval: float, depths: Sequence[float]) -> np.ndarray:
    """Start times ``t_eval - depth`` for increasing depths."""
    return t_eval - np.asarray(sorted(depths), dtype=float)


def cauchy_constant(consts: DecayConstants, gen: GeneratorBound) -> float:
    """``C3 = C1 sqrt(K1_gen / K2_gen)``."""
    return consts.C1 * math.sqrt(gen.second_moment_cap)


def cauchy_rate_check(run: PullbackRun, consts: DecayConstants, gen: GeneratorBound) -> list[BoundCheck]:
    """Ensemble-mean difference at each start ``s_j`` against ``C3 exp(C2 (s_j - t))``."""
    if run.log_diffs.shape[1] < 2:
        raise DomainError("the Cauchy check needs at least two realizations")
    c3 = cauchy_constant(consts, gen)
    checks = []
    for j, logs in enumerate(run.log_diffs):
        log_bound = math.log(c3) + consts.C2 * (run.s_list[j] - run.t_eval)
        est = MCEstimate.from_log_samples(logs, run.seed)
        checks.append(BoundCheck("pullback_diff", float(run.s_list[j]), est, math.exp(log_bound), 0.0, log_bound=log_bound))
    return checks


def pullback_slope(run: PullbackRun) -> float:
    """Least-squares slope of the log mean difference against depth ``t - s_j``."""
    depth = run.depths[:-1]
    logm = [MCEstimate.from_log_samples(r, run.seed).log_mean for r in run.log_diffs]
    pts = [(a, b) for a, b in zip(depth, logm) if math.isfinite(b)]
    if len(pts) < 2:
        return math.nan
    a, b = np.array(pts).T
    return float(np.polyfit(a, b, 1)[0])


def second_moment_curve(
    model: HyperplaneDriftModel,
    s_start: float,
    x,
    times: Sequence[float],
    n_paths: int,
    dt: float,
    seed: int,
    c_allow: float = C_ALLOW,
    workers: int = 1,
) -> list[BoundCheck]:
    """``E|phi_{s,t}(x)|^2`` against ``|x|^2 e^{-K2 (t-s)} + (K1/K2)(1 - e^{-K2 (t-s)})``.

    A final check compares the largest estimate with ``max(|x|^2, K1/K2)``.
    """
    if n_paths < 2:
        raise DomainError("n_paths must be at least 2")
    if min(times) < s_start:
        raise DomainError("evaluation times must not precede s_start")
    gen = generator_bound(model.declared, model.lam)
    x = np.asarray(x, dtype=float)
    r2 = float(x @ x)
    grid = TimeGrid.span(s_start, max(times), dt)
    offsets = record_offsets_for_times(grid, times)
    rec = simulate_ensemble(model, x, grid, NoiseSource(seed, model.dim_m, dt), n_paths, record=offsets, workers=workers)
    rank = {int(o): i for i, o in enumerate(np.unique(offsets))}
    allow = allowance(dt, 0.0, c_allow)
    checks = []
    for t, o in zip(times, offsets):
        sq = np.sum(rec.states[rank[int(o)]] ** 2, axis=1)
        decay = math.exp(-gen.K2_gen * (t - s_start))
        bound = r2 * decay + gen.second_moment_cap * (1.0 - decay)
        checks.append(BoundCheck("second_moment", float(t), MCEstimate.from_samples(sq, seed), bound, allow))
    worst = max(checks, key=lambda c: c.upper)
    checks.append(BoundCheck("second_moment_sup", worst.t, worst.estimate, max(r2, gen.second_moment_cap), allow))
    return checks


@dataclass(frozen=True)
class StationarityReport:
    """Two-sample KS comparison of pullback samples at two times, per coordinate."""

    times: tuple[float, float]
    statistics: tuple[float, ...]
    p_values: tuple[float, ...]
    n: int
    alpha: float
    depth: float
    reference_statistics: tuple[float, ...] | None = None
    reference_p_values: tuple[float, ...] | None = None

    @property
    def threshold(self) -> float:
        """Per-coordinate level after the Bonferroni correction."""
        return self.alpha / len(self.statistics)

    @property
    def passed(self) -> bool:
        ok = all(p >= self.threshold for p in self.p_values)
        if self.reference_p_values is not None:
            ok = ok and all(p >= self.threshold for p in self.reference_p_values)
        return ok


def required_depth(consts: DecayConstants, target: float = DEPTH_TARGET) -> float:
    """Smallest depth with ``C1 exp(-C2 depth) < target``."""
    return math.log(consts.C1 / target) / consts.C2


def pullback_states(model, t_eval, depth, n, dt, seed, workers=1, first_stream=0) -> np.ndarray:
    """``phi_{t - depth, t}(0)`` for ``n`` realizations."""
    grid = TimeGrid.span(t_eval - depth, t_eval, dt)
    rec = simulate_ensemble(
        model, np.zeros(model.dim_d), grid, NoiseSource(seed, model.dim_m, dt), n,
        record=[grid.n_steps], first_stream=first_stream, workers=workers,
    )
    return rec.states[0]


def ou_stationary_std(model: HyperplaneDriftModel) -> float | None:
    """Per-coordinate stationary standard deviation of a driftless model with ``sigma = s I``."""
    if model.family is None or model.family[:2] != (0.0, 0.0) or model.family[3] != 0.0:
        return None
    return abs(model.family[2]) / math.sqrt(2.0 * model.lam)


def stationarity_test(
    model: HyperplaneDriftModel,
    t1: float,
    t2: float,
    n_realizations: int,
    s_depth: float,
    dt: float,
    seed: int,
    alpha: float = KS_ALPHA,
    workers: int = 1,
) -> StationarityReport:
    """Deep-pullback samples at ``t1`` and ``t2`` compared coordinate-wise by two-sample KS.

    For driftless models with scalar diffusion the samples at ``t1`` are also
    tested against the exact normal stationary law.
    """
    consts = decay_constants(model.lam, model.declared, model.dim_d)
    need = required_depth(consts)
    if s_depth < need:
        raise ConfigError(f"pullback depth {s_depth!r} is too shallow; need at least {need!r}")
    a = pullback_states(model, t1, s_depth, n_realizations, dt, seed, workers)
    # fresh streams keep the two samples independent even when the windows overlap
    b = a if t2 == t1 else pullback_states(model, t2, s_depth, n_realizations, dt, seed, workers, first_stream=n_realizations)
    st, pv = [], []
    for k in range(model.dim_d):
        res = stats.ks_2samp(a[:, k], b[:, k])
        st.append(float(res.statistic))
        pv.append(float(res.pvalue))
    ref_st = ref_pv = None
    sd = ou_stationary_std(model)
    if sd is not None:
        ref = [stats.kstest(a[:, k], "norm", args=(0.0, sd)) for k in range(model.dim_d)]
        ref_st = tuple(float(r.statistic) for r in ref)
        ref_pv = tuple(float(r.pvalue) for r in ref)
    return StationarityReport((float(t1), float(t2)), tuple(st), tuple(pv), int(n_realizations), float(alpha), float(s_depth), ref_st, ref_pv)


def uniqueness_coupling(
    model: HyperplaneDriftModel,
    t_eval: float,
    x,
    y,
    depth: float,
    dt: float,
    seed: int,
    n_paths: int = 1000,
    workers: int = 1,
) -> BoundCheck:
    """``E(|phi_{s,t}(x) - phi_{s,t}(y)| ^ 1)`` against ``C1 e^{-C2 (t-s)} |x - y| ^ 1`` with ``s = t - depth``."""
    consts = decay_constants(model.lam, model.declared, model.dim_d)
    grid = TimeGrid.span(t_eval - depth, t_eval, dt)
    rec = coupled_difference(model, x, y, grid, NoiseSource(seed, model.dim_m, dt), n_paths, [grid.n_steps], workers=workers)
    logs = np.minimum(rec.log_norm[0], 0.0)
    dist = float(np.linalg.norm(np.asarray(y, float) - np.asarray(x, float)))
    with np.errstate(divide="ignore"):
        log_bound = min(math.log(consts.C1) - consts.C2 * depth + math.log(dist), 0.0) if dist > 0 else -math.inf
    return BoundCheck("uniqueness_coupling", float(t_eval), MCEstimate.from_log_samples(logs, seed), math.exp(log_bound), 0.0, log_bound=log_bound)
