"""Seeded Monte Carlo checks of the decay, local-time and flow-moment bounds.

Every check compares a sample mean plus ``Z_SCORE`` standard errors with a
bound.  Local-time and flow-moment checks may exceed the bound by a
discretisation allowance ``c_allow * (sqrt(dt) + eps)``; decay checks use no
allowance.  Quantities that underflow double precision (coupled differences at
large ``lambda``) are estimated and compared in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .constants import (
    DecayConstants,
    decay_constants,
    feasible_horizon,
    khasminskii_bound,
    lambda_threshold,
    rho,
)
from .errors import DomainError
from .model import HyperplaneDriftModel
from .paths import (
    TimeGrid,
    coupled_difference,
    default_epsilon,
    record_offsets_for_times,
    simulate_ensemble,
)
from .rng import NoiseSource

Z_SCORE = 3.0
C_ALLOW = 1.0


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with its standard error.

    ``log_mean`` and ``log_std_error`` are set when the estimate was built
    from log-samples; ``mean`` may then have underflowed to zero.
    """

    mean: float
    std_error: float
    n: int
    seed: int
    log_mean: float | None = None
    log_std_error: float | None = None

    @classmethod
    def from_samples(cls, samples, seed: int) -> "MCEstimate":
        x = np.asarray(samples, dtype=float).ravel()
        if x.size < 2:
            raise DomainError("an estimate needs at least two samples")
        return cls(float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size)), int(x.size), int(seed))

    @classmethod
    def from_log_samples(cls, log_samples, seed: int) -> "MCEstimate":
        """Estimate ``E exp(Z)`` from samples of ``Z`` without leaving log space."""
        z = np.asarray(log_samples, dtype=float).ravel()
        n = z.size
        if n < 2:
            raise DomainError("an estimate needs at least two samples")
        top = np.max(z)
        if top == -np.inf:
            return cls(0.0, 0.0, n, int(seed), -math.inf, -math.inf)
        w = np.exp(z - top)
        m1 = float(np.mean(w))
        var = float(np.var(w, ddof=1))
        log_mean = float(logsumexp(z) - math.log(n))
        with np.errstate(divide="ignore"):
            log_se = log_mean + 0.5 * math.log(var / n) - math.log(m1) if var > 0 else -math.inf
        return cls(math.exp(log_mean), math.exp(log_se), n, int(seed), log_mean, log_se)

    @property
    def relative_error(self) -> float:
        if self.log_mean is not None:
            return math.exp(self.log_std_error - self.log_mean) if self.log_mean > -math.inf else 0.0
        return self.std_error / abs(self.mean) if self.mean else 0.0

    def root(self, p: float) -> "MCEstimate":
        """Delta-method estimate of ``mean ** (1/p)``."""
        if p == 1:
            return self
        if self.log_mean is not None:
            lm = self.log_mean / p
            ls = lm + math.log(self.relative_error / p) if self.relative_error > 0 else -math.inf
            return MCEstimate(math.exp(lm), math.exp(ls), self.n, self.seed, lm, ls)
        m = self.mean ** (1.0 / p)
        return MCEstimate(m, m * self.relative_error / p, self.n, self.seed)


@dataclass(frozen=True)
class BoundCheck:
    """``estimate.mean + z * std_error <= bound`` up to ``allowance``.

    ``slack = bound - (mean + z se)``; the check passes when
    ``slack >= -allowance``.  ``log_slack`` compares the same two numbers on a
    log scale and decides the zero-allowance case, where linear values may
    underflow.
    """

    quantity: str
    t: float
    estimate: MCEstimate
    bound: float
    allowance: float = 0.0
    z: float = Z_SCORE
    log_bound: float | None = None

    @property
    def upper(self) -> float:
        return self.estimate.mean + self.z * self.estimate.std_error

    @property
    def slack(self) -> float:
        return self.bound - self.upper

    @property
    def log_slack(self) -> float:
        lb = self.log_bound if self.log_bound is not None else _log(self.bound)
        est = self.estimate
        if est.log_mean is not None:
            lu = est.log_mean + math.log1p(self.z * est.relative_error)
        else:
            lu = _log(self.upper)
        if lu == -math.inf:
            return math.inf
        return lb - lu

    @property
    def passed(self) -> bool:
        if self.allowance > 0:
            return bool(self.slack >= -self.allowance)
        if self.log_bound is not None or self.estimate.log_mean is not None:
            # linear values may both have underflowed to zero
            return bool(self.log_slack >= 0.0)
        return bool(self.slack >= 0.0)

    def row(self) -> dict:
        return {
            "quantity": self.quantity,
            "t": float(self.t),
            "estimate": float(self.estimate.mean),
            "std_error": float(self.estimate.std_error),
            "bound": float(self.bound),
            "slack": float(self.slack),
            "pass": bool(self.passed),
        }


def _log(v: float) -> float:
    if v > 0:
        return math.log(v)
    return -math.inf if v == 0 else math.nan


def allowance(dt: float, eps: float, c_allow: float = C_ALLOW) -> float:
    return c_allow * (math.sqrt(dt) + eps)


def _grid_for(times: Sequence[float], dt: float) -> tuple[TimeGrid, np.ndarray]:
    times = [float(t) for t in times]
    if not times:
        raise DomainError("times must be nonempty")
    if min(times) < 0:
        raise DomainError("times must be >= 0")
    grid = TimeGrid.span(0.0, max(times), dt)
    return grid, record_offsets_for_times(grid, times)


def _check_paths(n_paths: int):
    if n_paths < 2:
        raise DomainError("n_paths must be at least 2")


# -- decay of coupled differences --------------------------------------------


def decay_curve(
    model: HyperplaneDriftModel,
    x,
    y,
    p: float,
    times: Sequence[float],
    n_paths: int,
    dt: float,
    seed: int,
    workers: int = 1,
) -> list[tuple[float, MCEstimate]]:
    """``(E|phi_t(y) - phi_t(x)|^p)^(1/p)`` under shared noise, one estimate per time."""
    _check_paths(n_paths)
    if p < 1:
        raise DomainError("moment order must be >= 1")
    grid, offsets = _grid_for(times, dt)
    rec = coupled_difference(model, x, y, grid, NoiseSource(seed, model.dim_m, dt), n_paths, offsets, workers=workers)
    out = []
    rank = {int(o): i for i, o in enumerate(np.unique(offsets))}
    for t, o in zip(times, offsets):
        logs = rec.log_norm[rank[int(o)]]
        out.append((float(t), MCEstimate.from_log_samples(p * logs, seed).root(p)))
    return out


def fitted_rate(curve: Sequence[tuple[float, MCEstimate]]) -> float:
    """Least-squares decay rate of ``log estimate`` against ``t`` over positive times."""
    pts = [(t, e.log_mean if e.log_mean is not None else _log(e.mean)) for t, e in curve if t > 0]
    pts = [(t, v) for t, v in pts if math.isfinite(v)]
    if len(pts) < 2:
        return math.nan
    t, v = np.array(pts).T
    slope = np.polyfit(t, v, 1)[0]
    return float(-slope)


@dataclass(frozen=True)
class DecayVerification:
    checks: list[BoundCheck]
    constants: DecayConstants
    fitted_rate: float
    rate_tolerance: float

    @property
    def rate_ok(self) -> bool:
        return self.fitted_rate >= self.constants.C2 - self.rate_tolerance

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and self.rate_ok


def verify_decay(
    model: HyperplaneDriftModel,
    x,
    y,
    times: Sequence[float],
    n_paths: int,
    dt: float,
    seed: int,
    p: float = 1,
    lam: float | None = None,
    rate_tolerance: float = 0.0,
    workers: int = 1,
) -> DecayVerification:
    """Check ``(E|phi_t(y) - phi_t(x)|^p)^(1/p) <= C1 exp(-C2 t) |x - y|`` at each time.

    ``lam`` replaces the model's rate when given.  The certified constants
    are derived for ``p = 1``; for larger ``p`` the same bound is reported as
    a reference only.
    """
    if lam is not None:
        model = model.with_lambda(lam)
    consts = decay_constants(model.lam, model.declared, model.dim_d)
    dist = float(np.linalg.norm(np.asarray(y, float) - np.asarray(x, float)))
    curve = decay_curve(model, x, y, p, times, n_paths, dt, seed, workers)
    checks = []
    for t, est in curve:
        log_bound = math.log(consts.C1) - consts.C2 * t + _log(dist)
        bound = math.exp(log_bound) if log_bound > -math.inf else 0.0
        checks.append(BoundCheck(f"decay_p{p:g}", t, est, bound, 0.0, log_bound=log_bound))
    return DecayVerification(checks, consts, fitted_rate(curve), rate_tolerance)


# -- local time ------------------------------------------------------------------


def start_grid(model: HyperplaneDriftModel, x) -> np.ndarray:
    """Start points for the supremum over initial states: ``x`` and points on or near the hyperplane."""
    x = np.asarray(x, dtype=float)
    xs = x.copy()
    xs[-1] = 0.0
    pts = [x, xs]
    e_d = np.zeros_like(x)
    e_d[-1] = 1.0
    pts += [xs + 0.1 * e_d, xs - 0.1 * e_d]
    if x.size > 1:
        e_1 = np.zeros_like(x)
        e_1[0] = 1.0
        pts += [xs + e_1, xs - e_1]
    return np.array(pts)


def local_time_samples(model, x0, times, n_paths, dt, eps, seed, tanaka=False, workers=1):
    """Occupation local time at ``times`` for ``n_paths`` paths: ``(len(times), n_paths)``."""
    grid, offsets = _grid_for(times, dt)
    rec = simulate_ensemble(
        model, x0, grid, NoiseSource(seed, model.dim_m, dt), n_paths, eps=eps, record=offsets, tanaka=tanaka, workers=workers
    )
    rank = {int(o): i for i, o in enumerate(np.unique(offsets))}
    idx = [rank[int(o)] for o in offsets]
    return rec.local_time[idx], (rec.tanaka[idx] if tanaka else None)


def local_time_moments(
    model: HyperplaneDriftModel,
    x,
    times: Sequence[float],
    orders: Sequence[int],
    n_paths: int,
    dt: float,
    seed: int,
    eps: float | None = None,
    starts=None,
    c_allow: float = C_ALLOW,
    workers: int = 1,
) -> list[BoundCheck]:
    """First moment against ``rho(t)/B_sigma``; order ``n`` against ``n! (max_start E L_t)^n``.

    The supremum over initial points is replaced by a maximum over ``starts``
    (default :func:`start_grid`), which always contains ``x``.
    """
    orders = sorted(set(int(o) for o in orders))
    if not orders:
        raise DomainError("orders must be nonempty")
    if orders[0] < 1:
        raise DomainError("orders must be positive")
    _check_paths(n_paths)
    eps = default_epsilon(dt) if eps is None else float(eps)
    allow = allowance(dt, eps, c_allow)
    c = model.declared
    L, _ = local_time_samples(model, x, times, n_paths, dt, eps, seed, workers=workers)
    checks = []
    if 1 in orders:
        for t, row in zip(times, L):
            checks.append(BoundCheck("local_time_mean", float(t), MCEstimate.from_samples(row, seed), rho(t, model.lam, c) / c.B_sigma, allow))
    higher = [o for o in orders if o > 1]
    if higher:
        pts = start_grid(model, x) if starts is None else np.atleast_2d(np.asarray(starts, float))
        sup = np.mean(L, axis=1)
        for k, pt in enumerate(pts):
            if k == 0 and np.array_equal(pt, np.asarray(x, float)):
                continue
            Lp, _ = local_time_samples(model, pt, times, n_paths, dt, eps, seed, workers=workers)
            sup = np.maximum(sup, np.mean(Lp, axis=1))
        for n_ord in higher:
            for t, row, s in zip(times, L, sup):
                bound = float(math.factorial(n_ord) * s**n_ord)
                checks.append(BoundCheck(f"local_time_moment_{n_ord}", float(t), MCEstimate.from_samples(row**n_ord, seed), bound, allow))
    return checks


def default_t0(model: HyperplaneDriftModel) -> float:
    """Block horizon: the decay horizon above the threshold, else the horizon with block ratio 1/2."""
    c = model.declared
    if c.norm_D_inf == 0.0:
        return math.inf
    if model.lam > lambda_threshold(c)[0]:
        return decay_constants(model.lam, c, model.dim_d).t0
    return feasible_horizon(model.lam, c)


def exp_local_time_moment(
    model: HyperplaneDriftModel,
    x,
    t: float,
    n_paths: int,
    dt: float,
    seed: int,
    eps: float | None = None,
    t0: float | None = None,
    c_allow: float = C_ALLOW,
    workers: int = 1,
) -> BoundCheck:
    """``E exp(2 |D| L_t)`` against the block-chained bound with horizon ``t0``.

    ``t0`` defaults to :func:`default_t0`.
    """
    c = model.declared
    if t0 is None:
        t0 = default_t0(model)
    bound = khasminskii_bound(t, model.lam, c, t0) if c.norm_D_inf > 0 else 1.0
    eps = default_epsilon(dt) if eps is None else float(eps)
    _check_paths(n_paths)
    if c.norm_D_inf == 0.0:
        est = MCEstimate.from_samples(np.ones(n_paths), seed)
    else:
        L, _ = local_time_samples(model, x, [t], n_paths, dt, eps, seed, workers=workers)
        est = MCEstimate.from_samples(np.exp(2.0 * c.norm_D_inf * L[0]), seed)
    return BoundCheck("exp_local_time_moment", float(t), est, bound, allowance(dt, eps, c_allow))


# -- derivative flow -----------------------------------------------------------


def weight_exponent_rate(model: HyperplaneDriftModel) -> float:
    """Coefficient ``2 lam - 2 K_alpha - K_sigma^2`` of time in the weight exponent."""
    c = model.declared
    return 2.0 * model.lam - 2.0 * c.K_alpha - c.K_sigma**2


@dataclass(frozen=True)
class FlowMomentCurve:
    times: np.ndarray
    estimates: list[MCEstimate]
    check: BoundCheck = field(repr=False)


def weighted_flow_moment(
    model: HyperplaneDriftModel,
    x,
    t: float,
    n_paths: int,
    dt: float,
    seed: int,
    eps: float | None = None,
    n_times: int = 51,
    c_allow: float = C_ALLOW,
    workers: int = 1,
) -> FlowMomentCurve:
    """``sup_s E exp(h(s)) |Y_s|^2`` over ``n_times`` grid points of ``[0, t]`` against ``d``.

    ``h(s) = (2 lam - 2 K_alpha - K_sigma^2) s - 2 |D| L_s``.
    """
    _check_paths(n_paths)
    eps = default_epsilon(dt) if eps is None else float(eps)
    grid = TimeGrid.span(0.0, t, dt)
    offsets = np.unique(np.round(np.linspace(0, grid.n_steps, n_times)).astype(np.int64))
    rec = simulate_ensemble(
        model, x, grid, NoiseSource(seed, model.dim_m, dt), n_paths, eps=eps, record=offsets, flow=True, workers=workers
    )
    rate = weight_exponent_rate(model)
    D = model.declared.norm_D_inf
    ests = []
    for i, s in enumerate(rec.times):
        h = rate * s - 2.0 * D * rec.local_time[i]
        ests.append(MCEstimate.from_samples(np.exp(h) * np.sum(rec.flow[i] ** 2, axis=(1, 2)), seed))
    worst = int(np.argmax([e.mean + Z_SCORE * e.std_error for e in ests]))
    check = BoundCheck("weighted_flow_moment", float(rec.times[worst]), ests[worst], float(model.dim_d), allowance(dt, eps, c_allow))
    return FlowMomentCurve(rec.times, ests, check)


@dataclass(frozen=True)
class GateauxReport:
    """Mean L1 distance between finite-difference quotients and ``Y_t v`` per step size."""

    steps: list[float]
    errors: list[MCEstimate]

    @property
    def monotone(self) -> bool:
        order = np.argsort(self.steps)[::-1]
        means = [self.errors[i].mean for i in order]
        return all(b < a for a, b in zip(means, means[1:]))


def gateaux_consistency(
    model: HyperplaneDriftModel,
    x,
    v,
    t: float,
    steps: Sequence[float],
    n_paths: int,
    dt: float,
    seed: int,
    eps: float | None = None,
    workers: int = 1,
) -> GateauxReport:
    """Compare ``(phi_t(x + h v) - phi_t(x)) / h`` with the derivative flow ``Y_t(x) v`` path by path."""
    _check_paths(n_paths)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise DomainError("direction must have unit length")
    if any(h == 0 for h in steps):
        raise DomainError("finite-difference step must be nonzero")
    eps = default_epsilon(dt) if eps is None else float(eps)
    grid = TimeGrid.span(0.0, t, dt)
    noise = NoiseSource(seed, model.dim_m, dt)
    end = [grid.n_steps]
    base = simulate_ensemble(model, x, grid, noise, n_paths, eps=eps, record=end, flow=True, workers=workers)
    yv = base.flow[0] @ v
    errors = []
    for h in steps:
        moved = simulate_ensemble(model, x + h * v, grid, noise, n_paths, record=end, workers=workers)
        q = (moved.states[0] - base.states[0]) / h
        errors.append(MCEstimate.from_samples(np.linalg.norm(q - yv, axis=1), seed))
    return GateauxReport([float(h) for h in steps], errors)
