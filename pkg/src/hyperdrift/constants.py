"""Explicit constants of the exponential-decay argument.

Everything here is a pure function of declared model constants.  The chain is:

* ``rho(t, lam)`` bounds the expected local time at the hyperplane over ``[0, t]``
  (times ``B_sigma``);
* ``q(t0) = 2 |D| rho(t0, lam) / B_sigma < 1`` makes the exponential local-time
  moment finite on blocks of length ``t0`` and, chained over blocks,
  ``E exp(2 |D| L_t) <= (1 - q)^-(floor(t/t0) + 1)``;
* the derivative flow then satisfies
  ``sup_x E|Y_t(x)| <= C1 exp(-C2 t)`` with
  ``C1 = sqrt(d) / sqrt(1 - q)`` and ``C2 = lam - K + ln(1 - q) / (2 t0)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError, ThresholdNotMetError
from .model import HyperplaneDriftModel, ModelConstants

DELTA_SHRINK = 1e-9
T0_CAP_SHRINK = 1e-9
GRID_POINTS = 10_000


def rho(t: float, lam: float, c: ModelConstants) -> float:
    """Bound on ``B_sigma * sup_x E L_t`` for local time at the hyperplane."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    if lam <= 0:
        raise DomainError(f"lambda must be > 0, got {lam!r}")
    a = c.norm_alpha_d_inf
    s = c.norm_sigma_inf
    return a * t + (1.0 + 2.0 * lam * t / 3.0) * math.sqrt((a * a / (2.0 * lam) + s * s) * t)


def rho_upper(t: float, lam: float, c: ModelConstants) -> float:
    """Simplified majorant of :func:`rho`, valid for ``lam >= 1/2``."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    if lam < 0.5:
        raise DomainError(f"rho_upper needs lambda >= 1/2, got {lam!r}")
    a = c.norm_alpha_d_inf
    s = c.norm_sigma_inf
    return (1.0 + 2.0 * lam * t / 3.0) * math.sqrt((a * a + s * s) * t) + a * t


def proof_constants(c: ModelConstants) -> tuple[float, float, float]:
    """``(K1, K2, K3)`` multiplying ``sqrt(t0)``, ``t0`` and ``lam t0^(3/2)`` in the majorant of ``q``."""
    if c.B_sigma <= 0:
        raise DomainError("B_sigma must be positive")
    root = math.sqrt(c.norm_alpha_d_inf**2 + c.norm_sigma_inf**2)
    ratio = c.norm_D_inf / c.B_sigma
    return 2.0 * ratio * root, 2.0 * ratio * c.norm_alpha_d_inf, 4.0 * ratio * root / 3.0


def lambda_threshold(c: ModelConstants) -> tuple[float, float]:
    """Return ``(Lambda, delta)``.

    ``delta`` is just below the root of ``1 - K2 delta - (K1 + K3) sqrt(delta) = exp(-1/2)``
    and ``Lambda = max(1/2, 4K/3, 1/delta)``.  Without a drift jump all
    local-time terms vanish, ``delta`` is infinite and ``1/delta`` drops out.
    """
    base = max(0.5, 4.0 * c.K / 3.0)
    if c.norm_D_inf == 0.0:
        return base, math.inf
    k1, k2, k3 = proof_constants(c)
    target = 1.0 - math.exp(-0.5)

    # In u = sqrt(delta) the equation is the quadratic k2 u^2 + (k1 + k3) u = target.
    def excess(u):
        return k2 * u * u + (k1 + k3) * u - target

    hi = 1.0
    while excess(hi) < 0:
        hi *= 2.0
    u = optimize.bisect(excess, 0.0, hi, xtol=1e-300, rtol=1e-10, maxiter=2000)
    delta = u * u * (1.0 - DELTA_SHRINK)
    return max(base, 1.0 / delta), delta


def khasminskii_ratio(t0: float, lam: float, c: ModelConstants) -> float:
    """``q = 2 |D| rho(t0, lam) / B_sigma``."""
    return 2.0 * c.norm_D_inf * rho(t0, lam, c) / c.B_sigma


def khasminskii_bound(t: float, lam: float, c: ModelConstants, t0: float) -> float:
    """Bound on ``sup_x E exp(2 |D| L_t)``.

    One block factor ``1/(1-q)`` for ``t <= t0``, otherwise
    ``floor(t/t0) + 1`` factors.
    """
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t!r}")
    if c.norm_D_inf == 0.0:
        return 1.0
    if t0 <= 0:
        raise DomainError("t0 must be positive")
    q = khasminskii_ratio(t0, lam, c)
    if not q < 1.0:
        raise DomainError(f"2|D| rho(t0, lambda) / B_sigma = {q!r} is not below 1")
    blocks = 1 if t <= t0 else math.floor(t / t0) + 1
    try:
        return math.exp(-blocks * math.log1p(-q))
    except OverflowError:
        return math.inf


def feasible_horizon(lam: float, c: ModelConstants, q_target: float = 0.5) -> float:
    """Largest ``t0`` with ``khasminskii_ratio(t0) <= q_target`` (``inf`` without a jump)."""
    if not 0 < q_target < 1:
        raise DomainError("q_target must lie in (0, 1)")
    if c.norm_D_inf == 0.0:
        return math.inf
    hi = 1.0
    while khasminskii_ratio(hi, lam, c) < q_target:
        hi *= 2.0
    return optimize.brentq(lambda t: khasminskii_ratio(t, lam, c) - q_target, 0.0, hi, xtol=1e-15, rtol=1e-12)


@dataclass(frozen=True)
class DecayConstants:
    """Constants certifying ``sup_x E|Y_t(x)| <= C1 exp(-C2 t)``.

    ``q_at_t0`` is the block ratio ``2|D| rho(t0)/B_sigma``; ``witness`` is the
    positivity expression ``2 t0 (lam - K) + ln(1 - K1 lam t0^1.5 - K2 t0 - K3 t0^0.5)``
    written with the majorant coefficients.
    """

    lam: float
    K: float
    K1: float
    K2: float
    K3: float
    delta: float
    Lambda_threshold: float
    t0: float
    rho_at_t0: float
    q_at_t0: float
    C1: float
    C2: float
    witness: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _witness(t0, lam, K, k1, k2, k3):
    arg = 1.0 - k1 * lam * t0**1.5 - k2 * t0 - k3 * math.sqrt(t0)
    if arg <= 0:
        return -math.inf
    return 2.0 * t0 * (lam - K) + math.log(arg)


def decay_constants(lam: float, c: ModelConstants, dim_d: int) -> DecayConstants:
    """Select ``t0`` in ``(0, 1/lam)`` maximising ``C2`` and return all decay constants.

    Feasibility requires ``q(t0) < 1`` and a positive logarithm argument in the
    witness.  The search is a log-spaced grid followed by bounded Brent
    refinement around the best grid point.
    """
    Lam, delta = lambda_threshold(c)
    if not lam > Lam:
        raise ThresholdNotMetError(lam, Lam)
    K = c.K
    k1, k2, k3 = proof_constants(c)
    cap = (1.0 - T0_CAP_SHRINK) / lam

    if c.norm_D_inf == 0.0:
        t0 = cap
    else:

        def neg_rate(t):
            q = khasminskii_ratio(t, lam, c)
            if q >= 1.0 or not math.isfinite(_witness(t, lam, K, k1, k2, k3)):
                return math.inf
            return -(lam - K + math.log1p(-q) / (2.0 * t))

        grid = np.geomspace(cap * 1e-8, cap, GRID_POINTS)
        values = np.array([neg_rate(t) for t in grid])
        i = int(np.argmin(values))
        if not math.isfinite(values[i]):
            raise DomainError("no feasible t0 below 1/lambda")
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, GRID_POINTS - 1)]
        res = optimize.minimize_scalar(neg_rate, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14 * hi})
        t0 = float(res.x) if res.fun <= values[i] else float(grid[i])

    q = khasminskii_ratio(t0, lam, c)
    C2 = lam - K + math.log1p(-q) / (2.0 * t0)
    if not C2 > 0:
        raise DomainError(f"decay rate C2={C2!r} is not positive at lambda={lam!r}")
    return DecayConstants(
        lam=float(lam),
        K=K,
        K1=k1,
        K2=k2,
        K3=k3,
        delta=delta,
        Lambda_threshold=Lam,
        t0=t0,
        rho_at_t0=rho(t0, lam, c),
        q_at_t0=q,
        C1=math.sqrt(dim_d) / math.sqrt(1.0 - q),
        C2=C2,
        witness=_witness(t0, lam, K, k1, k2, k3),
    )


def model_decay_constants(model: HyperplaneDriftModel) -> DecayConstants:
    return decay_constants(model.lam, model.declared, model.dim_d)


@dataclass(frozen=True)
class GeneratorBound:
    """Dissipativity pair: ``A|x|^2 <= K1_gen - K2_gen |x|^2``."""

    K1_gen: float
    K2_gen: float

    @property
    def second_moment_cap(self) -> float:
        return self.K1_gen / self.K2_gen

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def generator_bound(c: ModelConstants, lam: float) -> GeneratorBound:
    if lam <= 0:
        raise DomainError(f"lambda must be > 0, got {lam!r}")
    return GeneratorBound(K1_gen=c.norm_alpha_inf**2 / lam + c.norm_sigma_inf**2, K2_gen=float(lam))


def generator_on_square_norm(model: HyperplaneDriftModel, x: np.ndarray) -> np.ndarray:
    """``A|x|^2 = -2 lam |x|^2 + 2 (alpha(x), x) + |sigma(x)|^2`` at states ``(n, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sig = model.sigma(x)
    return (
        -2.0 * model.lam * np.sum(x * x, axis=1)
        + 2.0 * np.sum(model.alpha(x) * x, axis=1)
        + np.sum(sig * sig, axis=(1, 2))
    )


def check_generator_bound(model: HyperplaneDriftModel, x: np.ndarray, bound: GeneratorBound | None = None) -> np.ndarray:
    """Margins ``K1_gen - K2_gen |x|^2 - A|x|^2`` (nonnegative where the bound holds)."""
    bound = bound or generator_bound(model.declared, model.lam)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return bound.K1_gen - bound.K2_gen * np.sum(x * x, axis=1) - generator_on_square_norm(model, x)
