"""Independent reference computations used by the tests.

These are written from the formulas directly, with plain loops and no code
shared with the package, so that agreement is meaningful.
"""

import math

import numpy as np

# Frozen high-precision values (40-digit mpmath runs of the formulas below).
BANGBANG_DELTA = 0.006005140246345842855
BANGBANG_LAMBDA = 166.52400426592948932
BANGBANG_T0_AT_2LAMBDA = 0.0026557538300105790
BANGBANG_C2_AT_2LAMBDA = 282.76503174792789854
BANGBANG_C1_AT_2LAMBDA = 1.6162567031752883402
BANGBANG_WITNESS_AT_2LAMBDA = 1.4912972174203110004
SMOOTH_DELTA = 0.0072161849089782759079
SMOOTH_LAMBDA = 138.57738023811086737
RHO_EXAMPLE = 2.9295632895188751962  # a = 0.5, s = sqrt(2), lam = 1, t = 1


def rho(t, lam, a, s):
    return a * t + (1 + 2 * lam * t / 3) * math.sqrt((a * a / (2 * lam) + s * s) * t)


def threshold(a, s, D, B, K):
    """Closed-form root of the quadratic in sqrt(delta), then the threshold."""
    root = math.sqrt(a * a + s * s)
    k1, k2, k3 = 2 * D / B * root, 2 * D / B * a, 4 / 3 * D / B * root
    if D == 0:
        return max(0.5, 4 * K / 3), math.inf
    target = 1 - math.exp(-0.5)
    # rationalised root, stable as k2 -> 0
    u = 2 * target / ((k1 + k3) + math.sqrt((k1 + k3) ** 2 + 4 * k2 * target))
    delta = u * u * (1 - 1e-9)
    return max(0.5, 4 * K / 3, 1 / delta), delta


def best_rate(lam, a, s, D, B, K, iters=200):
    """Ternary search of lam - K + ln(1 - q(t)) / (2t) over (0, 1/lam)."""

    def rate(t):
        q = 2 * D * rho(t, lam, a, s) / B
        if q >= 1:
            return -math.inf
        return lam - K + math.log1p(-q) / (2 * t)

    lo, hi = 1e-12, (1 - 1e-9) / lam
    for _ in range(iters):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if rate(m1) < rate(m2):
            lo = m1
        else:
            hi = m2
    t0 = 0.5 * (lo + hi)
    return t0, rate(t0)


def ou_contraction(lam, dt, n):
    """Discrete contraction factor of the Euler scheme for the OU difference."""
    f = 1.0
    for _ in range(n):
        f *= 1 - lam * dt
    return f


BROWNIAN_LOCAL_TIME_MEAN = math.sqrt(2 / math.pi)  # E L_1 at 0 from the origin
BROWNIAN_LOCAL_TIME_SECOND = 1.0  # E L_1^2 = E B_1^2


def brownian_local_time_moment(n, t):
    """E (L_t)^n at level 0 started at 0: L_t has the law of |B_t|."""
    return (2 * t) ** (n / 2) * math.gamma((n + 1) / 2) / math.sqrt(math.pi)


def euler_loop(alpha_plus, alpha_minus, sigma, lam, x0, dw, dt):
    """Reference Euler-Maruyama loop, one state at a time."""
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    for inc in dw:
        a = alpha_plus(x) if x[-1] >= 0 else alpha_minus(x)
        x = x + (-lam * x + a) * dt + sigma(x) @ inc
        out.append(x.copy())
    return np.array(out)
