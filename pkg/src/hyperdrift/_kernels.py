"""Compiled Euler kernels for the coefficient family ``(a, c, s0, b)``.

``alpha_pm(x) = +-c e_d`` plus ``(a sin x2, a cos x1)`` when ``d = 2``;
``sigma(x) = diag(s0 + b sin x_i)``.  Every kernel advances a block of steps
for a batch of paths in place and returns the offset (within the block) of
the first non-finite state, or -1.  ``dw`` holds the Wiener increments, shape
``(steps, n, d)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LN2 = math.log(2.0)


@njit(cache=True, inline="always")
def _alpha(x, p, a, c, d, out):
    for i in range(d):
        out[i] = 0.0
    out[d - 1] = c if x[p, d - 1] >= 0.0 else -c
    if a != 0.0:
        out[0] += a * math.sin(x[p, 1])
        out[1] += a * math.cos(x[p, 0])


@njit(cache=True)
def ensemble_block(x, L, I, Y, dw, dt, lam, a, c, s0, b, eps, want_L, want_T, want_Y,
                   rec_slot, x0pos, out_x, out_L, out_T, out_Y):
    n, d = x.shape
    occ = dt / (2.0 * eps) if want_L else 0.0
    al = np.empty(d)
    dx = np.empty(d)
    Yn = np.empty((d, d))
    for s in range(dw.shape[0]):
        for p in range(n):
            _alpha(x, p, a, c, d, al)
            for i in range(d):
                sig = s0 + b * math.sin(x[p, i]) if b != 0.0 else s0
                dx[i] = (al[i] - lam * x[p, i]) * dt + sig * dw[s, p, i]
            xd = x[p, d - 1]
            dL = occ if (want_L and abs(xd) <= eps) else 0.0
            if want_T and xd > 0.0:
                I[p] += dx[d - 1]
            if want_Y:
                for i in range(d):
                    for j in range(d):
                        Yn[i, j] = Y[p, i, j] * (1.0 - lam * dt)
                if a != 0.0:
                    j01 = a * math.cos(x[p, 1]) * dt
                    j10 = -a * math.sin(x[p, 0]) * dt
                    for j in range(d):
                        Yn[0, j] += j01 * Y[p, 1, j]
                        Yn[1, j] += j10 * Y[p, 0, j]
                if dL != 0.0:
                    for j in range(d):
                        Yn[d - 1, j] += 2.0 * c * Y[p, d - 1, j] * dL
                if b != 0.0:
                    for k in range(d):
                        g = b * math.cos(x[p, k]) * dw[s, p, k]
                        for j in range(d):
                            Yn[k, j] += g * Y[p, k, j]
                for i in range(d):
                    for j in range(d):
                        Y[p, i, j] = Yn[i, j]
            for i in range(d):
                x[p, i] += dx[i]
                if not math.isfinite(x[p, i]):
                    return s
            L[p] += dL
        r = rec_slot[s]
        if r >= 0:
            for p in range(n):
                for i in range(d):
                    out_x[r, p, i] = x[p, i]
                if want_L:
                    out_L[r, p] = L[p]
                if want_T:
                    out_T[r, p] = 2.0 * max(x[p, d - 1], 0.0) - x0pos[p] - 2.0 * I[p]
                if want_Y:
                    for i in range(d):
                        for j in range(d):
                            out_Y[r, p, i, j] = Y[p, i, j]
    return -1


@njit(cache=True)
def difference_block(x, u, e, dw, dt, lam, a, c, s0, b, small_exp, rec_slot, out_log, out_x):
    """Advance base states ``x`` and differences ``u * 2**e`` (see ``paths.difference_step``)."""
    n, d = x.shape
    ax = np.empty(d)
    ay = np.empty(d)
    y = np.empty((1, d))
    du = np.empty(d)
    for s in range(dw.shape[0]):
        for p in range(n):
            _alpha(x, p, a, c, d, ax)
            ep = e[p]
            for i in range(d):
                y[0, i] = x[p, i] + math.ldexp(u[p, i], ep)
            cross = (x[p, d - 1] >= 0.0) != (y[0, d - 1] >= 0.0)
            if ep <= small_exp and not cross:
                for i in range(d):
                    du[i] = -lam * dt * u[p, i]
                if a != 0.0:
                    du[0] += dt * a * math.cos(x[p, 1]) * u[p, 1]
                    du[1] += -dt * a * math.sin(x[p, 0]) * u[p, 0]
                if b != 0.0:
                    for i in range(d):
                        du[i] += b * math.cos(x[p, i]) * u[p, i] * dw[s, p, i]
            else:
                _alpha(y, 0, a, c, d, ay)
                for i in range(d):
                    diff = (ay[i] - ax[i]) * dt
                    if b != 0.0:
                        diff += b * (math.sin(y[0, i]) - math.sin(x[p, i])) * dw[s, p, i]
                    du[i] = -lam * dt * u[p, i] + math.ldexp(diff, -ep)
            mx = 0.0
            for i in range(d):
                sig = s0 + b * math.sin(x[p, i]) if b != 0.0 else s0
                x[p, i] += (ax[i] - lam * x[p, i]) * dt + sig * dw[s, p, i]
                if not math.isfinite(x[p, i]):
                    return s
                u[p, i] += du[i]
                mx = max(mx, abs(u[p, i]))
            if mx > 0.0:
                shift = math.frexp(mx)[1]
                for i in range(d):
                    u[p, i] = math.ldexp(u[p, i], -shift)
                e[p] = ep + shift
        r = rec_slot[s]
        if r >= 0:
            for p in range(n):
                nrm = 0.0
                for i in range(d):
                    nrm += u[p, i] * u[p, i]
                    out_x[r, p, i] = x[p, i]
                out_log[r, p] = 0.5 * math.log(nrm) + e[p] * LN2 if nrm > 0.0 else -np.inf
    return -1
