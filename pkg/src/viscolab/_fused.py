"""Compiled per-step update shared by both convolution modes.

At n ~ 200 nodes a step is a handful of O(n) vector operations, so the
Python/numpy call overhead dominates unless they are fused.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def tridiag_spd_solve(d, e, r, out, scratch):
    """Solve ``(diag(d) + e * (super + sub)) x = r`` for a constant off-diagonal ``e``.

    Forward elimination without pivoting; valid for the diagonally dominant
    systems produced by the stepper.
    """
    n = d.size
    c = scratch
    m = d[0]
    c[0] = e / m
    out[0] = r[0] / m
    for i in range(1, n):
        m = d[i] - e * c[i - 1]
        c[i] = e / m
        out[i] = (r[i] - e * out[i - 1]) / m
    for i in range(n - 2, -1, -1):
        out[i] -= c[i] * out[i + 1]


@njit(cache=True)
def advance(u, v, conv, z1, inv_h2, mu1, mu2, b, pm2, rho, dt, u_out, v_out, diag, rhs, scratch):
    """One semi-implicit step; writes ``u_out``, ``v_out`` and returns ``max |v_out|``
    (NaN if any entry is NaN)."""
    n = u.size
    for i in range(n):
        w = u[i] - conv[i]
        wl = u[i - 1] - conv[i - 1] if i > 0 else 0.0
        wr = u[i + 1] - conv[i + 1] if i < n - 1 else 0.0
        r = (wl - 2.0 * w + wr) * inv_h2 - mu1 * v[i] - mu2 * z1[i]
        ui = u[i]
        if pm2 == 2.0:
            r += b * ui * ui * ui
        else:
            r += b * math.pow(abs(ui), pm2) * ui
        rhs[i] = r
        av = abs(v[i])
        diag[i] = (av if rho == 1.0 else math.pow(av, rho)) + 2.0 * inv_h2
    tridiag_spd_solve(diag, -inv_h2, rhs, v_out, scratch)
    vmax = 0.0
    for i in range(n):
        vn = v[i] + dt * v_out[i]
        v_out[i] = vn
        u_out[i] = u[i] + dt * vn
        a = abs(vn)
        if a != a:
            vmax = np.nan
        elif a > vmax:
            vmax = a
    return vmax


@njit(cache=True)
def grad_sq(u, h):
    """``||grad u||_2^2`` with zero boundary values."""
    n = u.size
    s = u[0] * u[0] + u[n - 1] * u[n - 1]
    for i in range(n - 1):
        d = u[i + 1] - u[i]
        s += d * d
    return s / h


@njit(cache=True)
def recur(w, u, lam, coeff, conv):
    """``w <- lam w + u`` and ``conv <- coeff (w - u / 2)``; returns nothing."""
    for i in range(w.size):
        wi = lam * w[i] + u[i]
        w[i] = wi
        conv[i] = coeff * (wi - 0.5 * u[i])
