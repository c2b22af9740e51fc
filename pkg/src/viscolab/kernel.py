"""Relaxation kernels, their certification and the decay-rate functions.

Three kernel families are supported:

* ``exponential``: ``g(t) = a exp(-beta t)``
* ``power``:       ``g(t) = a (1 + t)^(-q)``, ``q > 1``
* ``tabulated``:   samples ``(t_i, g_i, g'_i)``; ``g`` is interpolated with a
  monotone cubic and continued past the last sample by an exponential with
  the local logarithmic slope.

:func:`certify_h1` checks ``1 - int g = l > 0`` and the differential
inequality ``g' <= -zeta G(g)`` and returns the data the stability analysis
needs (``l``, ``zeta``, ``G``, ``r``, ``gamma``, ``t1``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import CertificationFailure, InvalidArgument, InvalidKernel

__all__ = [
    "Kernel",
    "GFunction",
    "KernelCertificate",
    "CAlphaQuery",
    "kernel_eval",
    "tail_f",
    "certify_h1",
    "c_alpha",
    "alpha_calpha_limit_scan",
    "g1_eval",
    "g1_inverse",
    "g2_eval",
    "load_tabulated_csv",
]

FAMILIES = ("exponential", "power", "tabulated")


@dataclass(frozen=True, eq=False)
class Kernel:
    family: str
    params: dict = field(default_factory=dict)
    times: np.ndarray | None = None
    values: np.ndarray | None = None
    derivatives: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown kernel family {self.family!r}")
        p = self.params
        if self.family == "exponential":
            if not (p.get("a", 0) > 0 and p.get("beta", 0) > 0):
                raise InvalidArgument("exponential kernel needs a > 0 and beta > 0")
        elif self.family == "power":
            if not (p.get("a", 0) > 0 and p.get("q", 0) > 1):
                raise InvalidArgument("power kernel needs a > 0 and q > 1")
        else:
            self._init_tabulated()

    # construction helpers -------------------------------------------------
    @classmethod
    def exponential(cls, a: float, beta: float) -> "Kernel":
        return cls("exponential", {"a": float(a), "beta": float(beta)})

    @classmethod
    def power(cls, a: float, q: float) -> "Kernel":
        return cls("power", {"a": float(a), "q": float(q)})

    @classmethod
    def tabulated(cls, times, values, derivatives=None) -> "Kernel":
        t = np.asarray(times, dtype=float)
        g = np.asarray(values, dtype=float)
        dg = None if derivatives is None else np.asarray(derivatives, dtype=float)
        return cls("tabulated", {}, t, g, dg)

    def _init_tabulated(self):
        t, g, dg = self.times, self.values, self.derivatives
        if t is None or g is None or t.ndim != 1 or t.shape != g.shape or t.size < 2:
            raise InvalidArgument("tabulated kernel needs matching 1D times/values")
        if dg is not None and dg.shape != t.shape:
            raise InvalidArgument("derivative column length mismatch")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise InvalidArgument("tabulated times must start at 0 and increase")
        if np.any(g <= 0):
            raise InvalidArgument("tabulated kernel must be positive")
        if np.any(np.diff(g) > 0):
            raise InvalidArgument("tabulated kernel must be non-increasing")
        interp = PchipInterpolator(t, g, extrapolate=False)
        object.__setattr__(self, "_interp", interp)
        object.__setattr__(self, "_dinterp", interp.derivative())
        if dg is not None:
            slope = -dg[-1] / g[-1]
        else:
            slope = -float(self._dinterp(t[-1])) / g[-1]
        if not slope > 0:
            raise InvalidArgument("tabulated kernel must be strictly decreasing at its end")
        object.__setattr__(self, "_end_rate", float(slope))

    def describe(self) -> dict:
        if self.family == "tabulated":
            return {"family": "tabulated", "n_samples": int(self.times.size),
                    "t_end": float(self.times[-1])}
        return {"family": self.family, **self.params}

    # evaluation ------------------------------------------------------------
    def eval(self, t):
        """Return ``(g(t), g'(t))`` for scalar or array ``t >= 0``."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise InvalidArgument("kernel evaluated at negative time")
        p = self.params
        if self.family == "exponential":
            g = p["a"] * np.exp(-p["beta"] * t_arr)
            dg = -p["beta"] * g
        elif self.family == "power":
            g = p["a"] * (1.0 + t_arr) ** (-p["q"])
            dg = -p["q"] * g / (1.0 + t_arr)
        else:
            g, dg = self._eval_tabulated(t_arr)
        if np.ndim(t) == 0:
            return float(g), float(dg)
        return g, dg

    def _eval_tabulated(self, t):
        t_end = self.times[-1]
        inside = t <= t_end
        g = np.empty_like(t)
        dg = np.empty_like(t)
        ti = t[inside]
        g[inside] = self._interp(ti)
        if self.derivatives is not None:
            dg[inside] = np.interp(ti, self.times, self.derivatives)
        else:
            dg[inside] = self._dinterp(ti)
        out = ~inside
        g[out] = self.values[-1] * np.exp(-self._end_rate * (t[out] - t_end))
        dg[out] = -self._end_rate * g[out]
        return g, dg

    def g(self, t):
        return self.eval(t)[0]

    def tail(self, t):
        """``f(t) = int_t^inf g(s) ds``."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise InvalidArgument("tail evaluated at negative time")
        p = self.params
        if self.family == "exponential":
            out = p["a"] / p["beta"] * np.exp(-p["beta"] * t_arr)
        elif self.family == "power":
            out = p["a"] * (1.0 + t_arr) ** (1.0 - p["q"]) / (p["q"] - 1.0)
        else:
            out = np.vectorize(self._tail_tabulated, otypes=[float])(t_arr)
        return float(out) if np.ndim(t) == 0 else out

    def _tail_tabulated(self, t):
        t_end = float(self.times[-1])
        g_end = float(self.values[-1])
        if t >= t_end:
            return g_end * math.exp(-self._end_rate * (t - t_end)) / self._end_rate
        knots = self.times[self.times > t]
        pts = np.concatenate(([t], knots))
        body = sum(
            integrate.quad(lambda s: float(self._interp(s)), lo, hi, epsabs=1e-14)[0]
            for lo, hi in zip(pts[:-1], pts[1:])
        )
        return body + g_end / self._end_rate

    def lag_tables(self, dt: float, m: int):
        """``g``, ``g'`` and ``f`` sampled at ``0, dt, ..., (m-1) dt``."""
        s = dt * np.arange(m)
        g, dg = self.eval(s)
        return g, dg, self.tail(s)


def kernel_eval(k: Kernel, t: float):
    return k.eval(t)


def tail_f(k: Kernel, t: float) -> float:
    return k.tail(t)


def load_tabulated_csv(path) -> Kernel:
    """Two-column ``t,g`` CSV with an optional third column ``g'``."""
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    if not rows:
        raise InvalidArgument(f"no kernel samples in {path}")
    width = {len(r) for r in rows}
    if width not in ({2}, {3}):
        raise InvalidArgument(f"kernel CSV {path} must have 2 or 3 columns")
    arr = np.array(rows)
    return Kernel.tabulated(arr[:, 0], arr[:, 1], arr[:, 2] if arr.shape[1] == 3 else None)


# ---------------------------------------------------------------------------
# convex comparison function G and the decay profiles G1, G2

@dataclass(frozen=True)
class GFunction:
    """``G(s) = s`` (``kind='linear'``) or ``G(s) = s**exponent``."""

    kind: str
    exponent: float = 1.0

    def __call__(self, s):
        return np.asarray(s, dtype=float) ** self.exponent

    def deriv(self, s):
        m = self.exponent
        return m * np.asarray(s, dtype=float) ** (m - 1.0)

    def g1(self, t, r):
        if self.kind == "linear":
            return math.log(r / t)
        m = self.exponent
        return (t ** (1.0 - m) - r ** (1.0 - m)) / (m * (m - 1.0))

    def g1_inverse(self, y, r):
        if self.kind == "linear":
            return r * math.exp(-y)
        m = self.exponent
        return (m * (m - 1.0) * y + r ** (1.0 - m)) ** (1.0 / (1.0 - m))

    def describe(self) -> dict:
        return {"kind": self.kind, "exponent": self.exponent}


@dataclass(frozen=True)
class KernelCertificate:
    kernel: Kernel
    l: float
    zeta: float
    G: GFunction
    r: float
    gamma: float
    t1: float
    sample_times: np.ndarray
    max_violation: float
    worst_time: float

    @property
    def g0(self) -> float:
        return self.kernel.g(0.0)

    @property
    def g1_mass(self) -> float:
        """``int_0^{t1} g``."""
        return self.kernel.tail(0.0) - self.kernel.tail(self.t1)

    def zeta_integral(self, t, t_start):
        return self.zeta * (np.asarray(t, dtype=float) - t_start)

    def summary(self) -> dict:
        return {
            "kernel": self.kernel.describe(),
            "l": self.l,
            "zeta": self.zeta,
            "zeta_kind": "constant",
            "G": self.G.describe(),
            "r": self.r,
            "gamma": self.gamma,
            "t1": self.t1,
            "max_violation": self.max_violation,
            "worst_time": self.worst_time,
            "n_samples": int(self.sample_times.size),
        }


def _time_where(k: Kernel, level: float) -> float:
    """First time with ``g(t) = level`` (``level <= g(0)``)."""
    p = k.params
    if k.family == "exponential":
        return math.log(p["a"] / level) / p["beta"]
    if k.family == "power":
        return (p["a"] / level) ** (1.0 / p["q"]) - 1.0
    if level >= k.values[0]:
        return 0.0
    hi = 1.0
    while k.g(hi) > level:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if k.g(mid) > level:
            lo = mid
        else:
            hi = mid
    return hi


def certify_h1(k: Kernel, sample_times=None, tol: float = 1e-9,
               r: float | None = None, t1_cap: float = 1.0) -> KernelCertificate:
    """Verify the relaxation hypotheses for ``k`` and pick ``(zeta, G, r, t1, gamma)``.

    Raises :class:`CertificationFailure` when ``int g >= 1`` or when the
    sampled differential inequality is violated by more than ``tol``
    (relative).
    """
    if sample_times is None:
        sample_times = np.linspace(0.0, 100.0, 4001)
    ts = np.asarray(sample_times, dtype=float)
    if k.family == "tabulated" and k.derivatives is None:
        raise CertificationFailure("tabulated kernels need a derivative column to be certified")
    mass = k.tail(0.0)
    if mass >= 1.0:
        raise CertificationFailure(f"int g = {mass:.12g} >= 1", integral=mass)
    l = 1.0 - mass

    p = k.params
    if k.family == "exponential":
        G, zeta = GFunction("linear"), p["beta"]
    elif k.family == "power":
        G = GFunction("power", 1.0 + 1.0 / p["q"])
        zeta = p["q"] * p["a"] ** (-1.0 / p["q"])
    else:
        G = GFunction("linear")
        zeta = float(np.min(-k.derivatives / k.values))
        if not zeta > 0:
            raise CertificationFailure("tabulated kernel has a flat segment; no positive zeta")

    g, dg = k.eval(ts)
    bound = zeta * G(g)
    rel = (dg + bound) / np.maximum(bound, np.finfo(float).tiny)
    worst = int(np.argmax(rel))
    max_violation = max(float(rel[worst]), 0.0)
    if max_violation > tol:
        raise CertificationFailure(
            f"g' <= -zeta G(g) violated by {max_violation:.3g} at t={ts[worst]:.6g}",
            worst_time=float(ts[worst]), worst_violation=max_violation,
        )

    g0 = k.g(0.0)
    r = g0 if r is None else float(r)
    if not 0 < r <= g0:
        raise InvalidArgument(f"r must lie in (0, g(0)={g0}], got {r}")
    t_r = _time_where(k, r)
    t1 = min(t_r, t1_cap) if t_r > 0 else t1_cap
    if k.family == "exponential":
        gamma = p["beta"]
    elif k.family == "power":
        gamma = p["q"] / (1.0 + t1)
    else:
        s = np.linspace(0.0, t1, 1001)
        gs, dgs = k.eval(s)
        gamma = float(np.min(-dgs / gs))
    if not gamma > 0:
        raise CertificationFailure("no positive gamma on [0, t1]")
    return KernelCertificate(k, l, float(zeta), G, r, float(gamma), float(t1), ts,
                             max_violation, float(ts[worst]))


# ---------------------------------------------------------------------------
# C_alpha

@dataclass(frozen=True)
class CAlphaQuery:
    alpha: float
    value: float
    error: float


def _c_alpha_tail(k: Kernel, alpha: float, T: float):
    f = k.tail(T)
    upper = f / alpha
    if k.family == "tabulated":
        lower = 0.0
    else:
        g, dg = k.eval(T)
        lower = f / (alpha - dg / g)
    return 0.5 * (upper + lower), 0.5 * (upper - lower)


def c_alpha(k: Kernel, alpha: float, tol: float = 1e-10) -> CAlphaQuery:
    """``C_alpha = int_0^inf g^2 / (alpha g - g') ds`` with an error estimate."""
    if not 0 < alpha < 1:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha!r}")

    def integrand(s):
        g, dg = k.eval(s)
        h = alpha * g - dg
        if h <= 0:
            raise InvalidKernel(f"h_alpha(t)={h:.3g} <= 0 at t={s:.6g}")
        return g * g / h

    T = 1.0
    tail, tail_err = _c_alpha_tail(k, alpha, T)
    while tail_err > tol / 10 and T < 1e15:
        T *= 2.0
        tail, tail_err = _c_alpha_tail(k, alpha, T)

    body = 0.0
    body_err = 0.0
    lo, hi = 0.0, 1.0
    while lo < T:
        val, err = integrate.quad(integrand, lo, hi, epsabs=tol / 100, epsrel=1e-13, limit=200)
        body += val
        body_err += err
        lo, hi = hi, min(2.0 * hi, T)
    return CAlphaQuery(float(alpha), body + tail, body_err + tail_err)


def alpha_calpha_limit_scan(k: Kernel, alphas, tol: float = 1e-10):
    out = []
    for a in alphas:
        q = c_alpha(k, a, tol)
        out.append((float(a), a * q.value))
    return out


# ---------------------------------------------------------------------------
# G1, G1^{-1}, G2

def _g1_numeric(cert: KernelCertificate, t: float) -> float:
    G = cert.G
    val, _ = integrate.quad(lambda s: 1.0 / (s * float(G.deriv(s))), t, cert.r,
                            epsabs=1e-14, epsrel=1e-13, limit=500)
    return val


def g1_eval(cert: KernelCertificate, t: float, method: str = "closed") -> float:
    """``G1(t) = int_t^r ds / (s G'(s))`` on ``(0, r]``."""
    if not 0 < t <= cert.r:
        raise InvalidArgument(f"G1 defined on (0, r={cert.r}], got t={t!r}")
    if method == "closed":
        return cert.G.g1(t, cert.r)
    return _g1_numeric(cert, t)


def g1_inverse(cert: KernelCertificate, y: float, method: str = "closed",
               tol: float = 1e-10) -> float:
    if not y >= 0:
        raise InvalidArgument(f"G1^-1 needs y >= 0, got {y!r}")
    if method == "closed":
        return cert.G.g1_inverse(y, cert.r)
    # G1 is strictly decreasing: bisect on log t
    hi = math.log(cert.r)
    lo = hi - 1.0
    while g1_eval(cert, math.exp(lo), method) < y:
        lo = hi - 2.0 * (hi - lo)
    while hi - lo > tol * 1e-3:
        mid = 0.5 * (lo + hi)
        if g1_eval(cert, math.exp(mid), method) > y:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def g2_eval(cert: KernelCertificate, r1: float, t: float) -> float:
    """``G2(t) = t G'(r1 t)`` for ``0 < r1 < r`` and ``t in (0, 1]``."""
    if not 0 < r1 < cert.r:
        raise InvalidArgument(f"r1 must lie in (0, r={cert.r}), got {r1!r}")
    if not 0 < t <= 1:
        raise InvalidArgument(f"G2 defined on (0, 1], got t={t!r}")
    return float(t * cert.G.deriv(r1 * t))
