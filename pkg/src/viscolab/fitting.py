"""Decay-envelope fitting for energy time series.

Two envelope shapes are supported for ``t >= t1``:

* linear ``G``:     ``E(t) <= k1 exp(-k2 int_{t1}^t zeta)``
* nonlinear ``G``:  ``E(t) <= k4 G1^{-1}(k3 int_{t1}^t zeta)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import CalibrationFailure, EnvelopeRangeError, InvalidWindow
from .kernel import KernelCertificate

__all__ = [
    "ExponentialFit",
    "PowerFit",
    "DecayReport",
    "zeta_integral",
    "fit_exponential",
    "fit_power",
    "envelope",
    "verify_envelope",
    "calibrate_envelope",
]


@dataclass(frozen=True)
class ExponentialFit:
    k1: float
    k2: float
    r2: float

    @property
    def decaying(self) -> bool:
        return self.k2 > 0


@dataclass(frozen=True)
class PowerFit:
    C: float
    q: float
    r2: float


@dataclass
class DecayReport:
    regime: str
    window: tuple
    constants: dict
    r2: float
    dominance: float
    crossing_times: list = field(default_factory=list)
    envelope: np.ndarray | None = None

    @property
    def rate(self) -> float:
        return self.constants["k2"] if self.regime == "linear-G" else self.constants["k3"]

    @property
    def passed(self) -> bool:
        return bool(self.dominance == 1.0 and self.rate > 0)

    def as_dict(self) -> dict:
        return {
            "regime": self.regime,
            "window": list(self.window),
            "constants": dict(self.constants),
            "r2": self.r2,
            "dominance": self.dominance,
            "crossing_times": list(self.crossing_times),
            "passed": self.passed,
        }


def _window(t, E, window):
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if t.shape != E.shape or t.ndim != 1:
        raise InvalidWindow("times and energies must be 1D arrays of equal length")
    lo, hi = (t[0], t[-1]) if window is None else window
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 2:
        raise InvalidWindow(f"fewer than two samples in window [{lo}, {hi}]")
    tw, Ew = t[mask], E[mask]
    if np.any(Ew <= 0):
        raise InvalidWindow("energy must be positive inside the fit window")
    return tw, Ew, float(lo)


def zeta_integral(t, t_start: float, zeta=1.0) -> np.ndarray:
    """``int_{t_start}^t zeta`` by the trapezoid rule on the sample times.

    ``zeta`` may be a constant or a callable of time.
    """
    t = np.asarray(t, dtype=float)
    if not callable(zeta):
        return float(zeta) * (t - t_start)
    grid = np.concatenate(([t_start], t))
    z = np.asarray(zeta(grid), dtype=float)
    steps = 0.5 * (z[1:] + z[:-1]) * np.diff(grid)
    return np.cumsum(steps)


def _r2(y, yhat) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res <= 1e-30 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_exponential(t, E, window=None, zeta=1.0, t1: float | None = None) -> ExponentialFit:
    """Least squares of ``log E`` against ``int_{t1}^t zeta``.

    ``t1`` defaults to the window start.
    """
    tw, Ew, lo = _window(t, E, window)
    t1 = lo if t1 is None else t1
    x = zeta_integral(tw, t1, zeta)
    y = np.log(Ew)
    if np.ptp(y) == 0:
        return ExponentialFit(float(Ew[0]), 0.0, 1.0)
    res = stats.linregress(x, y)
    return ExponentialFit(math.exp(res.intercept), -float(res.slope),
                          _r2(y, res.intercept + res.slope * x))


def fit_power(t, E, window=None, t1: float | None = None) -> PowerFit:
    """Least squares of ``log E`` against ``log(1 + t - t1)``; ``t1`` defaults to the window start."""
    tw, Ew, lo = _window(t, E, window)
    t1 = lo if t1 is None else t1
    if t1 > lo:
        raise InvalidWindow("t1 must not exceed the window start")
    x = np.log1p(tw - t1)
    y = np.log(Ew)
    res = stats.linregress(x, y)
    return PowerFit(math.exp(res.intercept), -float(res.slope),
                    _r2(y, res.intercept + res.slope * x))


def _regime(cert: KernelCertificate, regime):
    if regime is not None:
        return regime
    return "linear-G" if cert.G.kind == "linear" else "nonlinear-G"


def _shape(cert: KernelCertificate, regime: str):
    if regime == "linear-G":
        return lambda y: np.exp(-y)
    G = cert.G

    def shape(y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise EnvelopeRangeError("G1^-1 argument outside [0, G1(0+))")
        return np.array([G.g1_inverse(v, cert.r) for v in np.atleast_1d(y)]).reshape(y.shape)

    return shape


def envelope(t, cert: KernelCertificate, amplitude: float, rate: float, t1: float,
             regime: str | None = None) -> np.ndarray:
    regime = _regime(cert, regime)
    x = zeta_integral(t, t1, cert.zeta)
    if np.any(x < 0):
        raise EnvelopeRangeError("envelope evaluated before t1")
    return amplitude * _shape(cert, regime)(rate * x)


def _dominance(E, env):
    ok = E <= env
    return float(np.mean(ok)), ok


def verify_envelope(t, E, cert: KernelCertificate, consts, t1: float | None = None,
                    regime: str | None = None, r2: float = math.nan) -> DecayReport:
    """Dominance of ``E`` by the envelope on ``[t1, T]``.

    ``consts`` is ``(k1, k2)`` for linear ``G`` or ``(k4, k3)`` -- amplitude
    first -- for nonlinear ``G``; a dict with the named keys is also accepted.
    """
    regime = _regime(cert, regime)
    t1 = cert.t1 if t1 is None else t1
    tw, Ew, t1 = _window(t, E, (t1, np.inf))
    if isinstance(consts, dict):
        amp, rate = ((consts["k1"], consts["k2"]) if regime == "linear-G"
                     else (consts["k4"], consts["k3"]))
    else:
        amp, rate = consts
    env = envelope(tw, cert, amp, rate, t1, regime)
    dom, ok = _dominance(Ew, env)
    names = ("k1", "k2") if regime == "linear-G" else ("k4", "k3")
    return DecayReport(regime, (t1, float(tw[-1])), {names[0]: float(amp), names[1]: float(rate)},
                       float(r2), dom,
                       [float(x) for x in tw[~ok]], env)


def _smallest_amplitude(Ew, shape_vals):
    """Smallest ``A`` with ``Ew <= A * shape_vals`` everywhere (bisection)."""
    hi = float(np.max(Ew / shape_vals)) * (1.0 + 1e-12)
    while not np.all(Ew <= hi * shape_vals):
        hi *= 1.0 + 1e-12
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.all(Ew <= mid * shape_vals):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return hi


def _largest_rate(Ew, x, amp, shape, rate0):
    def dominates(rate):
        return bool(np.all(Ew <= amp * shape(rate * x)))

    lo = rate0
    step = max(abs(rate0), 1e-12)
    hi = lo + step
    while dominates(hi):
        lo, hi = hi, hi + 2.0 * (hi - lo)
        if hi > 1e12:
            return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dominates(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(hi, 1e-300):
            break
    return lo


def calibrate_envelope(t, E, cert: KernelCertificate, t1: float | None = None,
                       regime: str | None = None) -> DecayReport:
    """Tight dominating envelope on ``[t1, T]``.

    The rate is first fitted by least squares in log space; the smallest
    dominating amplitude at that rate is then found by bisection, and
    finally the largest rate that still dominates with that amplitude.
    """
    regime = _regime(cert, regime)
    t1 = cert.t1 if t1 is None else t1
    tw, Ew, t1 = _window(t, E, (t1, np.inf))
    if not Ew[-1] < Ew[0]:
        raise CalibrationFailure("energy series does not decay over the window")
    x = zeta_integral(tw, t1, cert.zeta)
    shape = _shape(cert, regime)
    y = np.log(Ew)

    if regime == "linear-G":
        fit = fit_exponential(tw, Ew, zeta=cert.zeta, t1=t1)
        rate0, r2 = fit.k2, fit.r2
    else:
        def sse(log_rate):
            s = np.log(shape(math.exp(log_rate) * x))
            c = np.mean(y - s)
            return float(np.sum((y - c - s) ** 2))

        best = min(np.linspace(-15, 15, 61), key=sse)
        opt = optimize.minimize_scalar(sse, bounds=(best - 0.5, best + 0.5), method="bounded",
                                       options={"xatol": 1e-12})
        rate0 = math.exp(opt.x)
        s = np.log(shape(rate0 * x))
        r2 = _r2(y, np.mean(y - s) + s)
    if not rate0 > 0:
        raise CalibrationFailure(f"fitted decay rate {rate0:.3g} is not positive")

    amp = _smallest_amplitude(Ew, shape(rate0 * x))
    rate = _largest_rate(Ew, x, amp, shape, rate0)
    return verify_envelope(tw, Ew, cert, (amp, rate), t1, regime, r2)
