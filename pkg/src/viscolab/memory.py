"""Solution history and the viscoelastic memory integrals.

All time integrals over the history use the composite trapezoid rule on
the snapshots ``u(s_j)``, ``s_j = j dt``: weight ``dt/2`` at both ends and
``dt`` in between.

For exponential kernels the convolution obeys
``g(t + dt - s) = exp(-beta dt) g(t - s)`` and is advanced by an O(1)
recurrence (``mode="fast"``); the direct sum is O(n) per evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UnsupportedKernel
from ._fused import grad_sq, recur
from .grid import Grid1D
from .kernel import Kernel

__all__ = ["HistoryBuffer", "MemorySums", "history_push", "convolve", "convolve_fast",
           "g_circ"]

MODES = ("direct", "fast")


@dataclass
class MemorySums:
    """Kernel-weighted history sums at the current time ``t_n``.

    ``conv`` is ``sum_j w_j g(t-s_j) u_j``; ``mass`` is ``sum_j w_j g(t-s_j)``
    (the trapezoid value of ``int_0^t g``); ``grad_sq`` is
    ``sum_j w_j g(t-s_j) ||grad u_j||^2``.  The ``d*`` fields use ``g'``
    and ``tail_grad_sq`` uses the tail ``f`` (this is the functional I4).
    """

    conv: np.ndarray
    mass: float
    grad_sq: float
    dconv: np.ndarray
    dmass: float
    dgrad_sq: float
    tail_grad_sq: float


class HistoryBuffer:
    def __init__(self, grid: Grid1D, dt: float, kernel: Kernel, u0: np.ndarray,
                 mode: str = "direct", capacity: int = 1024):
        if mode not in MODES:
            raise InvalidArgument(f"unknown convolution mode {mode!r}")
        if mode == "fast" and kernel.family != "exponential":
            raise UnsupportedKernel("fast convolution needs an exponential kernel")
        self.grid = grid
        self.dt = float(dt)
        self.kernel = kernel
        self.mode = mode
        n = grid.n_interior
        self._shape = (n,)
        self._h = grid.h
        self._snap = np.empty((max(capacity, 2), n))
        self._grad_sq = np.empty(max(capacity, 2))
        self._count = 0
        self._g = self._dg = self._f = np.empty(0)
        if mode == "fast":
            beta = kernel.params["beta"]
            self._decay = float(np.exp(-beta * self.dt))
            self._w = np.zeros(n)        # field recurrence
            self._conv = np.zeros(n)     # a dt (W_n - u_n / 2)
            self._wn = 0.0               # ||grad u||^2 recurrence
            self._wm = 0.0               # kernel mass recurrence
        self.push(u0)

    # -- storage ------------------------------------------------------------
    @property
    def count(self) -> int:
        return self._count

    @property
    def steps(self) -> int:
        return self._count - 1

    @property
    def t(self) -> float:
        return self.steps * self.dt

    @property
    def snapshots(self) -> np.ndarray:
        return self._snap[: self._count]

    @property
    def grad_norms_sq(self) -> np.ndarray:
        return self._grad_sq[: self._count]

    @property
    def current(self) -> np.ndarray:
        return self._snap[self._count - 1]

    def push(self, u) -> None:
        u = np.asarray(u, dtype=float)
        if u.shape != self._shape:
            raise InvalidArgument("history fed a field from a different grid")
        if self._count == self._snap.shape[0]:
            grow = self._snap.shape[0]
            self._snap = np.concatenate([self._snap, np.empty_like(self._snap[:grow])])
            self._grad_sq = np.concatenate([self._grad_sq, np.empty(grow)])
        self._snap[self._count] = u
        gsq = grad_sq(u, self._h)
        self._grad_sq[self._count] = gsq
        self._count += 1
        if self.mode == "fast":
            # W_n = lam W_{n-1} + u_n with W_0 = u_0 / 2
            if self._count == 1:
                self._w = 0.5 * u
                self._wn = 0.5 * gsq
                self._wm = 0.5
            else:
                recur(self._w, u, self._decay, self.kernel.params["a"] * self.dt, self._conv)
                self._wn = self._decay * self._wn + gsq
                self._wm = self._decay * self._wm + 1.0

    # -- kernel tables --------------------------------------------------------
    def _tables(self, m: int):
        if self._g.size < m:
            size = max(m, 2 * self._g.size, 1024)
            self._g, self._dg, self._f = self.kernel.lag_tables(self.dt, size)
        return self._g, self._dg, self._f

    def _weights(self, table: np.ndarray) -> np.ndarray:
        """Trapezoid weights times ``table[n - j]`` for ``j = 0..n``."""
        n = self._count - 1
        w = self.dt * table[n::-1].copy() if n > 0 else np.zeros(1)
        if n > 0:
            w[0] *= 0.5
            w[-1] *= 0.5
        return w

    # -- convolution --------------------------------------------------------
    def convolve_direct(self) -> np.ndarray:
        g, _, _ = self._tables(self._count)
        return self._weights(g) @ self.snapshots

    def convolve_fast(self) -> np.ndarray:
        if self.mode != "fast":
            raise UnsupportedKernel("fast convolution state not maintained (mode='direct')")
        view = self._conv.view()
        view.flags.writeable = False
        return view

    def convolution(self) -> np.ndarray:
        return self.convolve_fast() if self.mode == "fast" else self.convolve_direct()

    def sums(self) -> MemorySums:
        n = self._count - 1
        if self.mode == "fast":
            p = self.kernel.params
            a, beta = p["a"], p["beta"]
            conv = self.convolve_fast()
            if n == 0:
                mass = gsq = 0.0
            else:
                mass = a * self.dt * (self._wm - 0.5)
                gsq = a * self.dt * (self._wn - 0.5 * self._grad_sq[n])
            return MemorySums(conv, mass, gsq, -beta * conv, -beta * mass, -beta * gsq,
                              gsq / beta)
        g, dg, f = self._tables(self._count)
        snaps = self.snapshots
        norms = self.grad_norms_sq
        wg, wdg, wf = self._weights(g), self._weights(dg), self._weights(f)
        if n == 0:
            wg = wdg = wf = np.zeros(1)
        return MemorySums(
            wg @ snaps, float(np.sum(wg)), float(wg @ norms),
            wdg @ snaps, float(np.sum(wdg)), float(wdg @ norms),
            float(wf @ norms),
        )


def history_push(hb: HistoryBuffer, u) -> None:
    hb.push(u)


def _check_time(hb: HistoryBuffer, t):
    if t is not None and abs(t - hb.t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidArgument(f"history is at t={hb.t}, convolution requested at t={t}")


def convolve(hb: HistoryBuffer, k: Kernel | None = None, t: float | None = None) -> np.ndarray:
    """Direct trapezoid evaluation of ``int_0^t g(t-s) u(s) ds``."""
    _check_time(hb, t)
    if k is None or k is hb.kernel:
        return hb.convolve_direct()
    n = hb.count - 1
    if n == 0:
        return np.zeros(hb.grid.n_interior)
    w = _trapezoid_weights(hb, _weight_fn(k))
    return w @ hb.snapshots


def convolve_fast(hb: HistoryBuffer, k: Kernel | None = None, t: float | None = None) -> np.ndarray:
    if k is not None and k.family != "exponential":
        raise UnsupportedKernel(f"fast convolution unavailable for {k.family} kernels")
    _check_time(hb, t)
    return hb.convolve_fast()


def _weight_fn(k):
    if isinstance(k, Kernel):
        return lambda s: k.eval(s)[0]
    return k


def _trapezoid_weights(hb: HistoryBuffer, weight_fn) -> np.ndarray:
    n = hb.count - 1
    lags = hb.dt * np.arange(n, -1, -1)
    w = hb.dt * np.asarray(weight_fn(lags), dtype=float)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def g_circ(hb: HistoryBuffer, k=None, current=None, use_gradient: bool = True) -> float:
    """``int_0^t g(t-s) ||u(s) - u(t)||^2 ds`` by its definition.

    ``k`` may be a :class:`Kernel` or any vectorized weight function of the
    lag (e.g. ``h_alpha``).  With ``use_gradient`` the H^1 seminorm is used.
    """
    n = hb.count - 1
    if n == 0:
        return 0.0
    cur = hb.current if current is None else np.asarray(current, dtype=float)
    if current is not None and not np.array_equal(cur, hb.current):
        raise InvalidArgument("g_circ needs the current field to be the last snapshot")
    weight = _weight_fn(hb.kernel if k is None else k)
    w = _trapezoid_weights(hb, weight)
    diff = hb.snapshots - cur
    if use_gradient:
        d = np.diff(diff, axis=1, prepend=0.0, append=0.0)
        sq = np.einsum("ij,ij->i", d, d) / hb.grid.h
    else:
        sq = hb.grid.h * np.einsum("ij,ij->i", diff, diff)
    return float(w @ sq)
