"""Ring buffer realizing the delayed velocity ``z(x, kappa, t) = u_t(x, t - tau kappa)``.

The delay is required to be an integer number ``n_slots`` of time steps,
so the transport equation ``tau z_t + z_kappa = 0`` is solved exactly by a
shift: the slot aged ``j`` steps holds ``u_t(., t - j dt)``, i.e.
``z(., kappa_j, t)`` with ``kappa_j = j / n_slots``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AlignmentError, InvalidArgument
from .grid import Grid1D

__all__ = ["DelayLine", "make_delay_line", "delay_push_pop", "z_square_integral",
           "aligned_slots"]

ALIGN_TOL = 1e-9


def aligned_slots(tau: float, dt: float) -> int:
    if not (tau > 0 and dt > 0):
        raise InvalidArgument("tau and dt must be positive")
    ratio = tau / dt
    n = round(ratio)
    if n < 1 or abs(ratio - n) > ALIGN_TOL:
        lo = max(math.floor(ratio), 1)
        hi = math.ceil(ratio) if math.ceil(ratio) != lo else lo + 1
        raise AlignmentError(tau, dt, (lo * dt, hi * dt))
    return int(n)


class DelayLine:
    """Fixed-size history of ``n_slots`` velocity fields ordered by age."""

    def __init__(self, grid: Grid1D, tau: float, dt: float, slots: np.ndarray):
        self.grid = grid
        self.tau = float(tau)
        self.dt = float(dt)
        self.n_slots = slots.shape[0]
        # physical row of age j (1-based) is (cursor + j - 1) % n_slots
        self._buf = np.ascontiguousarray(slots, dtype=float)
        self._cursor = 0

    def oldest(self) -> np.ndarray:
        """``z(., 1, t) = u_t(., t - tau)`` (a read-only view)."""
        view = self._buf[(self._cursor - 1) % self.n_slots].view()
        view.flags.writeable = False
        return view

    def push_pop(self, v: np.ndarray) -> np.ndarray:
        """Store ``v`` as the newest slot; return (a copy of) the evicted oldest one."""
        popped = self._buf[(self._cursor - 1) % self.n_slots].copy()
        self.push(v)
        return popped

    def push(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=float)
        if v.shape != self._buf.shape[1:]:
            raise InvalidArgument("delay line fed a field from a different grid")
        self._cursor = (self._cursor - 1) % self.n_slots
        self._buf[self._cursor] = v

    def by_age(self) -> np.ndarray:
        """Copy of all slots, row ``j - 1`` holding the field aged ``j`` steps."""
        return np.roll(self._buf, -self._cursor, axis=0)

    def slot_norms_sq(self) -> np.ndarray:
        """``||z(., kappa_j, t)||_2^2`` ordered by age."""
        sq = self.grid.h * np.einsum("ij,ij->i", self._buf, self._buf)
        return np.roll(sq, -self._cursor)

    def kappa_midpoints(self) -> np.ndarray:
        return (np.arange(1, self.n_slots + 1) - 0.5) / self.n_slots

    def z_square_integral(self, weighted: bool = False) -> float:
        """Midpoint rule in kappa of ``||z||_2^2`` (optionally times ``exp(-2 tau kappa)``)."""
        sq = self.slot_norms_sq()
        if weighted:
            sq = sq * np.exp(-2.0 * self.tau * self.kappa_midpoints())
        return float(np.sum(sq)) / self.n_slots

    @property
    def nbytes(self) -> int:
        return self._buf.nbytes


def make_delay_line(grid: Grid1D, tau: float, dt: float, f0=None) -> DelayLine:
    """Build the ring buffer pre-filled with ``f0(x, s)`` at ``s = -j dt``.

    ``f0`` is called with the interior node array and a scalar ``s``; ``None``
    means zero history.
    """
    n = aligned_slots(tau, dt)
    slots = np.zeros((n, grid.n_interior))
    if f0 is not None:
        x = grid.nodes
        for j in range(1, n + 1):
            slots[j - 1] = np.broadcast_to(np.asarray(f0(x, -j * dt), dtype=float), x.shape)
    return DelayLine(grid, tau, dt, slots)


def delay_push_pop(dl: DelayLine, v) -> np.ndarray:
    return dl.push_pop(v)


def z_square_integral(dl: DelayLine, weighted: bool = False) -> float:
    return dl.z_square_integral(weighted)
