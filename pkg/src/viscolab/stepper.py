"""Semi-implicit time stepping of the delayed viscoelastic wave equation.

One step from ``(u^n, v^n)`` at ``t_n``:

    (diag(|v^n|^rho) + A_h) a^n = Lap_h(u^n - K^n) - mu1 v^n - mu2 z^n + b |u^n|^(p-2) u^n
    v^{n+1} = v^n + dt a^n
    u^{n+1} = u^n + dt v^{n+1}

where ``A_h = -Lap_h``, ``K^n`` is the trapezoid memory convolution of the
displacement history and ``z^n = u_t(t_n - tau)`` comes from the delay line.
The matrix is SPD and diagonally dominant for every state, so the step never
fails on finite input.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._fused import advance
from .delay import DelayLine, aligned_slots, make_delay_line
from .errors import BlowUpDetected, InvalidArgument
from .grid import Grid1D, make_grid
from .kernel import Kernel
from .memory import HistoryBuffer

__all__ = [
    "PhysParams",
    "SimConfig",
    "SimState",
    "RunResult",
    "xi_window",
    "select_xi",
    "omega",
    "default_dt",
    "field_preset",
    "history_preset",
    "init_sim",
    "step",
    "run",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhysParams:
    rho: float = 1.0
    p: float = 4.0
    b: float = 1.0
    mu1: float = 1.0
    mu2: float = 0.0
    tau: float = 1.0
    xi: float | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidArgument("rho must be positive")
        if not self.p > 2:
            raise InvalidArgument(f"p={self.p} violates p > 2")
        if not self.b >= 0:
            raise InvalidArgument("b must be nonnegative")
        if not self.mu1 >= 0:
            raise InvalidArgument("mu1 must be nonnegative")
        if not self.tau > 0:
            raise InvalidArgument("tau must be positive")


def xi_window(params: PhysParams) -> tuple[float, float]:
    m2 = abs(params.mu2)
    return params.tau * m2, params.tau * (2.0 * params.mu1 - m2)


def select_xi(params: PhysParams) -> float:
    """Weight of the delay term in the energy; midpoint of the admissible window."""
    if abs(params.mu2) > params.mu1:
        raise InvalidArgument(
            f"|mu2|={abs(params.mu2)} > mu1={params.mu1}: no admissible xi"
        )
    lo, hi = xi_window(params)
    if params.xi is None:
        return 0.5 * (lo + hi)
    xi = float(params.xi)
    if not lo - 1e-14 <= xi <= hi + 1e-14:
        raise InvalidArgument(f"xi={xi} outside the admissible window [{lo}, {hi}]")
    return xi


def omega(params: PhysParams, xi: float | None = None) -> float:
    """Dissipation rate ``min{mu1 - xi/(2 tau) - |mu2|/2, xi/(2 tau) - |mu2|/2}``."""
    xi = select_xi(params) if xi is None else xi
    half = xi / (2.0 * params.tau)
    m2 = 0.5 * abs(params.mu2)
    return max(min(params.mu1 - half - m2, half - m2), 0.0)


def default_dt(h: float, tau: float) -> float:
    return tau / math.ceil(tau / (0.5 * h) - 1e-9)


# -- presets for initial / history data ------------------------------------

def field_preset(spec, length: float):
    """``{"kind": "zero" | "constant" | "sine", ...}`` -> ``f(x)``."""
    spec = spec or {"kind": "zero"}
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return lambda x: np.zeros_like(x)
    if kind == "constant":
        c = float(spec.get("value", 0.0))
        return lambda x: np.full_like(x, c)
    if kind == "sine":
        amp = float(spec.get("amplitude", 1.0))
        mode = int(spec.get("mode", 1))
        return lambda x: amp * np.sin(mode * math.pi * x / length)
    raise InvalidArgument(f"unknown field preset {kind!r}")


def history_preset(spec, length: float):
    """``f0(x, s)`` for ``s in [-tau, 0)``: zero | constant | modulated_sine."""
    spec = spec or {"kind": "zero"}
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return None
    if kind == "constant":
        c = float(spec.get("value", 0.0))
        return lambda x, s: np.full_like(x, c)
    if kind == "modulated_sine":
        amp = float(spec.get("amplitude", 1.0))
        mode = int(spec.get("mode", 1))
        freq = float(spec.get("frequency", 1.0))
        return lambda x, s: amp * np.sin(mode * math.pi * x / length) * math.cos(freq * s)
    raise InvalidArgument(f"unknown history preset {kind!r}")


@dataclass(frozen=True)
class SimConfig:
    phys: PhysParams
    kernel: Kernel
    length: float = 1.0
    n_cells: int = 200
    dt: float | None = None
    t_final: float = 10.0
    u0: dict = field(default_factory=lambda: {"kind": "zero"})
    u1: dict = field(default_factory=lambda: {"kind": "zero"})
    f0: dict = field(default_factory=lambda: {"kind": "zero"})
    cadence: int = 10
    conv_mode: str = "auto"
    blowup_ceiling: float = 1e8

    def __post_init__(self):
        if not self.t_final > 0:
            raise InvalidArgument("T_final must be positive")
        if self.dt is not None and not self.dt > 0:
            raise InvalidArgument("dt must be positive")
        if int(self.cadence) != self.cadence or self.cadence < 1:
            raise InvalidArgument("diagnostics cadence must be a positive integer")
        if self.conv_mode not in ("auto", "direct", "fast"):
            raise InvalidArgument(f"unknown convolution mode {self.conv_mode!r}")

    @property
    def grid(self) -> Grid1D:
        return make_grid(self.length, self.n_cells)

    @property
    def time_step(self) -> float:
        if self.dt is not None:
            return float(self.dt)
        return default_dt(self.length / self.n_cells, self.phys.tau)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.time_step))

    @property
    def xi(self) -> float:
        return select_xi(self.phys)

    @property
    def resolved_conv_mode(self) -> str:
        if self.conv_mode == "auto":
            return "fast" if self.kernel.family == "exponential" else "direct"
        return self.conv_mode

    def with_updates(self, **changes) -> "SimConfig":
        return replace(self, **changes)


class _Workspace:
    """Per-simulation constants reused by every step."""

    def __init__(self, grid: Grid1D, cfg: SimConfig):
        self.inv_h2 = 1.0 / grid.h**2
        ph = cfg.phys
        self.rho = float(ph.rho)
        self.pm2 = float(ph.p) - 2.0
        self.b = float(ph.b)
        self.mu1 = float(ph.mu1)
        self.mu2 = float(ph.mu2)
        self.dt = cfg.time_step
        self.ceiling = cfg.blowup_ceiling
        n = grid.n_interior
        self.work = np.empty(n)
        self.rhs = np.empty(n)
        self.diag = np.empty(n)


@dataclass
class SimState:
    t: float
    u: np.ndarray
    v: np.ndarray
    delay: DelayLine
    history: HistoryBuffer
    step_index: int = 0
    grid: Grid1D | None = None
    _ws: _Workspace | None = field(default=None, repr=False)


def init_sim(cfg: SimConfig) -> SimState:
    grid = cfg.grid
    dt = cfg.time_step
    aligned_slots(cfg.phys.tau, dt)
    if abs(cfg.phys.mu2) > cfg.phys.mu1:
        warnings.warn("|mu2| > mu1: outside the well-posedness regime", stacklevel=2)
    elif abs(cfg.phys.mu2) == cfg.phys.mu1:
        warnings.warn("|mu2| = mu1: dissipation rate omega is zero", stacklevel=2)
    u = grid.sample(field_preset(cfg.u0, cfg.length))
    v = grid.sample(field_preset(cfg.u1, cfg.length))
    dl = make_delay_line(grid, cfg.phys.tau, dt, history_preset(cfg.f0, cfg.length))
    hb = HistoryBuffer(grid, dt, cfg.kernel, u, mode=cfg.resolved_conv_mode,
                       capacity=cfg.n_steps + 1)
    return SimState(0.0, u, v, dl, hb, 0, grid, _Workspace(grid, cfg))


def step(state: SimState, cfg: SimConfig | None = None) -> SimState:
    """Advance ``state`` in place by one time step and return it."""
    ws = state._ws
    if ws is None:
        if cfg is None:
            raise InvalidArgument("state has no workspace; pass the SimConfig")
        ws = state._ws = _Workspace(state.grid or cfg.grid, cfg)
    u, v = state.u, state.v
    u_new = np.empty_like(u)
    v_new = np.empty_like(v)
    vmax = advance(u, v, state.history.convolution(), state.delay.oldest(), ws.inv_h2,
                   ws.mu1, ws.mu2, ws.b, ws.pm2, ws.rho, ws.dt, u_new, v_new,
                   ws.diag, ws.rhs, ws.work)
    state.delay.push(v)
    state.history.push(u_new)
    state.u, state.v = u_new, v_new
    state.step_index += 1
    state.t = state.step_index * ws.dt
    if not vmax < ws.ceiling:  # also trips on NaN
        raise BlowUpDetected(state.t, float(vmax))
    return state


@dataclass
class RunResult:
    config: SimConfig
    records: list
    state: SimState
    events: list
    constants: object = None

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.E for r in self.records])

    @property
    def blew_up(self) -> bool:
        return any(e["event"] == "blow-up-detected" for e in self.events)


def run(cfg: SimConfig, constants=None, diagnostics: bool = True) -> RunResult:
    """Step to ``T_final`` (or blow-up), emitting an energy record every
    ``cfg.cadence`` steps."""
    from .diagnostics import energy  # diagnostics imports this module's types

    state = init_sim(cfg)
    records = []
    events = []
    if diagnostics:
        records.append(energy(state, cfg, constants))
    n_steps = cfg.n_steps
    for k in range(n_steps):
        try:
            step(state)
        except BlowUpDetected as exc:
            events.append({"event": "blow-up-detected", "t": exc.t, "vmax": exc.vmax})
            log.warning("%s", exc)
            break
        if diagnostics and ((k + 1) % cfg.cadence == 0 or k + 1 == n_steps):
            records.append(energy(state, cfg, constants))
    return RunResult(cfg, records, state, events, constants)
