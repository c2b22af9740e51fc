"""Energy, potential well, Lyapunov functionals and constant selection.

Every quantity here is a pure function of a simulation state (or of a
series of :class:`EnergyRecord` rows) plus parameters.  The history
functional ``(g o grad u)(t)`` is evaluated from the kernel-weighted sums
kept by :class:`~viscolab.memory.HistoryBuffer` through the expansion

    sum_j w_j g_j ||grad(u_j - u)||^2
        = sum_j w_j g_j ||grad u_j||^2 - 2 <grad K, grad u> + ||grad u||^2 sum_j w_j g_j

which costs O(1) once the convolution ``K`` is known; the definitional
O(n) sum is :func:`viscolab.memory.g_circ`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument, SelectionFailure
from .grid import GridSpectrum, estimate_embedding_constant, inner_h1, laplacian_apply
from .kernel import KernelCertificate, c_alpha
from .stepper import PhysParams, SimConfig, SimState, omega, select_xi

__all__ = [
    "EnergyRecord",
    "WellReport",
    "LyapunovConstants",
    "DissipationReport",
    "energy",
    "dissipation_check",
    "balance_defect",
    "well_report",
    "lyapunov_I1",
    "lyapunov_I2",
    "lyapunov_I3",
    "lyapunov_I4",
    "lyapunov_L",
    "equivalence_bounds",
    "select_constants",
    "ledger_inequalities",
    "well_invariance",
    "lp_energy_bounds",
    "i3_identity_residual",
    "i4_inequality_margins",
    "CSV_COLUMNS",
]

CSV_COLUMNS = (
    "t", "E", "E_kinetic_rho", "E_elastic", "E_memory_gcirc", "E_grad_ut", "E_delay",
    "E_source", "norm_ut_sq", "norm_ztail_sq", "I1", "I2", "I3", "I4", "L",
)


@dataclass
class EnergyRecord:
    t: float
    E: float
    kinetic: float
    elastic: float
    memory: float
    grad_ut: float
    delay: float
    source: float
    norm_ut_sq: float
    norm_ztail_sq: float
    I1: float
    I2: float
    I3: float
    I4: float
    L: float
    # auxiliary values used by the checks
    grad_u_sq: float = 0.0
    gcirc: float = 0.0
    dgcirc: float = 0.0
    u_p_p: float = 0.0
    ut_z: float = 0.0
    g_t: float = 0.0
    balance: float = 0.0

    def csv_row(self) -> list:
        return [self.t, self.E, self.kinetic, self.elastic, self.memory, self.grad_ut,
                self.delay, self.source, self.norm_ut_sq, self.norm_ztail_sq,
                self.I1, self.I2, self.I3, self.I4, self.L]

    def component_sum(self) -> float:
        return (self.kinetic + self.elastic + self.memory + self.grad_ut + self.delay
                - self.source)


def _gcirc(sq_sum, conv, mass, u, grad_u_sq, grid) -> float:
    val = sq_sum - 2.0 * inner_h1(grid, conv, u) + grad_u_sq * mass
    return max(val, 0.0)


def energy(state: SimState, cfg: SimConfig, constants=None) -> EnergyRecord:
    grid = state.grid
    h = grid.h
    ph = cfg.phys
    k = cfg.kernel
    u, v = state.u, state.v
    t = state.t
    xi = select_xi(ph)

    av = np.abs(v)
    au = np.abs(u)
    v_rho = av**ph.rho
    kinetic = h * float(np.sum(v_rho * av * av)) / (ph.rho + 2.0)
    grad_u_sq = inner_h1(grid, u, u)
    grad_ut_sq = inner_h1(grid, v, v)
    mass_exact = k.tail(0.0) - k.tail(t)
    sums = state.history.sums()
    gc = _gcirc(sums.grad_sq, sums.conv, sums.mass, u, grad_u_sq, grid)
    dgc = -_gcirc(-sums.dgrad_sq, -sums.dconv, -sums.dmass, u, grad_u_sq, grid)
    elastic = 0.5 * (1.0 - mass_exact) * grad_u_sq
    memory = 0.5 * gc
    grad_ut = 0.5 * grad_ut_sq
    delay = 0.5 * xi * state.delay.z_square_integral(weighted=False)
    u_p_p = h * float(np.sum(au**ph.p))
    source = ph.b / ph.p * u_p_p
    E = kinetic + elastic + memory + grad_ut + delay - source

    z1 = state.delay.oldest()
    ut_sq = h * float(v @ v)
    z_sq = h * float(z1 @ z1)
    ut_z = h * float(v @ z1)

    I1 = h * float(np.sum(v_rho * v * u)) / (ph.rho + 1.0) + inner_h1(grid, v, u)
    lap_v = laplacian_apply(grid, v)
    inner = sums.mass * u - sums.conv
    I2 = h * float((lap_v - v_rho * v / (ph.rho + 1.0)) @ inner)
    I3 = state.delay.z_square_integral(weighted=True)
    I4 = sums.tail_grad_sq

    g_t = k.g(t)
    balance = (-ph.mu1 * ut_sq - ph.mu2 * ut_z
               + xi / (2.0 * ph.tau) * (ut_sq - z_sq)
               + 0.5 * dgc - 0.5 * g_t * grad_u_sq)
    rec = EnergyRecord(t, E, kinetic, elastic, memory, grad_ut, delay, source, ut_sq,
                       z_sq, I1, I2, I3, I4, math.nan, grad_u_sq, gc, dgc, u_p_p, ut_z,
                       g_t, balance)
    if constants is not None:
        rec.L = lyapunov_L(rec, constants)
    return rec


# -- Lyapunov functionals as standalone operations --------------------------

def lyapunov_I1(state: SimState, cfg: SimConfig) -> float:
    grid, rho = state.grid, cfg.phys.rho
    v, u = state.v, state.u
    return (grid.h * float(np.sum(np.abs(v) ** rho * v * u)) / (rho + 1.0)
            + inner_h1(grid, v, u))


def lyapunov_I2(state: SimState, cfg: SimConfig) -> float:
    grid, rho = state.grid, cfg.phys.rho
    v, u = state.v, state.u
    sums = state.history.sums()
    inner = sums.mass * u - sums.conv
    factor = laplacian_apply(grid, v) - np.abs(v) ** rho * v / (rho + 1.0)
    return grid.h * float(factor @ inner)


def lyapunov_I3(state: SimState) -> float:
    return state.delay.z_square_integral(weighted=True)


def lyapunov_I4(state: SimState) -> float:
    """``int_0^t f(t-s) ||grad u(s)||^2 ds`` with the kernel tail ``f``."""
    hb = state.history
    n = hb.count - 1
    if n == 0:
        return 0.0
    lags = hb.dt * np.arange(n, -1, -1)
    w = hb.dt * hb.kernel.tail(lags)
    w[0] *= 0.5
    w[-1] *= 0.5
    return float(w @ hb.grad_norms_sq)


# -- dissipation ---------------------------------------------------------------

@dataclass
class DissipationReport:
    n_intervals: int
    violations: int
    worst_margin: float
    worst_time: float
    tol_E: float
    violation_times: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _interval_arrays(records):
    t = np.array([r.t for r in records])
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise InvalidArgument("records must have strictly increasing times")
    return t, dt


def dissipation_check(records, omega_value: float, tol_E: float = 0.0) -> DissipationReport:
    """Compare ``dE/dt`` per interval with ``-omega (||u_t||^2 + ||z(.,1)||^2) + tol_E``."""
    if len(records) < 2:
        raise InvalidArgument("dissipation check needs at least two records")
    t, dt = _interval_arrays(records)
    E = np.array([r.E for r in records])
    diss = np.array([r.norm_ut_sq + r.norm_ztail_sq for r in records])
    rate = np.diff(E) / dt
    bound = -omega_value * 0.5 * (diss[1:] + diss[:-1]) + tol_E
    margin = bound - rate
    bad = np.nonzero(margin < 0)[0]
    worst = int(np.argmin(margin))
    return DissipationReport(len(rate), int(bad.size), float(margin[worst]),
                             float(t[worst]), float(tol_E), [float(t[i]) for i in bad])


def balance_defect(records) -> float:
    """Largest gap between the discrete ``dE/dt`` and the exact power balance
    (trapezoid average over each interval); a pure discretization error."""
    t, dt = _interval_arrays(records)
    E = np.array([r.E for r in records])
    P = np.array([r.balance for r in records])
    return float(np.max(np.abs(np.diff(E) / dt - 0.5 * (P[1:] + P[:-1]))))


# -- potential well -------------------------------------------------------------

@dataclass
class WellReport:
    c_s: float
    c_s_source: str
    B1_embed: float
    sigma1: float
    E1: float
    sigma2: float
    D: float
    E0: float
    grad_u0_sq: float
    l: float
    energy_below_E1: bool
    gradient_below_sigma1: bool

    @property
    def admissible(self) -> bool:
        return self.energy_below_E1 and self.gradient_below_sigma1

    def F(self, x: float, b: float, p: float) -> float:
        return 0.5 * x * x - b * self.B1_embed / p * x**p

    def as_dict(self) -> dict:
        d = asdict(self)
        d["admissible"] = self.admissible
        return d


def well_report(params: PhysParams, cert: KernelCertificate, c_s: float, E0: float,
                grad_u0_sq: float, c_s_source: str = "discrete estimate") -> WellReport:
    """Potential-well constants for exponent ``params.p``.

    ``B1_embed = c_s^p / l^(p/2)`` is the constant in
    ``||u||_p^p <= B1_embed (l ||grad u||^2)^(p/2)``; the well profile is
    ``F(x) = x^2/2 - (b B1_embed / p) x^p`` with maximum ``E1`` at ``sigma1``.
    """
    p, b, l = params.p, params.b, cert.l
    K = c_s**p / l ** (p / 2.0)
    if b > 0:
        sigma1 = (b * K) ** (-1.0 / (p - 2.0))
        E1 = (p - 2.0) / (2.0 * p) * sigma1**2
    else:
        sigma1 = E1 = math.inf

    def F(x):
        return 0.5 * x * x - b * K / p * x**p

    if E0 <= 0:
        sigma2 = 0.0
    elif E0 >= E1:
        sigma2 = sigma1
    elif b == 0:
        sigma2 = math.sqrt(2.0 * E0)
    else:
        lo, hi = 0.0, sigma1
        while hi - lo > 1e-12 * sigma1:
            mid = 0.5 * (lo + hi)
            if F(mid) < E0:
                lo = mid
            else:
                hi = mid
        sigma2 = 0.5 * (lo + hi)
    s = b * K * sigma2 ** (p - 2.0)
    D = 2.0 * p * K * sigma2 ** (p - 2.0) / (p - 2.0 * s) if 2.0 * s < p else math.inf
    return WellReport(c_s, c_s_source, K, sigma1, E1, sigma2, D, E0, grad_u0_sq, l,
                      E0 < E1, l * grad_u0_sq < sigma1**2)


def well_invariance(records, well: WellReport, tol: float = 1e-6):
    """Worst ratio ``(l ||grad u||^2 + g o grad u) / sigma2^2`` and pass flag."""
    vals = np.array([well.l * r.grad_u_sq + r.gcirc for r in records])
    bound = well.sigma2**2 * (1.0 + tol)
    ratio = float(np.max(vals) / well.sigma2**2) if well.sigma2 > 0 else (
        0.0 if np.all(vals == 0) else math.inf)
    return ratio, bool(np.all(vals <= bound))


def lp_energy_bounds(records, well: WellReport, b: float, p: float, tol: float = 1e-6):
    """Check ``||u||_p^p <= D E(t)`` and the positive-part energy bound.

    The positive energy components add up to ``E + (b/p)||u||_p^p``, which is
    bounded by ``(1 + b D / p) E``.
    """
    E = np.array([r.E for r in records])
    up = np.array([r.u_p_p for r in records])
    pos = E + b / p * up
    ok_p = bool(np.all(up <= well.D * E * (1.0 + tol)))
    ok_pos = bool(np.all(pos <= (1.0 + b * well.D / p) * E * (1.0 + tol)))
    with np.errstate(divide="ignore", invalid="ignore"):
        worst = float(np.nanmax(np.where(E > 0, up / (well.D * E), 0.0)))
    return {"u_p_ratio_max": worst, "u_p_bound_holds": ok_p, "positive_part_bound_holds": ok_pos}


def i3_identity_residual(records, tau: float) -> float:
    """max |dI3/dt - (-2 I3 + ||u_t||^2/tau - e^{-2tau}/tau ||z(.,1)||^2)|."""
    t, dt = _interval_arrays(records)
    I3 = np.array([r.I3 for r in records])
    rhs = np.array([-2.0 * r.I3 + r.norm_ut_sq / tau
                    - math.exp(-2.0 * tau) / tau * r.norm_ztail_sq for r in records])
    return float(np.max(np.abs(np.diff(I3) / dt - 0.5 * (rhs[1:] + rhs[:-1]))))


def i4_inequality_margins(records, l: float) -> np.ndarray:
    """``3(1-l)||grad u||^2 - (g o grad u)/2 - dI4/dt`` per interval (>= 0 expected)."""
    t, dt = _interval_arrays(records)
    I4 = np.array([r.I4 for r in records])
    rhs = np.array([3.0 * (1.0 - l) * r.grad_u_sq - 0.5 * r.gcirc for r in records])
    return 0.5 * (rhs[1:] + rhs[:-1]) - np.diff(I4) / dt


# -- Lyapunov constants ---------------------------------------------------------

@dataclass
class LyapunovConstants:
    omega: float
    delta: float
    delta_bounds: tuple
    epsilon: float
    g1: float
    N1: float
    N2: float
    N3: float
    M: float
    alpha: float
    C_alpha: float
    B1L: float
    B2L: float
    B3L: float
    C1: float
    C2: float
    C3: float
    C4: float
    C5: float
    C6: float
    inputs: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def lyapunov_L(record: EnergyRecord, consts: LyapunovConstants) -> float:
    return (consts.M * record.E + consts.N1 * record.I1 + consts.N2 * record.I2
            + consts.N3 * record.I3)


def equivalence_bounds(records, consts: LyapunovConstants | None = None):
    """``(beta1, beta2)`` = min/max of ``L/E``; records with ``E <= 0`` are listed
    separately because the ratio is undefined there."""
    ratios = []
    undefined = []
    for r in records:
        L = lyapunov_L(r, consts) if consts is not None else r.L
        if r.E > 0:
            ratios.append(L / r.E)
        else:
            undefined.append(r.t)
    if not ratios:
        return math.nan, math.nan, undefined
    return min(ratios), max(ratios), undefined


def _embedding(spectrum: GridSpectrum, q: float, grid) -> float:
    q = float(q)
    if q not in spectrum.c_s_for_p:
        if grid is None:
            raise InvalidArgument(f"no embedding constant for exponent {q}")
        spectrum.c_s_for_p[q] = estimate_embedding_constant(grid, q)[0]
    return spectrum.c_s_for_p[q]


class _Ledger:
    """Printed formulas of the constant ledgers, as functions of the choices."""

    def __init__(self, ph: PhysParams, cert: KernelCertificate, lam1: float, DE0: float,
                 cs_source: float, cs_inertia: float, om: float):
        self.ph, self.lam1, self.om = ph, lam1, om
        self.l = cert.l
        self.g0 = cert.g0
        self.g1 = cert.g1_mass
        l, p, rho, b = self.l, ph.p, ph.rho, ph.b
        self.X = b * cs_source ** (2 * (p - 1)) * (2.0 * DE0 / l) ** (p - 2)
        self.Y = 2.0 / (rho + 1) * cs_inertia ** (2 * (rho + 1)) * (2.0 * DE0) ** (rho / 2)
        self.mu_sum = 1.0 + ph.mu1 / lam1 + abs(ph.mu2) / lam1

    def delta_bounds(self):
        l, g1 = self.l, self.g1
        return (l * g1 / (16.0 * (1.0 + 2.0 * (1 - l) ** 2 + self.X)),
                l * g1 / (1024.0 * (1 - l) ** 2),
                5.0 * g1 / (8.0 * (1.0 / self.lam1 + 2.0 + self.Y)))

    def epsilon(self):
        return 0.75 * self.l / self.mu_sum

    def bracket(self, d, a):
        ph, lam = self.ph, self.lam1
        return (1 / (2 * d) + 2 * d + ph.mu1**2 / (4 * d * lam) + ph.mu2**2 / (4 * d * lam)
                + ph.b / (4 * d * lam) + a * a / (4 * d) + a * a / (4 * (ph.rho + 1) * d * lam))

    def extra(self, d, a):
        c = a * (1 - self.l) + self.g0
        return c / (4 * d) + c / (4 * (self.ph.rho + 1) * d * self.lam1)

    def B(self, d, a, Ca):
        l = self.l
        B1 = d + 2 * d * (1 - l) ** 2 + d * self.X
        B2 = self.bracket(d, a) * Ca + self.extra(d, a)
        B3 = d / self.lam1 + 2 * d + d * self.Y
        return B1, B2, B3

    def C(self, d, eps, N1, N2, N3, M, a, Ca):
        ph, l, g1, om = self.ph, self.l, self.g1, self.om
        B1, B2, B3 = self.B(d, a, Ca)
        tau = ph.tau
        return (
            N2 * g1 / (ph.rho + 1) - N1 / (ph.rho + 1),
            N2 * (g1 - B3) - N1,
            N1 * (l - self.mu_sum * eps) - N2 * B1,
            om * M + N3 * math.exp(-2 * tau) / tau - N1 * abs(ph.mu2) / (4 * eps) - N2 * d,
            M / 2 - N1 * Ca / (4 * eps) - N2 * B2,
            om * M - N3 / tau - N1 * ph.mu1 / (4 * eps),
        )

    def alpha_ok(self, d, eps, N1, N2, a, Ca):
        return a * Ca < 1.0 / (8.0 * (N2 * self.bracket(d, a) + N1 / (4 * eps)))


def select_constants(params: PhysParams, cert: KernelCertificate, well: WellReport,
                     spectrum: GridSpectrum, grid=None, m_cap: float = 1e12,
                     shrink: float = 0.99, c_alpha_tol: float = 1e-10) -> LyapunovConstants:
    """Deterministic choice of the constants making ``L' <= ...`` hold.

    delta at ``shrink`` times its bound; ``N2 = 1/(8 delta (1-l))``;
    ``N1 = 3/8 g1 N2``; alpha halved from 1/2 until the alpha C_alpha
    condition holds; ``M = ceil(1/(2 alpha))`` doubled until C4, C5, C6 > 0,
    with ``N3 = shrink * tau (omega M - N1 mu1/(4 eps))`` (just below the
    largest value keeping C6 > 0).
    """
    xi = select_xi(params)
    om = omega(params, xi)
    if not om > 0:
        raise SelectionFailure("omega = 0 (|mu2| = mu1): the decay argument needs omega > 0",
                               constant="omega")
    if not well.admissible or not math.isfinite(well.D):
        raise SelectionFailure("initial data outside the potential well", constant="well")
    lam1 = spectrum.lambda1
    cs_src = _embedding(spectrum, 2 * (params.p - 1), grid)
    cs_in = _embedding(spectrum, 2 * (params.rho + 1), grid)
    led = _Ledger(params, cert, lam1, well.D * well.E0, cs_src, cs_in, om)
    bounds = led.delta_bounds()
    d = shrink * min(bounds)
    eps = led.epsilon()
    N2 = 1.0 / (8.0 * d * (1.0 - cert.l))
    N1 = 0.375 * led.g1 * N2
    k = cert.kernel

    a = 0.5
    while True:
        Ca = c_alpha(k, a, c_alpha_tol).value
        if led.alpha_ok(d, eps, N1, N2, a, Ca):
            break
        a *= 0.5
        if a < 1.0 / (2.0 * m_cap):
            raise SelectionFailure("alpha scan reached its floor", constant="alpha")

    M = float(math.ceil(1.0 / (2.0 * a)))
    while M <= m_cap:
        a_M = 1.0 / (2.0 * M)
        Ca = c_alpha(k, a_M, c_alpha_tol).value
        N3 = shrink * params.tau * (om * M - N1 * params.mu1 / (4.0 * eps))
        if N3 > 0 and led.alpha_ok(d, eps, N1, N2, a_M, Ca):
            C = led.C(d, eps, N1, N2, N3, M, a_M, Ca)
            if min(C[3:]) > 0:
                break
        M *= 2.0
    else:
        raise SelectionFailure(f"no M <= {m_cap:g} makes C4, C5, C6 positive", constant="M")

    C = led.C(d, eps, N1, N2, N3, M, a_M, Ca)
    names = ("C1", "C2", "C3", "C4", "C5", "C6")
    for name, val in zip(names, C):
        if not val > 0:
            raise SelectionFailure(f"{name} = {val:.6g} is not positive", constant=name)
    B1, B2, B3 = led.B(d, a_M, Ca)
    inputs = {"lambda1": lam1, "c_s_2(p-1)": cs_src, "c_s_2(rho+1)": cs_in,
              "D_E0": well.D * well.E0, "l": cert.l, "g0": cert.g0, "xi": xi}
    return LyapunovConstants(om, d, bounds, eps, led.g1, N1, N2, N3, M, a_M, Ca,
                             B1, B2, B3, *C, inputs=inputs)


def ledger_inequalities(consts: LyapunovConstants, params: PhysParams) -> dict:
    """Every inequality the constant choice is supposed to satisfy, by substitution."""
    c = consts
    inp = c.inputs
    l, lam1 = inp["l"], inp["lambda1"]
    mu_sum = 1 + params.mu1 / lam1 + abs(params.mu2) / lam1
    bracket = (1 / (2 * c.delta) + 2 * c.delta + params.mu1**2 / (4 * c.delta * lam1)
               + params.mu2**2 / (4 * c.delta * lam1) + params.b / (4 * c.delta * lam1)
               + c.alpha**2 / (4 * c.delta)
               + c.alpha**2 / (4 * (params.rho + 1) * c.delta * lam1))
    extra = ((c.alpha * (1 - l) + inp["g0"]) / (4 * c.delta)
             + (c.alpha * (1 - l) + inp["g0"]) / (4 * (params.rho + 1) * c.delta * lam1))
    return {
        "delta_below_bounds": c.delta < min(c.delta_bounds),
        "N1_relation": math.isclose(c.N1, 0.375 * c.g1 * c.N2, rel_tol=1e-12),
        "N2_relation": math.isclose(c.N2, 1 / (8 * c.delta * (1 - l)), rel_tol=1e-12),
        "epsilon_relation": math.isclose(c.epsilon, 0.75 * l / mu_sum, rel_tol=1e-12),
        "C1_closed_form": math.isclose(c.C1, 5 / 8 * c.g1 * c.N2 / (params.rho + 1),
                                       rel_tol=1e-9),
        "C3_above_lg1N2_over_32": c.C3 > l * c.g1 * c.N2 / 32,
        "C3_above_4(1-l)": c.C3 > 4 * (1 - l),
        "alpha_C_alpha_condition": c.alpha * c.C_alpha
        < 1 / (8 * (c.N2 * bracket + c.N1 / (4 * c.epsilon))),
        "alpha_is_1_over_2M": math.isclose(c.alpha, 1 / (2 * c.M), rel_tol=1e-12),
        "C5_reduced_positive": c.M / 4 - c.N2 * extra > 0,
        **{f"{n}_positive": getattr(c, n) > 0 for n in ("C1", "C2", "C3", "C4", "C5", "C6")},
        "N3_positive": c.N3 > 0,
    }
