"""Acceptance suite on the reference configuration.

Each test reports under a ``criterion`` property; the terminal summary prints
one PASS/FAIL line per criterion with the measured values.
"""

import math
import time
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import linalg

from viscolab import diagnostics as diag
from viscolab.errors import SelectionFailure
from viscolab.fitting import calibrate_envelope, fit_exponential, fit_power
from viscolab.grid import estimate_embedding_constant, estimate_lambda1, make_grid
from viscolab.grid import solve_shifted_laplacian
from viscolab.kernel import Kernel, alpha_calpha_limit_scan, c_alpha, certify_h1
from viscolab.kernel import g1_eval, g1_inverse
from viscolab.memory import HistoryBuffer
from viscolab.runner import parse_config, run_experiment, setup_well, sweep_parallel
from viscolab.stepper import init_sim, omega, run, step

from conftest import reference_config, reference_phys

T_FINAL = 50.0
EXP = Kernel.exponential(0.5, 1.0)
POW = Kernel.power(0.5, 2.0)


def _report(request, number, title, detail):
    request.node.user_properties.append(("criterion", f"{number:02d} {title}"))
    request.node.user_properties.append(("detail", detail))


def _pipeline(kernel):
    cfg = reference_config(T_FINAL, kernel=kernel)
    well, cert, spectrum = setup_well(cfg)
    consts = diag.select_constants(cfg.phys, cert, well, spectrum, cfg.grid)
    result = run(cfg, consts)
    return SimpleNamespace(cfg=cfg, well=well, cert=cert, spectrum=spectrum, consts=consts,
                           result=result, records=result.records)


@pytest.fixture(scope="module")
def ref():
    return _pipeline(EXP)


@pytest.fixture(scope="module")
def power_run():
    return _pipeline(POW)


def _short_runs(t_final=5.0, factors=(1, 2, 4)):
    """Reference physics on a shorter horizon at dt, dt/2, dt/4 (slots double with each)."""
    base = reference_config(t_final)
    return [run(base.with_updates(dt=base.time_step / f)).records for f in factors]


def test_01_dissipation_law(request, ref):
    defects = [diag.balance_defect(r) for r in _short_runs()]
    shrink = [a / b for a, b in zip(defects, defects[1:])]
    tol_E = diag.balance_defect(ref.records)
    rep = diag.dissipation_check(ref.records, omega(ref.cfg.phys), tol_E)
    _report(request, 1, "dissipation law",
            f"tol_E={tol_E:.3e}, violations={rep.violations}/{rep.n_intervals}, "
            f"defect shrink per halving={', '.join(f'{s:.2f}' for s in shrink)}")
    assert all(s >= 1.5 for s in shrink)
    assert rep.violations == 0


def test_02_potential_well_invariance(request, ref):
    ratio, ok = diag.well_invariance(ref.records, ref.well, tol=1e-6)
    w = ref.well
    _report(request, 2, "potential-well invariance",
            f"max (l|grad u|^2 + g o grad u)/sigma2^2 = {ratio:.6f}, "
            f"E0/E1 = {w.E0 / w.E1:.3e}, l|grad u0|^2/sigma1^2 = "
            f"{w.l * w.grad_u0_sq / w.sigma1**2:.3e}")
    assert w.energy_below_E1 and w.gradient_below_sigma1
    assert ok


def test_03_lp_bound(request, ref):
    lem = diag.lp_energy_bounds(ref.records, ref.well, ref.cfg.phys.b, ref.cfg.phys.p, tol=1e-6)
    _report(request, 3, "L^p bound by D E(t)",
            f"max |u|_p^p/(D E) = {lem['u_p_ratio_max']:.4f}")
    assert lem["u_p_bound_holds"]


def test_04_I3_identity(request):
    residuals = [diag.i3_identity_residual(r, 0.5) for r in _short_runs()]
    shrink = [a / b for a, b in zip(residuals, residuals[1:])]
    _report(request, 4, "I3 identity",
            f"residuals={', '.join(f'{r:.3e}' for r in residuals)}, "
            f"shrink={', '.join(f'{s:.2f}' for s in shrink)}")
    assert all(s >= 1.5 for s in shrink)


def test_05_I4_inequality(request, ref):
    tol = diag.balance_defect(ref.records)
    margins = diag.i4_inequality_margins(ref.records, ref.cert.l)
    _report(request, 5, "I4 inequality",
            f"min margin = {margins.min():.3e} (tol {tol:.3e}), "
            f"{int(np.sum(margins < -tol))} of {margins.size} intervals below")
    assert np.all(margins >= -tol)


def test_06_linear_G_envelope(request, ref):
    t = ref.result.times
    E = ref.result.energies
    env = calibrate_envelope(t, E, ref.cert)
    tail = fit_exponential(t, E, (T_FINAL / 2, T_FINAL), zeta=ref.cert.zeta, t1=ref.cert.t1)
    _report(request, 6, "exponential envelope",
            f"k1={env.constants['k1']:.4g}, k2={env.constants['k2']:.4f}, "
            f"dominance={env.dominance}, tail R2={tail.r2:.5f}")
    assert env.regime == "linear-G"
    assert env.constants["k2"] > 0 and env.dominance == 1.0
    assert tail.r2 >= 0.98


def test_07_nonlinear_G_envelope(request, power_run):
    cert = power_run.cert
    t = power_run.result.times
    E = power_run.result.energies
    env = calibrate_envelope(t, E, cert)
    tail = fit_power(t, E, (T_FINAL / 2, T_FINAL), t1=cert.t1)
    _report(request, 7, "power-kernel envelope",
            f"zeta={cert.zeta:.6f}, k3={env.constants['k3']:.4f}, "
            f"k4={env.constants['k4']:.4g}, dominance={env.dominance}, "
            f"tail q={tail.q:.3f}, R2={tail.r2:.4f}")
    assert cert.zeta == pytest.approx(2 * math.sqrt(2), rel=1e-12)
    assert env.regime == "nonlinear-G"
    assert env.constants["k3"] > 0 and env.dominance == 1.0
    assert tail.q >= 1.0 and tail.r2 >= 0.95


def test_08_lyapunov_constants(request, ref):
    c = ref.consts
    cs = [getattr(c, f"C{i}") for i in range(1, 7)]
    cfg = reference_config(1.0, phys=reference_phys(mu2=1.0))
    with pytest.warns(UserWarning):
        well, cert, spectrum = setup_well(cfg)
    with pytest.raises(SelectionFailure) as exc:
        diag.select_constants(cfg.phys, cert, well, spectrum, cfg.grid)
    _report(request, 8, "constant selection",
            f"min C_i = {min(cs):.3e}, M = {c.M:g}; mu2=mu1 -> failure on "
            f"{exc.value.constant}")
    assert min(cs) > 0
    assert all(diag.ledger_inequalities(c, ref.cfg.phys).values())


def test_09_kernel_machinery(request):
    worst_c = 0.0
    worst_scan = -math.inf
    for a, beta in ((0.5, 1.0), (0.3, 2.0), (0.8, 4.0)):
        k = Kernel.exponential(a, beta)
        l = 1.0 - a / beta
        for alpha in (0.1, 0.25, 0.5):
            worst_c = max(worst_c, abs(c_alpha(k, alpha).value - a / (beta * (alpha + beta))))
        scan = alpha_calpha_limit_scan(k, np.geomspace(1e-3, 0.9, 12))
        worst_scan = max(worst_scan, max(v for _, v in scan) - (1.0 - l))
    scan = alpha_calpha_limit_scan(POW, np.geomspace(1e-3, 0.9, 12))
    worst_scan = max(worst_scan, max(v for _, v in scan) - (1.0 - certify_h1(POW).l))
    worst_rt = 0.0
    for kern in (EXP, POW):
        cert = certify_h1(kern)
        for t in np.geomspace(1e-3 * cert.r, cert.r, 25):
            worst_rt = max(worst_rt, abs(g1_inverse(cert, g1_eval(cert, t)) - t))
    _report(request, 9, "kernel machinery",
            f"max |C_alpha - closed form| = {worst_c:.2e}, "
            f"max alpha C_alpha - (1-l) = {worst_scan:.3e}, G1 round trip {worst_rt:.1e}")
    assert worst_c <= 1e-8
    assert worst_scan <= 0.0
    assert worst_rt <= 1e-9


def _timed_run(cfg):
    state = init_sim(cfg)
    start = time.perf_counter()
    for _ in range(cfg.n_steps):
        step(state)
    return time.perf_counter() - start


def test_10_fast_convolution(request):
    grid = make_grid(1.0, 200)
    dt = 0.0025
    rng = np.random.default_rng(7)
    fields = rng.standard_normal((1001, grid.n_interior))
    fast = HistoryBuffer(grid, dt, EXP, fields[0], mode="fast", capacity=1001)
    direct = HistoryBuffer(grid, dt, EXP, fields[0], mode="direct", capacity=1001)
    worst = 0.0
    for u in fields[1:]:
        fast.push(u)
        direct.push(u)
        worst = max(worst, float(np.max(np.abs(fast.convolve_fast() - direct.convolve_direct()))))

    base = reference_config(10_000 * dt)
    assert base.n_steps == 10_000
    _timed_run(base.with_updates(t_final=10 * dt, conv_mode="fast"))  # compile / cache load
    t_fast = min(_timed_run(base.with_updates(conv_mode="fast")) for _ in range(2))
    t_direct = _timed_run(base.with_updates(conv_mode="direct"))
    speedup = t_direct / t_fast
    _report(request, 10, "fast convolution",
            f"max node gap over 1e3 steps = {worst:.2e}; 1e4 steps fast {t_fast:.3f}s, "
            f"direct {t_direct:.3f}s, speedup {speedup:.1f}x")
    assert worst <= 1e-10
    assert speedup >= 20.0


def test_11_oracle_equivalences(request):
    grid = make_grid(1.0, 200)
    lam, _ = estimate_lambda1(grid)
    lam_err = abs(lam - math.pi**2) / math.pi**2
    c2, _ = estimate_embedding_constant(grid, 2.0)
    c_err = abs(c2 - 1 / math.pi) * math.pi
    rng = np.random.default_rng(11)
    worst = 0.0
    for n in (2, 5, 50, 200):
        g = make_grid(1.0, n)
        d = rng.uniform(0.0, 5.0, g.n_interior)
        rhs = rng.standard_normal(g.n_interior)
        A = (np.diag(d + 2 / g.h**2) - np.diag(np.full(g.n_interior - 1, 1 / g.h**2), 1)
             - np.diag(np.full(g.n_interior - 1, 1 / g.h**2), -1))
        oracle = linalg.lu_solve(linalg.lu_factor(A), rhs)
        x = solve_shifted_laplacian(g, d, rhs)
        worst = max(worst, float(np.max(np.abs(x - oracle)) / max(1.0, np.max(np.abs(oracle)))))
    _report(request, 11, "oracle equivalences",
            f"lambda1 rel err {lam_err:.2e}, c_s(2) rel err {c_err:.2e}, "
            f"dense solve gap {worst:.1e}")
    assert lam_err <= 1e-3
    assert c_err <= 5e-3
    assert worst <= 1e-10


REFERENCE_DOC = """{
  "name": "reference",
  "physics": {"rho": 1, "p": 4, "b": 1, "mu1": 1, "mu2": 0.25, "tau": 0.5},
  "kernel": {"family": "exponential", "a": 0.5, "beta": 1},
  "grid": {"n_cells": 200},
  "time": {"t_final": 50},
  "initial": {"u0": {"kind": "sine", "amplitude": 0.1}}%s
}"""


def test_12_determinism(request, tmp_path):
    exp = parse_config(REFERENCE_DOC % "")
    run_experiment(exp, tmp_path / "a")
    run_experiment(exp, tmp_path / "b")
    same = (tmp_path / "a/run_000.csv").read_bytes() == (tmp_path / "b/run_000.csv").read_bytes()

    sweep = parse_config(REFERENCE_DOC % ',\n  "sweep": {"mu2": [0.0, 0.25, 0.5, 0.9]}')
    sweep = type(sweep)(**{**sweep.__dict__, "base": sweep.base.with_updates(t_final=10.0)})
    run_experiment(sweep, tmp_path / "seq", jobs=1)
    sweep_parallel(sweep, tmp_path / "par", jobs=4)
    names = [f"run_{i:03d}.csv" for i in range(4)]
    par_same = all((tmp_path / "seq" / n).read_bytes() == (tmp_path / "par" / n).read_bytes()
                   for n in names)
    _report(request, 12, "determinism",
            f"repeat invocation identical={same}, 4-point parallel == sequential={par_same}")
    assert same and par_same
