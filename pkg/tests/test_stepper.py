import numpy as np
import pytest

from viscolab.diagnostics import balance_defect
from viscolab.errors import AlignmentError, BlowUpDetected, InvalidArgument
from viscolab.kernel import Kernel
from viscolab.stepper import (PhysParams, SimConfig, default_dt, init_sim, omega, run, select_xi,
                              step, xi_window)

from conftest import reference_config, reference_phys

EXP = Kernel.exponential(0.5, 1.0)


def test_xi_window_and_midpoint():
    ph = PhysParams(mu1=1.0, mu2=-0.5, tau=2.0)
    assert xi_window(ph) == (1.0, 3.0)
    assert select_xi(ph) == 2.0


def test_omega_formula():
    assert omega(PhysParams(mu1=1.0, mu2=0.5, tau=1.0, xi=1.0)) == pytest.approx(0.25)
    assert omega(reference_phys()) == pytest.approx(0.375)


def test_degenerate_and_empty_windows():
    ph = PhysParams(mu1=1.0, mu2=1.0, tau=0.5)
    assert select_xi(ph) == pytest.approx(0.5)
    assert omega(ph) == 0.0
    with pytest.raises(InvalidArgument):
        select_xi(PhysParams(mu1=1.0, mu2=1.2))
    with pytest.raises(InvalidArgument):
        select_xi(PhysParams(mu1=1.0, mu2=0.5, tau=1.0, xi=2.0))


def test_equal_damping_warns():
    cfg = reference_config(1.0, phys=reference_phys(mu2=1.0), n_cells=20)
    with pytest.warns(UserWarning, match="omega is zero"):
        init_sim(cfg)


@pytest.mark.parametrize("kw", [{"p": 2.0}, {"rho": 0.0}, {"tau": 0.0}, {"b": -1.0}])
def test_phys_validation(kw):
    with pytest.raises(InvalidArgument):
        PhysParams(**kw)


def test_p_message_names_constraint():
    with pytest.raises(InvalidArgument, match="p > 2"):
        PhysParams(p=2.0)


def test_default_dt_aligned():
    dt = default_dt(1 / 200, 0.5)
    assert dt == pytest.approx(0.0025)
    assert (0.5 / dt) == pytest.approx(round(0.5 / dt), abs=1e-9)
    assert default_dt(0.1, 0.07) <= 0.05


def test_init_zero_and_sine():
    zero = init_sim(SimConfig(reference_phys(), EXP, n_cells=20, t_final=1.0))
    assert not zero.u.any() and not zero.v.any() and not zero.delay.by_age().any()
    s = init_sim(reference_config(1.0, n_cells=20))
    np.testing.assert_allclose(s.u, 0.1 * np.sin(np.pi * s.grid.nodes))
    assert s.history.count == 1 and s.t == 0.0


def test_init_misaligned_delay():
    cfg = SimConfig(PhysParams(tau=1.0), EXP, n_cells=20, dt=0.3, t_final=1.0)
    with pytest.raises(AlignmentError):
        init_sim(cfg)


@pytest.mark.parametrize("phys", [reference_phys(), PhysParams(rho=0.5, p=3.0, b=5.0, mu1=2.0,
                                                               mu2=-1.5, tau=0.2)])
def test_zero_state_is_fixed_point(phys):
    for kernel in (EXP, Kernel.power(0.3, 2.5)):
        cfg = SimConfig(phys, kernel, n_cells=20, t_final=0.5)
        res = run(cfg)
        assert not res.state.u.any() and not res.state.v.any()
        assert all(r.E == 0.0 for r in res.records)


def test_single_node_acceleration():
    cfg = SimConfig(PhysParams(rho=1.0, mu1=1.0, mu2=0.0, tau=0.1), EXP, length=1.0, n_cells=2,
                    dt=0.1, t_final=0.1, u1={"kind": "constant", "value": 1.0})
    s = init_sim(cfg)
    step(s)
    a = -1.0 / 9.0
    assert s.v[0] == pytest.approx(1.0 + 0.1 * a, rel=1e-15)
    assert s.u[0] == pytest.approx(0.1 * (1.0 + 0.1 * a), rel=1e-15)
    assert s.t == pytest.approx(0.1)


def test_conservative_energy_error_is_first_order():
    phys = PhysParams(rho=1.0, p=4.0, b=0.0, mu1=0.0, mu2=0.0, tau=0.1)
    drifts = []
    for dt in (0.01, 0.005, 0.0025):
        cfg = SimConfig(phys, Kernel.exponential(1e-8, 1.0), n_cells=50, dt=dt, t_final=2.0,
                        u0={"kind": "sine", "amplitude": 0.5}, cadence=1)
        with pytest.warns(UserWarning, match="omega is zero"):
            E = run(cfg).energies
        drifts.append(np.max(np.abs(E - E[0])))
    assert drifts[0] / drifts[1] >= 1.5 and drifts[1] / drifts[2] >= 1.5


def test_admissible_run_energy_nonincreasing():
    res = run(reference_config(5.0, n_cells=100))
    E = res.energies
    assert not res.events
    tol = balance_defect(res.records)
    assert np.all(np.diff(E) <= tol * np.diff(res.times))


def test_blow_up_outside_well_is_recorded():
    cfg = reference_config(5.0, phys=reference_phys(b=10.0), n_cells=50,
                           u0={"kind": "sine", "amplitude": 2.0})
    res = run(cfg)
    assert res.blew_up
    ev = res.events[0]
    assert ev["event"] == "blow-up-detected" and ev["vmax"] >= 1e8 and 0 < ev["t"] < 5.0
    assert res.records[-1].t < 5.0


def test_step_raises_on_ceiling():
    cfg = reference_config(1.0, n_cells=20).with_updates(blowup_ceiling=1e-6)
    s = init_sim(cfg)
    with pytest.raises(BlowUpDetected):
        for _ in range(10):
            step(s)


def test_runs_are_deterministic():
    cfg = reference_config(2.0, n_cells=60)
    a, b = run(cfg), run(cfg)
    assert [r.csv_row() for r in a.records] == [r.csv_row() for r in b.records]
    assert np.array_equal(a.state.u, b.state.u)


def test_fast_and_direct_runs_agree():
    cfg = reference_config(2.0, n_cells=60)
    fast = run(cfg.with_updates(conv_mode="fast"))
    direct = run(cfg.with_updates(conv_mode="direct"))
    np.testing.assert_allclose(fast.state.u, direct.state.u, atol=1e-12)
    np.testing.assert_allclose(fast.energies, direct.energies, rtol=1e-9, atol=1e-14)


def test_cadence_and_final_record():
    cfg = reference_config(0.1, n_cells=20).with_updates(cadence=7)
    res = run(cfg)
    steps = [round(r.t / cfg.time_step) for r in res.records]
    assert steps[0] == 0 and steps[-1] == cfg.n_steps
    assert all(s % 7 == 0 for s in steps[:-1])


def test_config_validation():
    with pytest.raises(InvalidArgument):
        SimConfig(reference_phys(), EXP, t_final=0.0)
    with pytest.raises(InvalidArgument):
        SimConfig(reference_phys(), EXP, conv_mode="turbo")
    with pytest.raises(InvalidArgument):
        SimConfig(reference_phys(), EXP, cadence=0)
