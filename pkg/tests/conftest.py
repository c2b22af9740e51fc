import numpy as np
import pytest

from viscolab.kernel import Kernel
from viscolab.stepper import PhysParams, SimConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def reference_phys(**kw) -> PhysParams:
    base = dict(rho=1.0, p=4.0, b=1.0, mu1=1.0, mu2=0.25, tau=0.5)
    base.update(kw)
    return PhysParams(**base)


def reference_config(t_final=50.0, kernel=None, **kw) -> SimConfig:
    kernel = Kernel.exponential(0.5, 1.0) if kernel is None else kernel
    phys = kw.pop("phys", reference_phys())
    kw.setdefault("u0", {"kind": "sine", "amplitude": 0.1})
    return SimConfig(phys, kernel, length=1.0, n_cells=kw.pop("n_cells", 200), t_final=t_final,
                     **kw)


# -- acceptance summary: one PASS/FAIL line per criterion --------------------------

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        _ACCEPTANCE.append((props.get("criterion", report.nodeid), report.outcome,
                            props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(_ACCEPTANCE):
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark} {name}: {detail}".rstrip(": "))
