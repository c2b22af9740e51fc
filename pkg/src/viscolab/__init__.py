"""Finite-difference laboratory for a delayed viscoelastic wave equation.

Simulates

    |u_t|^rho u_tt - u_xx - u_xxtt + int_0^t g(t-s) u_xx(s) ds
        + mu1 u_t + mu2 u_t(t - tau) = b |u|^(p-2) u

on a 1D Dirichlet interval and checks the energy identities, potential-well
bounds and decay envelopes that the analysis of this equation predicts.
"""

from .delay import DelayLine, make_delay_line
from .diagnostics import (EnergyRecord, LyapunovConstants, WellReport, dissipation_check,
                          energy, select_constants, well_report)
from .errors import ViscolabError
from .fitting import (DecayReport, calibrate_envelope, fit_exponential, fit_power,
                      verify_envelope)
from .grid import Grid1D, estimate_embedding_constant, estimate_lambda1, make_grid
from .kernel import Kernel, KernelCertificate, c_alpha, certify_h1
from .memory import HistoryBuffer
from .runner import ExperimentConfig, parse_config, run_experiment, sweep_parallel
from .stepper import PhysParams, SimConfig, init_sim, run, step

__version__ = "0.1.0"

__all__ = [
    "DelayLine", "make_delay_line",
    "EnergyRecord", "LyapunovConstants", "WellReport", "dissipation_check", "energy",
    "select_constants", "well_report",
    "ViscolabError",
    "DecayReport", "calibrate_envelope", "fit_exponential", "fit_power", "verify_envelope",
    "Grid1D", "estimate_embedding_constant", "estimate_lambda1", "make_grid",
    "Kernel", "KernelCertificate", "c_alpha", "certify_h1",
    "HistoryBuffer",
    "ExperimentConfig", "parse_config", "run_experiment", "sweep_parallel",
    "PhysParams", "SimConfig", "init_sim", "run", "step",
]
