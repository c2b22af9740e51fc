"""Experiment configs, single runs, sweeps and their on-disk outputs."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnostics as diag
from .errors import (CalibrationFailure, CertificationFailure, ConfigParseError,
                     ConfigValidationError, InvalidWindow, SelectionFailure, ViscolabError)
from .fitting import calibrate_envelope, fit_exponential, fit_power
from .grid import grid_spectrum
from .kernel import Kernel, certify_h1, load_tabulated_csv
from .stepper import PhysParams, SimConfig, init_sim, omega, run, select_xi

__all__ = [
    "SCHEMA_VERSION",
    "OUT_ENV",
    "CONFIG_SCHEMA",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "default_out_dir",
    "well_exponents",
    "certify_kernel",
    "setup_well",
    "run_point",
    "run_experiment",
    "sweep_parallel",
    "records_to_csv",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
OUT_ENV = "VISCOLAB_OUT"
SWEEP_AXES = ("mu2", "tau", "b", "a", "beta", "q")
CHECKS = ("dissipation", "well", "lp_bound", "i4", "envelope", "constants")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_field = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["zero", "constant", "sine"]},
        "value": _num,
        "amplitude": _num,
        "mode": {"type": "integer", "minimum": 1},
    },
    "required": ["kind"],
}
_history = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["zero", "constant", "modulated_sine"]},
        "value": _num,
        "amplitude": _num,
        "mode": {"type": "integer", "minimum": 1},
        "frequency": _num,
    },
    "required": ["kind"],
}
_axis = {"type": "array", "items": _num, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["physics", "kernel"],
    "properties": {
        "name": {"type": "string"},
        "physics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho": _num, "p": _num, "b": _num, "mu1": _num, "mu2": _num,
                "tau": _num, "xi": {"type": ["number", "null"]},
            },
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["exponential", "power", "tabulated"]},
                "a": _num, "beta": _num, "q": _num,
                "path": {"type": "string"},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"length": _pos, "n_cells": {"type": "integer", "minimum": 2}},
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "t_final": _pos,
                "cadence": {"type": "integer", "minimum": 1},
                "conv_mode": {"enum": ["auto", "direct", "fast"]},
                "blowup_ceiling": _pos,
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"u0": _field, "u1": _field, "f0": _history},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {**{k: _axis for k in SWEEP_AXES},
                           "cap": {"type": "integer", "minimum": 1}},
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t1": {"type": ["number", "null"], "minimum": 0},
                "tail_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **{k: {"type": "boolean"} for k in CHECKS},
                "tol_E": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "auto"}]},
                "well_tol": {"type": "number", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A base simulation plus sweep axes, fit window and check switches."""

    base: SimConfig
    name: str = "experiment"
    sweep: dict = field(default_factory=dict)
    sweep_cap: int = 256
    fit_t1: float | None = None
    tail_fraction: float = 0.5
    checks: dict = field(default_factory=lambda: {k: True for k in CHECKS})
    tol_E: float | str = "auto"
    well_tol: float = 1e-6
    out_dir: str | None = None
    source: dict = field(default_factory=dict, compare=False)

    def points(self) -> list[tuple[dict, SimConfig]]:
        """The sweep cross product, in axis order, each as ``(label, SimConfig)``."""
        axes = [(k, self.sweep[k]) for k in SWEEP_AXES if k in self.sweep]
        out = []
        for values in itertools.product(*(v for _, v in axes)):
            label = {k: float(x) for (k, _), x in zip(axes, values)}
            out.append((label, _apply(self.base, label)))
        return out


def _apply(base: SimConfig, label: dict) -> SimConfig:
    phys = {k: label[k] for k in ("mu2", "tau", "b") if k in label}
    kparams = {k: label[k] for k in ("a", "beta", "q") if k in label}
    cfg = base
    if phys:
        cfg = replace(cfg, phys=replace(cfg.phys, **phys))
    if kparams:
        k = cfg.kernel
        if k.family == "tabulated":
            raise ConfigValidationError("kernel parameters cannot be swept for a tabulated kernel")
        allowed = {"exponential": {"a", "beta"}, "power": {"a", "q"}}[k.family]
        extra = set(kparams) - allowed
        if extra:
            raise ConfigValidationError(
                f"sweep axis {sorted(extra)} does not apply to a {k.family} kernel")
        cfg = replace(cfg, kernel=Kernel(k.family, {**k.params, **kparams}))
    return cfg


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        parts += extra[:1]
    return "/".join(parts) or "<root>"


def _build_kernel(spec: dict, base_dir: Path) -> Kernel:
    fam = spec["family"]
    if fam == "tabulated":
        if "path" not in spec:
            raise ConfigValidationError("tabulated kernel needs 'path'")
        return load_tabulated_csv(base_dir / spec["path"])
    need = {"exponential": ("a", "beta"), "power": ("a", "q")}[fam]
    missing = [k for k in need if k not in spec]
    if missing:
        raise ConfigValidationError(f"{fam} kernel needs {', '.join(missing)}")
    extra = set(spec) - set(need) - {"family"}
    if extra:
        raise ConfigValidationError(f"{fam} kernel does not take {sorted(extra)}")
    return Kernel(fam, {k: float(spec[k]) for k in need})


def _validate_point(cfg: SimConfig) -> None:
    k = cfg.kernel
    if k.family != "tabulated":
        mass = k.tail(0.0)
        if not mass < 1.0:
            raise ConfigValidationError(
                f"kernel mass int_0^inf g = {mass:.6g} must be < 1 (l = 1 - mass > 0)")


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    """Parse and validate a JSON experiment config.

    Schema violations raise :class:`ConfigParseError` carrying the offending
    path; physically inadmissible values raise :class:`ConfigValidationError`.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigParseError(err.message, _error_path(err))

    ph = doc["physics"] if "physics" in doc else {}
    try:
        phys = PhysParams(**ph)
    except ValueError as exc:
        raise ConfigValidationError(str(exc)) from exc
    try:
        kernel = _build_kernel(doc["kernel"], Path(base_dir))
        g = doc.get("grid", {})
        tm = doc.get("time", {})
        ini = doc.get("initial", {})
        base = SimConfig(
            phys, kernel,
            length=float(g.get("length", 1.0)),
            n_cells=int(g.get("n_cells", 200)),
            dt=tm.get("dt"),
            t_final=float(tm.get("t_final", 10.0)),
            u0=ini.get("u0", {"kind": "zero"}),
            u1=ini.get("u1", {"kind": "zero"}),
            f0=ini.get("f0", {"kind": "zero"}),
            cadence=int(tm.get("cadence", 10)),
            conv_mode=tm.get("conv_mode", "auto"),
            blowup_ceiling=float(tm.get("blowup_ceiling", 1e8)),
        )
    except ConfigValidationError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigValidationError(str(exc)) from exc

    sweep = {k: list(v) for k, v in doc.get("sweep", {}).items() if k != "cap"}
    cap = int(doc.get("sweep", {}).get("cap", 256))
    size = math.prod(len(v) for v in sweep.values()) if sweep else 1
    if size > cap:
        raise ConfigValidationError(f"sweep has {size} points, above the cap of {cap}")
    checks_doc = doc.get("checks", {})
    exp = ExperimentConfig(
        base=base,
        name=doc.get("name", "experiment"),
        sweep=sweep,
        sweep_cap=cap,
        fit_t1=doc.get("fit", {}).get("t1"),
        tail_fraction=float(doc.get("fit", {}).get("tail_fraction", 0.5)),
        checks={k: bool(checks_doc.get(k, True)) for k in CHECKS},
        tol_E=checks_doc.get("tol_E", "auto"),
        well_tol=float(checks_doc.get("well_tol", 1e-6)),
        out_dir=doc.get("output", {}).get("dir"),
        source=doc,
    )
    # every sweep point must be a valid physical configuration
    try:
        points = exp.points()
    except (ValueError, TypeError) as exc:
        raise ConfigValidationError(str(exc)) from exc
    for _, cfg in points:
        _validate_point(cfg)
    return exp


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config: {exc}", str(path)) from exc
    return parse_config(text, base_dir=path.parent)


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "viscolab-out"))


# -- per-run pipeline ---------------------------------------------------------------

def well_exponents(phys: PhysParams) -> tuple:
    """Lebesgue exponents whose embedding constants the analysis needs."""
    return (phys.p, 2.0 * (phys.p - 1.0), 2.0 * (phys.rho + 1.0))


def certify_kernel(cfg: SimConfig):
    return certify_h1(cfg.kernel)


def setup_well(cfg: SimConfig, cert=None, spectrum=None):
    """Well report from the initial data alone; returns ``(well, cert, spectrum)``."""
    cert = certify_h1(cfg.kernel) if cert is None else cert
    if spectrum is None:
        spectrum = grid_spectrum(cfg.grid, well_exponents(cfg.phys))
    rec0 = diag.energy(init_sim(cfg), cfg)
    well = diag.well_report(cfg.phys, cert, spectrum.c_s(cfg.phys.p), rec0.E, rec0.grad_u_sq)
    return well, cert, spectrum


def _echo(cfg: SimConfig) -> dict:
    ph = cfg.phys
    return {
        "physics": {"rho": ph.rho, "p": ph.p, "b": ph.b, "mu1": ph.mu1, "mu2": ph.mu2,
                    "tau": ph.tau, "xi": ph.xi},
        "kernel": cfg.kernel.describe(),
        "grid": {"length": cfg.length, "n_cells": cfg.n_cells},
        "time": {"dt": cfg.time_step, "t_final": cfg.t_final, "n_steps": cfg.n_steps,
                 "cadence": cfg.cadence, "conv_mode": cfg.resolved_conv_mode},
        "initial": {"u0": cfg.u0, "u1": cfg.u1, "f0": cfg.f0},
    }


def _check(enabled: bool, passed: bool, **details) -> dict:
    return {"enabled": enabled, "passed": bool(passed), **details}


def _decay(records, cert, t1, tail_fraction) -> dict:
    t = np.array([r.t for r in records])
    E = np.array([r.E for r in records])
    mask = t >= t1
    if mask.sum() < 2:
        return {"passed": False, "error": f"fewer than two samples after t1={t1}"}
    if np.all(E[mask] == 0.0):
        return {"passed": True, "trivial": True, "note": "energy identically zero"}
    try:
        rep = calibrate_envelope(t, E, cert, t1)
    except (CalibrationFailure, InvalidWindow) as exc:
        return {"passed": False, "error": str(exc)}
    out = rep.as_dict()
    T = float(t[-1])
    window = (T - tail_fraction * (T - t1), T)
    try:
        if rep.regime == "linear-G":
            fit = fit_exponential(t, E, window, zeta=cert.zeta, t1=t1)
            out["tail_fit"] = {"model": "exponential", "window": list(window),
                               "k1": fit.k1, "k2": fit.k2, "r2": fit.r2}
        else:
            fit = fit_power(t, E, window, t1=t1)
            out["tail_fit"] = {"model": "power", "window": list(window),
                               "C": fit.C, "q": fit.q, "r2": fit.r2}
    except InvalidWindow as exc:
        out["tail_fit"] = {"error": str(exc)}
    return out


def run_point(cfg: SimConfig, exp: ExperimentConfig | None = None) -> tuple[dict, str]:
    """Full pipeline for one configuration: returns ``(report, csv_text)``.

    Failures inside the pipeline are recorded in the report instead of raised.
    """
    exp = exp if exp is not None else ExperimentConfig(base=cfg)
    on = exp.checks
    report = {"config": _echo(cfg), "events": [], "checks": {}}
    checks = report["checks"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            report["config"]["physics"]["xi"] = select_xi(cfg.phys)
            cert = certify_h1(cfg.kernel)
        except (CertificationFailure, ViscolabError, ValueError) as exc:
            report["error"] = f"{type(exc).__name__}: {exc}"
            report["passed"] = False
            return report, records_to_csv([])
        report["kernel_certificate"] = cert.summary()
        well, cert, spectrum = setup_well(cfg, cert)
        report["well"] = well.as_dict()
        try:
            consts = diag.select_constants(cfg.phys, cert, well, spectrum, cfg.grid)
            report["constants"] = consts.as_dict()
            report["constants"]["ledger"] = diag.ledger_inequalities(consts, cfg.phys)
            checks["constants"] = _check(on["constants"], True)
        except SelectionFailure as exc:
            consts = None
            report["constants"] = {"error": str(exc), "constant": exc.constant}
            checks["constants"] = _check(on["constants"], False, error=str(exc))

        try:
            result = run(cfg, consts)
        except ViscolabError as exc:
            report["error"] = f"{type(exc).__name__}: {exc}"
            report["passed"] = False
            return report, records_to_csv([])
        records = result.records
        report["events"].extend(result.events)
    report["events"].extend({"event": "warning", "message": str(w.message)} for w in caught)

    blew_up = result.blew_up
    om = omega(cfg.phys, select_xi(cfg.phys))
    tol_E = diag.balance_defect(records) if exp.tol_E == "auto" else float(exp.tol_E)
    dis = diag.dissipation_check(records, om, tol_E)
    checks["dissipation"] = _check(
        on["dissipation"], dis.passed and not blew_up, omega=om, tol_E=tol_E,
        n_intervals=dis.n_intervals, violations=dis.violations,
        worst_margin=dis.worst_margin, worst_time=dis.worst_time,
        trivial=all(r.E == 0.0 for r in records))

    ratio, ok = diag.well_invariance(records, well, exp.well_tol)
    checks["well"] = _check(on["well"], ok and well.admissible, admissible=well.admissible,
                            max_ratio=ratio)
    lem = diag.lp_energy_bounds(records, well, cfg.phys.b, cfg.phys.p, exp.well_tol)
    checks["lp_bound"] = _check(on["lp_bound"],
                              lem["u_p_bound_holds"] and lem["positive_part_bound_holds"], **lem)
    margins = diag.i4_inequality_margins(records, cert.l)
    checks["i4"] = _check(on["i4"], bool(np.all(margins >= -tol_E)),
                          min_margin=float(margins.min()), tol=tol_E)
    if consts is not None:
        b1, b2, undefined = diag.equivalence_bounds(records, consts)
        report["constants"]["equivalence"] = {"beta1": b1, "beta2": b2,
                                              "undefined_times": len(undefined)}

    t1 = cert.t1 if exp.fit_t1 is None else float(exp.fit_t1)
    decay = _decay(records, cert, t1, exp.tail_fraction)
    report["decay"] = decay
    checks["envelope"] = _check(on["envelope"], decay["passed"] and not blew_up)
    report["diagnostics"] = {"n_records": len(records),
                             "balance_defect": diag.balance_defect(records),
                             "E0": records[0].E, "E_final": records[-1].E,
                             "t_final": records[-1].t}
    report["passed"] = all(c["passed"] for c in checks.values() if c["enabled"])
    return report, records_to_csv(records)


def records_to_csv(records) -> str:
    """CSV text with round-trip float formatting and LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(diag.CSV_COLUMNS)
    for r in records:
        writer.writerow([repr(float(x)) for x in r.csv_row()])
    return buf.getvalue()


def _execute(args):
    index, label, cfg, exp = args
    report, text = run_point(cfg, exp)
    return index, label, report, text


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def run_experiment(exp: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run every sweep point, write ``run_NNN.csv`` files and ``report.json``.

    Returns the report dictionary; ``report["passed"]`` is the exit contract.
    """
    out = Path(out_dir or exp.out_dir or default_out_dir())
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    tasks = [(i, label, cfg, exp) for i, (label, cfg) in enumerate(exp.points())]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_execute, tasks))
    else:
        results = [_execute(t) for t in tasks]

    runs = []
    for index, label, report, text in sorted(results, key=lambda r: r[0]):
        name = f"run_{index:03d}.csv"
        _write(out / name, text)
        runs.append({"index": index, "sweep": label, "csv": name, **report})
    full = {
        "schema_version": SCHEMA_VERSION,
        "name": exp.name,
        "n_runs": len(runs),
        "n_passed": sum(r["passed"] for r in runs),
        "passed": all(r["passed"] for r in runs),
        "runs": runs,
    }
    _write(out / "report.json", json.dumps(full, indent=2, default=_json_default) + "\n")
    log.info("wrote %d run(s) to %s", len(runs), out)
    return full


def sweep_parallel(exp: ExperimentConfig, out_dir=None, jobs: int | None = None) -> dict:
    """Same as :func:`run_experiment` with the sweep points spread over processes."""
    return run_experiment(exp, out_dir, jobs or os.cpu_count() or 1)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
