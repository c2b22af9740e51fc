"""Command line interface: ``viscolab {run,certify-kernel,well-report} CONFIG``."""

from __future__ import annotations

import argparse
import filecmp
import json
import logging
import sys
import tempfile
from pathlib import Path

from .errors import CertificationFailure, ConfigParseError, ConfigValidationError
from .runner import (OUT_ENV, default_out_dir, load_config, run_experiment, setup_well,
                     _json_default)

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, default=_json_default))


def _cmd_run(args) -> int:
    exp = load_config(args.config)
    out = Path(args.out) if args.out else None
    report = run_experiment(exp, out, jobs=args.jobs)
    out = out or Path(exp.out_dir or default_out_dir())
    status = EXIT_OK if report["passed"] else EXIT_CHECKS_FAILED
    for r in report["runs"]:
        failed = [k for k, c in r.get("checks", {}).items() if c["enabled"] and not c["passed"]]
        mark = "ok" if r["passed"] else "FAILED " + ",".join(failed or ["error"])
        print(f"run {r['index']:03d} {r['sweep'] or ''} {mark}")
    print(f"{report['n_passed']}/{report['n_runs']} runs passed; outputs in {out}")

    if args.seed_check:
        with tempfile.TemporaryDirectory() as tmp:
            run_experiment(exp, tmp, jobs=args.jobs)
            names = [f"run_{r['index']:03d}.csv" for r in report["runs"]]
            _, mismatch, errors = filecmp.cmpfiles(out, tmp, names, shallow=False)
        if mismatch or errors:
            print(f"seed check FAILED: {sorted(mismatch + errors)} differ between invocations")
            status = EXIT_CHECKS_FAILED
        else:
            print("seed check ok: repeated invocation is bit-identical")
    return status


def _cmd_certify(args) -> int:
    exp = load_config(args.config)
    failed = False
    for label, cfg in exp.points():
        try:
            from .kernel import certify_h1

            _dump({"sweep": label, "certificate": certify_h1(cfg.kernel).summary()})
        except CertificationFailure as exc:
            failed = True
            _dump({"sweep": label, "error": str(exc), "integral": exc.integral,
                   "worst_time": exc.worst_time, "worst_violation": exc.worst_violation})
    return EXIT_CHECKS_FAILED if failed else EXIT_OK


def _cmd_well(args) -> int:
    exp = load_config(args.config)
    ok = True
    for label, cfg in exp.points():
        try:
            well, _, _ = setup_well(cfg)
        except CertificationFailure as exc:
            ok = False
            _dump({"sweep": label, "error": str(exc)})
            continue
        ok &= well.admissible
        _dump({"sweep": label, "well": well.as_dict()})
    return EXIT_OK if ok else EXIT_CHECKS_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viscolab",
        description="Delayed viscoelastic wave equation: simulation and decay checks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment (or sweep) and write CSV + JSON")
    p.add_argument("config")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./viscolab-out)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--seed-check", action="store_true",
                   help="run twice and require bit-identical CSV output")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("certify-kernel", help="certify the configured relaxation kernel")
    p.add_argument("config")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("well-report", help="potential-well quantities of the initial data")
    p.add_argument("config")
    p.set_defaults(func=_cmd_well)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigParseError, ConfigValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
