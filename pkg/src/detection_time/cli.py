"""Command-line entry point: ``detection-time {run,sweep,converge,units}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 invalid reference computation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import RunConfig
from .errors import ConfigError, OracleInvalid, SolverFailure
from .model import RB87_MASS
from .runner import REFINABLE, converge, run, sweep, units_report

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ORACLE = 0, 2, 3, 4


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="detection-time", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="execute one configuration")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides outputs.directory)")

    s = sub.add_parser("sweep", help="run a configuration over several values of one parameter")
    s.add_argument("config")
    s.add_argument("--axis", required=True, choices=["omega", "w", "theta", "kappa"])
    s.add_argument("--values", required=True, type=_floats, help="comma-separated values")
    s.add_argument("-j", "--jobs", type=int, default=1)
    s.add_argument("-o", "--output")

    c = sub.add_parser("converge", help="rerun with refined numerics and report eps_rel of mu*")
    c.add_argument("config")
    c.add_argument("--refine", default="dt", help=f"comma-separated subset of {','.join(REFINABLE)}")
    c.add_argument("-o", "--output")

    u = sub.add_parser("units", help="convert dimensionless values to SI units")
    u.add_argument("--d-phys", type=float, required=True, help="slab width in metres")
    u.add_argument("--mass", type=float, default=RB87_MASS, help="particle mass in kg (default 87Rb)")
    u.add_argument("--times", type=_floats, default=[], help="dimensionless times to convert")
    u.add_argument("--lengths", type=_floats, default=[], help="dimensionless lengths to convert")
    return ap


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")


def _error(kind: str, exc: Exception, code: int) -> int:
    json.dump({"error": kind, "message": str(exc)}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.verb == "units":
            if not args.d_phys > 0 or not args.mass > 0:
                raise ConfigError("--d-phys and --mass must be positive")
            _emit(units_report(args.d_phys, args.mass, args.times, args.lengths))
            return EXIT_OK
        cfg = RunConfig.load(args.config)
        if args.verb == "run":
            res = run(cfg, args.output)
            out = {k: v for k, v in res.summary.items() if k != "config"}
            if "validation_scenario" in out:
                out["label"] = "VALIDATION SCENARIO: " + out["validation_scenario"]
            _emit(out)
        elif args.verb == "sweep":
            _emit(sweep(cfg, args.axis, args.values, args.output, args.jobs))
        else:
            refine = tuple(v.strip() for v in args.refine.split(",") if v.strip())
            _emit(converge(cfg, refine, args.output))
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except SolverFailure as exc:
        return _error("solver", exc, EXIT_SOLVER)
    except OracleInvalid as exc:
        return _error("oracle_invalid", exc, EXIT_ORACLE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
