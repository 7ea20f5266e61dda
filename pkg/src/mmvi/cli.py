"""Command line: ``mmvi run|converge|energy <config.json> [--field value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields

from .harness import (
    ConfigError,
    ExperimentConfig,
    convergence_study,
    energy_study,
    fitted_slope,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_OVERRIDABLE = [f for f in fields(ExperimentConfig) if f.name not in ("newton",)]


def _parser():
    p = argparse.ArgumentParser(prog="mmvi", description="Moving-mesh variational integrators for 1+1 field theories")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "integrate one configuration"),
        ("converge", "L-infinity convergence study over N"),
        ("energy", "discrete energy study"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", nargs="?", help="flat JSON file with ExperimentConfig fields")
        for f in _OVERRIDABLE:
            typ = {"int": int, "float": float, "bool": _bool}.get(str(f.type), str)
            sp.add_argument(f"--{f.name}", type=typ, default=None)
        sp.add_argument("--tol_residual", type=float, default=None)
        sp.add_argument("--max_iters", type=int, default=None)
        if name == "converge":
            sp.add_argument("--Ns", required=True, help="comma-separated list, e.g. 15,31,63")
            sp.add_argument("--workers", type=int, default=1)
    return p


def _bool(text):
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def build_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        data = ExperimentConfig.from_json_file(args.config).to_json()
    for f in _OVERRIDABLE:
        val = getattr(args, f.name)
        if val is not None:
            data[f.name] = val
    newton = dict(data.get("newton", {}))
    if args.tol_residual is not None:
        newton["tol_residual"] = args.tol_residual
    if args.max_iters is not None:
        newton["max_iters"] = args.max_iters
    if newton:
        data["newton"] = newton
    return ExperimentConfig.from_mapping(data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = build_config(args)
        if args.command == "converge":
            Ns = [int(n) for n in args.Ns.split(",") if n.strip()]
            if not Ns:
                raise ConfigError("--Ns needs at least one value")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        traj = run_experiment(cfg)
        print(json.dumps({k: traj.meta[k] for k in ("termination", "failed_step", "steps_completed")}))
        return EXIT_OK if traj.termination == "completed" else EXIT_NUMERICAL
    if args.command == "energy":
        _, summary = energy_study(cfg)
        print(json.dumps(asdict(summary)))
        return EXIT_OK if summary.termination == "completed" else EXIT_NUMERICAL
    rows = convergence_study(cfg, Ns, workers=args.workers)
    for r in rows:
        print(f"N={r['N']:4d}  err={r['linf_error']:.6e}  slope={r['slope']:.3f}  {r['termination']}")
    print(f"fitted slope (largest three N): {fitted_slope(rows):.3f}")
    return EXIT_OK if all(r["termination"] == "completed" for r in rows) else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
