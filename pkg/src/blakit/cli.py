"""Command-line front end.

Subcommands compose the experiment pipeline stages; every stage is a pure
function of (config, seed), so stages may be re-run or split across
invocations and still agree byte for byte.

Exit codes: 0 success, 2 configuration error, 3 simulation instability,
4 tolerance failure.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from .estimator import write_record_bundle
from .experiment import (
    compare_reports,
    estimate_from_bundle,
    hammerstein_demo_config,
    hammerstein_demo_system,
    read_experiment_config,
    run_closed_loop_records,
    run_experiment,
    run_open_loop_records,
    write_experiment_config,
    write_generated_signals,
)
from .systems import ConfigurationError, InstabilityError, write_system_file

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INSTABILITY = 3
EXIT_TOLERANCE = 4


def _add_common(sub: argparse.ArgumentParser, config_required: bool = True) -> None:
    sub.add_argument("--config", type=pathlib.Path, required=config_required,
                     help="experiment configuration file")
    sub.add_argument("--seed", type=int, default=None,
                     help="master seed override (unsigned 64-bit)")
    sub.add_argument("--workers", type=int, default=1,
                     help="parallel workers over realizations (default 1)")
    sub.add_argument("--out", type=pathlib.Path, default=pathlib.Path("."),
                     help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blakit",
        description="Multisine experiments: simulate nonlinear systems with "
                    "process noise and estimate their best linear approximation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("generate", help="write the excitation signals"))
    _add_common(sub.add_parser("simulate", help="simulate and write the record bundle"))
    _add_common(sub.add_parser(
        "estimate", help="estimate from an existing record bundle"))
    _add_common(sub.add_parser(
        "decompose", help="run the full experiment including output decomposition"))

    comp = sub.add_parser("compare", help="compare two result bundles")
    comp.add_argument("bundle_a", type=pathlib.Path)
    comp.add_argument("bundle_b", type=pathlib.Path)
    comp.add_argument("--g-rel-tol", type=float, default=None,
                      help="max allowed relative response difference")
    comp.add_argument("--var-ratio-tol", type=float, default=None,
                      help="max allowed deviation of the total-variance ratio from 1")

    demo = sub.add_parser(
        "demo-hammerstein",
        help="run the canonical cubic Hammerstein experiment end to end")
    _add_common(demo, config_required=False)
    demo.add_argument("--realizations", type=int, default=10)
    demo.add_argument("--periods", type=int, default=2)
    demo.add_argument("--samples-per-period", type=int, default=4096)

    return parser


def _load_config(args):
    config = read_experiment_config(args.config)
    if args.seed is not None:
        config = type(config)(**{**config.__dict__, "master_seed": args.seed})
    return config


def _cmd_generate(args) -> int:
    written = write_generated_signals(_load_config(args), args.out)
    print(f"wrote {len(written)} signal files under {args.out / 'signals'}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    if config.loop == "open":
        record, _ = run_open_loop_records(config, workers=args.workers)
    else:
        record, _ = run_closed_loop_records(config, workers=args.workers)
    write_record_bundle(args.out / "records", record)
    print(f"wrote record bundle ({record.realization_count} realizations, "
          f"{record.period_count} periods) under {args.out / 'records'}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    config = _load_config(args)
    report = estimate_from_bundle(config, args.out)
    print(json.dumps(report.summary["analytic_comparison"], indent=2, sort_keys=True))
    return EXIT_OK if report.tolerance_ok else EXIT_TOLERANCE


def _cmd_decompose(args) -> int:
    config = _load_config(args)
    if not config.decompose:
        config = type(config)(**{**config.__dict__, "decompose": True})
    report = run_experiment(config, args.out, workers=args.workers)
    print(json.dumps(report.summary["decomposition"], indent=2, sort_keys=True))
    return EXIT_OK if report.tolerance_ok else EXIT_TOLERANCE


def _cmd_compare(args) -> int:
    summary, ok = compare_reports(args.bundle_a, args.bundle_b,
                                  g_rel_tol=args.g_rel_tol,
                                  var_ratio_tol=args.var_ratio_tol)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if ok else EXIT_TOLERANCE


def _cmd_demo(args) -> int:
    if args.config is not None:
        config = _load_config(args)
    else:
        config = hammerstein_demo_config(
            realizations=args.realizations,
            periods=args.periods,
            samples_per_period=args.samples_per_period,
            master_seed=args.seed if args.seed is not None else 0,
        )
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_system_file(out / "system.ini", hammerstein_demo_system())
    write_experiment_config(out / "config.ini", config, system_file="system.ini")
    report = run_experiment(config, out, workers=args.workers)
    comparison = report.summary["analytic_comparison"]
    print(json.dumps({
        "fraction_in_band": comparison.get("fraction_in_band"),
        "band_sigma": comparison.get("band_sigma"),
        "pass": report.tolerance_ok,
        "out": str(out),
    }, indent=2, sort_keys=True))
    return EXIT_OK if report.tolerance_ok else EXIT_TOLERANCE


_COMMANDS = {
    "generate": _cmd_generate,
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "decompose": _cmd_decompose,
    "compare": _cmd_compare,
    "demo-hammerstein": _cmd_demo,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(json.dumps({"error": "configuration", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG
    except InstabilityError as exc:
        print(json.dumps({"error": "instability", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_INSTABILITY


if __name__ == "__main__":
    raise SystemExit(main())
