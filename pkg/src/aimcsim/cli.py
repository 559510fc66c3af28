# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
aimcsim command line.

Examples:
  python -m aimcsim run --strategy pipelining --trace trace.jsonl --plan-out plan.json
  python -m aimcsim run --config wireless.yaml --strategy data_parallel --out report.json
  python -m aimcsim sweep --clusters 1,2,4,8,16 --out sweep.csv --jobs 4
  python -m aimcsim sweep --clusters 4 --variant wired:128:9 --variant wireless:256:1:bcast
  python -m aimcsim reproduce-fig4 --out fig4
  python -m aimcsim validate-config --config my_system.yaml --layers layers.txt

Exit codes: 0 on success, 1 for invalid configurations or model errors,
2 for I/O errors.
"""

import argparse
import logging
import pathlib
import sys

from typing import List, Optional, Tuple

from aimcsim.arch_config import (
    ArchConfig,
    InterconnectKind,
    default_config_path,
    load_config,
    require_valid,
    with_clusters,
)
from aimcsim.errors import AimcSimError, ConfigError
from aimcsim.harness import (
    FIGURE_CLUSTERS,
    FIGURE_VARIANTS,
    InterconnectVariant,
    SweepSpec,
    describe_layers,
    reports_to_csv,
    reproduce_figure4,
    run_once,
    run_sweep,
)
from aimcsim.logger import package_logger
from aimcsim.system import RunOptions
from aimcsim.workload import DEFAULT_BENCHMARK_PIXELS, Strategy, load_layer_table

EXIT_OK = 0
EXIT_MODEL_ERROR = 1
EXIT_IO_ERROR = 2
CONFIG_VARIANT = "config"


def setup_logging(verbose: bool) -> None:
    """Log to standard error so reports on standard output stay machine readable"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    if verbose:
        package_logger.setLevel(logging.DEBUG)


def _cluster_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{text}'") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one cluster count")
    return values


def _variant(text: str) -> Optional[InterconnectVariant]:
    """``kind:bandwidth:latency[:bcast]``, or ``config`` for the interconnect of --config."""
    if text == CONFIG_VARIANT:
        return None
    parts = text.split(":")
    if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "bcast"):
        raise argparse.ArgumentTypeError(f"expected kind:bandwidth:latency[:bcast] or '{CONFIG_VARIANT}', got '{text}'")
    try:
        return InterconnectVariant(InterconnectKind(parts[0]), int(parts[1]), int(parts[2]), len(parts) == 4)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid interconnect variant '{text}'") from None


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        dest="config",
        type=pathlib.Path,
        default=default_config_path(),
        help="Hardware description (YAML), defaults to the bundled evaluated system",
    )
    parser.add_argument("--verbose", "-v", dest="verbose", action="store_true", help="Debug logging")
    parser.add_argument(
        "--seedless",
        dest="seedless",
        nargs="?",
        const=True,
        default=False,
        help="Accepted for compatibility; every run is deterministic, so the flag takes no value",
    )


def _run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--iterations",
        dest="iterations",
        type=int,
        default=DEFAULT_BENCHMARK_PIXELS,
        help="Output pixels of the bundled benchmarks",
    )
    parser.add_argument("--warmup", dest="warmup", type=int, help="Iterations excluded from the measured window")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aimcsim",
        description="Cycle-approximate simulator of many-cluster analog in-memory computing systems",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Simulate one configuration")
    _common(run)
    _run_options(run)
    run.add_argument("--layers", dest="layers", type=pathlib.Path, help="Layer table, bundled benchmark if omitted")
    run.add_argument(
        "--strategy", dest="strategy", type=Strategy, choices=list(Strategy), default=Strategy.PIPELINING
    )
    run.add_argument("--clusters", dest="clusters", type=int, help="Override n_clusters of the configuration")
    run.add_argument("--trace", dest="trace", type=pathlib.Path, help="Write the timeline as JSON lines")
    run.add_argument("--out", dest="out", type=pathlib.Path, help="Write the report (.json or .csv)")
    run.add_argument("--plan-out", dest="plan_out", type=pathlib.Path, help="Write the mapping plan as JSON")

    sweep = commands.add_parser("sweep", help="Run a cartesian sweep and emit CSV")
    _common(sweep)
    _run_options(sweep)
    sweep.add_argument("--layers", dest="layers", type=pathlib.Path, help="Layer table, bundled benchmark if omitted")
    sweep.add_argument(
        "--clusters", dest="clusters", type=_cluster_list, default=list(FIGURE_CLUSTERS), help="e.g. 1,2,4,8,16"
    )
    sweep.add_argument(
        "--strategy",
        dest="strategies",
        type=Strategy,
        choices=list(Strategy),
        action="append",
        help="Repeat for several strategies, both when omitted",
    )
    sweep.add_argument(
        "--variant",
        dest="variants",
        type=_variant,
        action="append",
        help="Interconnect kind:bandwidth:latency[:bcast] or 'config', repeatable; "
        "the four figure variants when omitted",
    )
    sweep.add_argument("--out", dest="out", type=pathlib.Path, help="CSV output, standard output if omitted")
    sweep.add_argument("--jobs", dest="jobs", type=int, default=1, help="Worker processes")
    sweep.add_argument("--cap", dest="cap", type=int, default=1024, help="Maximum number of sweep points")

    figure = commands.add_parser("reproduce-fig4", help="Efficiency and speedup reproduction for 1..16 clusters")
    _common(figure)
    _run_options(figure)
    figure.add_argument("--out", dest="out", type=pathlib.Path, default=pathlib.Path("fig4"), help="Output folder")
    figure.add_argument("--jobs", dest="jobs", type=int, default=1, help="Worker processes")

    check = commands.add_parser("validate-config", help="Check a hardware description")
    _common(check)
    check.add_argument(
        "--layers", dest="layers", type=pathlib.Path, help="Also report crossbars and stage times of a layer table"
    )
    return parser


def _options(args: argparse.Namespace) -> RunOptions:
    return RunOptions(iterations=args.iterations, warmup=args.warmup)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.clusters is not None:
        cfg = with_clusters(cfg, args.clusters)
    layers = load_layer_table(args.layers) if args.layers else None
    report = run_once(cfg, args.strategy, layers, _options(args), args.trace, args.plan_out)
    if args.out is not None:
        if args.out.suffix == ".csv":
            args.out.write_text(reports_to_csv([report]), encoding="utf-8")
        else:
            args.out.write_text(report.to_json() + "\n", encoding="utf-8")
        package_logger.info(f"Wrote {args.out}")
    print(report.to_json())
    return EXIT_OK


def _sweep_variants(
    requested: Optional[List[Optional[InterconnectVariant]]], cfg: ArchConfig
) -> Tuple[InterconnectVariant, ...]:
    if not requested:
        package_logger.info(f"Sweeping the figure interconnect variants instead of {cfg.interconnect.label}")
        return FIGURE_VARIANTS
    link = cfg.interconnect
    own = InterconnectVariant(link.kind, link.bandwidth_bits_per_cycle, link.latency_cycles, link.broadcast_enabled)
    return tuple(own if variant is None else variant for variant in requested)


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    layers = tuple(load_layer_table(args.layers)) if args.layers else None
    spec = SweepSpec(
        n_clusters=tuple(args.clusters),
        variants=_sweep_variants(args.variants, cfg),
        strategies=tuple(args.strategies or (Strategy.PIPELINING, Strategy.DATA_PARALLEL)),
        layers=layers,
        out=args.out,
        cap=args.cap,
        jobs=args.jobs,
    )
    text = run_sweep(spec, cfg, _options(args))
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_figure(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    summary = reproduce_figure4(cfg, _options(args), args.out, args.jobs)
    sys.stdout.write(summary.to_text())
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    arch = require_valid(load_config(args.config))
    print(
        f"ok: {arch.n_clusters} clusters, {arch.interconnect.label}, "
        f"{arch.ima.rows}x{arch.ima.cols} IMA, eval {arch.eval_cycles} cycles"
    )
    if args.layers is not None:
        sys.stdout.write(describe_layers(arch.config, load_layer_table(args.layers)).to_text())
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "reproduce-fig4": _cmd_figure,
    "validate-config": _cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    if args.seedless is not True and args.seedless is not False:
        package_logger.error(f"--seedless takes no value, got '{args.seedless}'")
        return EXIT_MODEL_ERROR

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        package_logger.error("Invalid configuration:")
        for violation in e.violations:
            package_logger.error(f"  {violation}")
        return EXIT_MODEL_ERROR
    except AimcSimError as e:
        package_logger.error(f"{type(e).__name__}: {e}")
        return EXIT_MODEL_ERROR
    except OSError as e:
        package_logger.error(f"I/O error: {e}")
        return EXIT_IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
