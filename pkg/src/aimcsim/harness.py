# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Single runs, parameter sweeps and the efficiency/speedup reproduction.
"""

import concurrent.futures
import csv
import io
import pathlib

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from aimcsim.arch_config import ArchConfig, ImaConfig, InterconnectKind, require_valid, with_clusters, with_interconnect
from aimcsim.errors import SweepError
from aimcsim.logger import package_logger
from aimcsim.metrics import (
    CSV_COLUMNS,
    MetricsReport,
    TrafficProfile,
    collect_metrics,
    compute_bound_cycles,
    predicted_speedup_ratios,
)
from aimcsim.system import RunOptions, simulate
from aimcsim.workload import (
    LayerDescriptor,
    StageTiming,
    Strategy,
    benchmark_layers,
    build_plan,
    build_tile_plan,
    ima_job_decompose,
    pipeline_stage_cycles,
    tiles_required,
)

DEFAULT_SWEEP_CAP = 1024
REPORTED_SPEEDUPS = (8.2, 4.1, 2.1)
FIGURE_CLUSTERS = (1, 2, 4, 8, 16)
FLATNESS_CLUSTERS = (2, 4, 8, 16)


@dataclass(frozen=True)
class InterconnectVariant:
    kind: InterconnectKind
    bandwidth_bits_per_cycle: int
    latency_cycles: int
    broadcast_enabled: bool = False

    @property
    def label(self) -> str:
        suffix = "+bcast" if self.broadcast_enabled else ""
        return f"{self.kind.value}-{self.bandwidth_bits_per_cycle}b-{self.latency_cycles}c{suffix}"

    def apply(self, cfg: ArchConfig) -> ArchConfig:
        return with_interconnect(
            cfg,
            kind=self.kind,
            bandwidth_bits_per_cycle=self.bandwidth_bits_per_cycle,
            latency_cycles=self.latency_cycles,
            broadcast_enabled=self.broadcast_enabled,
        )


FIGURE_VARIANTS = (
    InterconnectVariant(InterconnectKind.WIRED, 64, 9),
    InterconnectVariant(InterconnectKind.WIRED, 128, 9),
    InterconnectVariant(InterconnectKind.WIRED, 256, 9),
    InterconnectVariant(InterconnectKind.WIRELESS, 256, 1, True),
)


@dataclass(frozen=True)
class SweepSpec:
    """
    Cartesian product of cluster counts, interconnect variants and strategies.

    :param layers: Layer table to map at every point, None for the bundled benchmarks
    :param jobs: Worker processes, points run in-process when 1
    """

    n_clusters: Tuple[int, ...]
    variants: Tuple[InterconnectVariant, ...]
    strategies: Tuple[Strategy, ...]
    layers: Optional[Tuple[LayerDescriptor, ...]] = None
    out: Optional[pathlib.Path] = None
    cap: int = DEFAULT_SWEEP_CAP
    jobs: int = 1

    def __post_init__(self) -> None:
        for axis in ("n_clusters", "variants", "strategies"):
            if not getattr(self, axis):
                raise SweepError(f"sweep axis {axis} is empty")
        size = len(self.n_clusters) * len(self.variants) * len(self.strategies)
        if size > self.cap:
            raise SweepError(f"sweep has {size} points, cap is {self.cap}")
        if self.jobs < 1:
            raise SweepError(f"jobs must be ≥ 1, got {self.jobs}")

    def points(self) -> List[Tuple[int, int, Strategy]]:
        """(n_cl, variant index, strategy) in lexicographic order."""
        strategies = sorted(self.strategies, key=lambda strategy: strategy.value)
        return [
            (n_cl, index, strategy)
            for n_cl in sorted(set(self.n_clusters))
            for index in range(len(self.variants))
            for strategy in strategies
        ]


def run_once(
    cfg: ArchConfig,
    strategy: Strategy,
    layers: Optional[Sequence[LayerDescriptor]] = None,
    options: RunOptions = RunOptions(),
    trace: Optional[Union[str, pathlib.Path]] = None,
    plan_out: Optional[Union[str, pathlib.Path]] = None,
) -> MetricsReport:
    """
    Simulate one configuration and fold it into a report.

    :param layers: Workload, the bundled benchmark for the strategy when None
    :param trace: Optional JSON-lines timeline output
    :param plan_out: Optional JSON export of the mapping plan
    """
    arch = require_valid(cfg)
    if layers is None:
        layers = benchmark_layers(strategy, cfg.n_clusters, arch.ima, options.iterations)
    plan = build_plan(strategy, layers, cfg.n_clusters, arch.ima)
    if plan_out is not None:
        pathlib.Path(plan_out).write_text(plan.to_json() + "\n", encoding="utf-8")
        package_logger.info(f"Wrote mapping plan to {plan_out}")
    result = simulate(arch, plan, options)
    if trace is not None:
        result.timeline.write_trace(trace)
    return collect_metrics(result)


@dataclass
class LayerTable:
    """Crossbar demand of a layer table and the stage times of its pipelining plan."""

    names: List[str]
    crossbars: List[int]
    tile_cycles: List[int]
    n_clusters: int
    clusters_used: int
    timing: StageTiming

    @property
    def total_crossbars(self) -> int:
        return sum(self.crossbars)

    def to_text(self) -> str:
        lines = [f"{'layer':<16} {'crossbars':>9} {'cycles/tile':>12}"]
        for name, crossbars, cycles in zip(self.names, self.crossbars, self.tile_cycles):
            lines.append(f"{name:<16} {crossbars:>9d} {cycles:>12d}")
        layout = "one stage per layer" if self.total_crossbars <= self.n_clusters else "layers serialized"
        lines.append(
            f"total crossbars {self.total_crossbars} for {self.n_clusters} clusters: "
            f"{layout} on {self.clusters_used} clusters"
        )
        lines.append(
            f"stage interval {self.timing.interval} cycles, critical stage on cluster {self.timing.critical_stage}"
        )
        return "\n".join(lines) + "\n"


def describe_layers(cfg: ArchConfig, layers: Sequence[LayerDescriptor]) -> LayerTable:
    """
    Crossbars per layer and the contention-free IMA time per tile of every
    pipeline stage. Cycles per tile are the slowest cluster of a layer;
    reprogramming counts on every cluster whose crossbar holds more than one
    weight tile.
    """
    arch = require_valid(cfg)
    ima, cluster_cfg = arch.ima, arch.cluster
    plan = build_plan(Strategy.PIPELINING, layers, arch.n_clusters, ima)
    timings: Dict[int, int] = {}
    for cluster in plan.assignments:
        for item in cluster:
            layer = plan.layers[item.layer]
            width = item.c_out_slice[1] - item.c_out_slice[0]
            rows = item.c_in_slice[1] - item.c_in_slice[0]
            stationary = len(cluster) == 1 and rows <= ima.rows and width <= ima.cols
            tile = build_tile_plan(
                layer,
                cluster_cfg.l1_bytes,
                cluster_cfg.runtime_reserve_bytes,
                cluster_cfg.max_tile_pixels or None,
                width,
            )
            jobs = ima_job_decompose(
                min(tile.w_tile, layer.out_pixels),
                layer,
                ima,
                item.c_out_slice,
                f"{item.weight_tile}/0.0" if stationary else None,
                item.weight_tile,
                rows_slice=item.c_in_slice,
            )
            timings[item.layer] = max(timings.get(item.layer, 0), compute_bound_cycles([jobs], arch))
    return LayerTable(
        names=[layer.name for layer in layers],
        crossbars=[tiles_required(layer, ima.rows, ima.cols) for layer in layers],
        tile_cycles=[timings[index] for index in range(len(layers))],
        n_clusters=arch.n_clusters,
        clusters_used=plan.n_clusters,
        timing=pipeline_stage_cycles(plan, timings),
    )


def _run_point(point: Tuple[ArchConfig, Strategy, Optional[Tuple[LayerDescriptor, ...]], RunOptions]) -> MetricsReport:
    cfg, strategy, layers, options = point
    return run_once(cfg, strategy, layers, options)


def run_points(spec: SweepSpec, base: ArchConfig, options: RunOptions = RunOptions()) -> List[MetricsReport]:
    """Run every point of the sweep; the result order never depends on completion order."""
    work = []
    for n_cl, index, strategy in spec.points():
        cfg = spec.variants[index].apply(with_clusters(base, n_cl))
        work.append((cfg, strategy, spec.layers, options))

    if spec.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=spec.jobs) as executor:
            reports = list(executor.map(_run_point, work))
    else:
        reports = [_run_point(point) for point in work]

    for (n_cl, index, strategy), report in zip(spec.points(), reports):
        package_logger.info(
            f"{strategy.value:>13} {n_cl:>2} CL {spec.variants[index].label:<20} eta {report.eta_pct:6.2f}%"
        )
    return reports


def reports_to_csv(reports: Iterable[MetricsReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        writer.writerow(report.to_csv_row())
    return buffer.getvalue()


def _write(path: pathlib.Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    package_logger.info(f"Wrote {path}")


def run_sweep(spec: SweepSpec, base: ArchConfig, options: RunOptions = RunOptions()) -> str:
    """
    :return: CSV text, one row per point, header first
    """
    text = reports_to_csv(run_points(spec, base, options))
    if spec.out is not None:
        _write(spec.out, text)
    return text


@dataclass
class FigureSummary:
    """Derived speedups and trends of the efficiency reproduction."""

    n_clusters: int
    simulated_speedups: Dict[str, float]
    roofline_speedups: Dict[str, float]
    reported_speedups: Dict[str, float]
    pipelining_spread: Dict[str, float]
    input_wait: Dict[str, int]
    input_wait_reduction_pct: float
    reports: List[MetricsReport] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"Data-parallel wireless/wired speedup at {self.n_clusters} clusters"]
        lines.append(f"{'variant':<20} {'simulated':>10} {'roofline':>10} {'reported':>10}")
        for label, simulated in self.simulated_speedups.items():
            lines.append(
                f"{label:<20} {simulated:>10.2f} {self.roofline_speedups[label]:>10.2f} "
                f"{self.reported_speedups[label]:>10.1f}"
            )
        lines.append("")
        lines.append(f"Pipelining efficiency spread over {', '.join(map(str, FLATNESS_CLUSTERS))} clusters")
        for label, spread in self.pipelining_spread.items():
            lines.append(f"{label:<20} {spread:>6.2f} points")
        lines.append("")
        lines.append(f"Pipelining input wait at {self.n_clusters} clusters")
        for label, cycles in self.input_wait.items():
            lines.append(f"{label:<20} {cycles:>10d} cycles")
        lines.append(f"wireless reduction vs wired 256 bit/cycle: {self.input_wait_reduction_pct:.2f}%")
        return "\n".join(lines) + "\n"


def _pivot(reports: Sequence[MetricsReport], spec: SweepSpec, column: str, scale: float = 1.0) -> str:
    labels = [variant.label for variant in spec.variants]
    table: Dict[Tuple[str, int], Dict[str, float]] = {}
    for report, (n_cl, index, strategy) in zip(reports, spec.points()):
        table.setdefault((strategy.value, n_cl), {})[labels[index]] = getattr(report, column) * scale
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["strategy", "n_clusters", *labels])
    for (strategy, n_cl), values in table.items():
        writer.writerow([strategy, n_cl, *(repr(values[label]) for label in labels)])
    return buffer.getvalue()


def summarize(reports: Sequence[MetricsReport], spec: SweepSpec, pixels: int, ima: ImaConfig) -> FigureSummary:
    by_point = {point: report for point, report in zip(spec.points(), reports)}
    top = max(spec.n_clusters)
    variants = list(spec.variants)
    wireless = [index for index, variant in enumerate(variants) if variant.kind == InterconnectKind.WIRELESS]
    wired = [index for index, variant in enumerate(variants) if variant.kind == InterconnectKind.WIRED]
    if not wireless or not wired:
        raise SweepError("the summary needs at least one wired and one wireless variant")
    reference = wireless[0]
    fast = by_point[(top, reference, Strategy.DATA_PARALLEL)]

    simulated, roofline, reported = {}, {}, {}
    profile = TrafficProfile(pixels=pixels, bytes_in=ima.rows, bytes_out=ima.cols)
    predicted = predicted_speedup_ratios(
        [variants[index].bandwidth_bits_per_cycle for index in wired],
        variants[reference].bandwidth_bits_per_cycle,
        top,
        profile,
    )
    for position, index in enumerate(wired):
        label = variants[index].label
        slow = by_point[(top, index, Strategy.DATA_PARALLEL)]
        simulated[label] = fast.achieved_gmacs / slow.achieved_gmacs
        roofline[label] = predicted[position]
        reported[label] = REPORTED_SPEEDUPS[position] if position < len(REPORTED_SPEEDUPS) else float("nan")

    spread = {}
    for index, variant in enumerate(variants):
        etas = [
            by_point[(n_cl, index, Strategy.PIPELINING)].eta_pct
            for n_cl in FLATNESS_CLUSTERS
            if (n_cl, index, Strategy.PIPELINING) in by_point
        ]
        if etas:
            spread[variant.label] = max(etas) - min(etas)

    wait = {
        variant.label: by_point[(top, index, Strategy.PIPELINING)].input_wait_cycles
        for index, variant in enumerate(variants)
    }
    widest = max(wired, key=lambda index: variants[index].bandwidth_bits_per_cycle)
    wired_wait = wait[variants[widest].label]
    wireless_wait = wait[variants[reference].label]
    reduction = 100.0 * (wired_wait - wireless_wait) / wired_wait if wired_wait else 0.0

    return FigureSummary(top, simulated, roofline, reported, spread, wait, reduction, list(reports))


def reproduce_figure4(
    base: ArchConfig,
    options: RunOptions = RunOptions(),
    out_dir: Optional[Union[str, pathlib.Path]] = None,
    jobs: int = 1,
) -> FigureSummary:
    """
    Efficiency and throughput of both strategies for 1..16 clusters over the
    three wired bandwidths and the wireless channel with broadcast.

    Writes sweep.csv, efficiency.csv, throughput.csv and summary.txt when out_dir is given.
    """
    spec = SweepSpec(FIGURE_CLUSTERS, FIGURE_VARIANTS, (Strategy.PIPELINING, Strategy.DATA_PARALLEL), jobs=jobs)
    reports = run_points(spec, base, options)
    summary = summarize(reports, spec, options.iterations, base.cluster.ima)
    if out_dir is not None:
        out = pathlib.Path(out_dir)
        _write(out / "sweep.csv", reports_to_csv(reports))
        _write(out / "efficiency.csv", _pivot(reports, spec, "eta_pct"))
        _write(out / "throughput.csv", _pivot(reports, spec, "achieved_gmacs", 1e-3))
        _write(out / "summary.txt", summary.to_text())
    return summary
