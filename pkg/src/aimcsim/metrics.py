# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Throughput metrics, the analytical baseline and the communication roofline.

comm_roofline_cycles never looks at simulator state; it is the independent
oracle the simulated numbers are checked against. The per-run bounds only
count work that starts and ends inside the measured window.
"""

import dataclasses
import json

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from aimcsim.arch_config import Accounting, ValidatedArch
from aimcsim.cluster import ImaJob, ima_phase_cycles
from aimcsim.engine import Phase, Timeline
from aimcsim.workload import Strategy

if TYPE_CHECKING:
    from aimcsim.system import SimulationResult

CSV_COLUMNS: Tuple[str, ...] = (
    "strategy",
    "n_clusters",
    "interconnect",
    "kind",
    "bandwidth_bits_per_cycle",
    "latency_cycles",
    "broadcast",
    "accounting",
    "iterations",
    "warmup",
    "tot_exec_cycles",
    "run_cycles",
    "total_macs",
    "achieved_gmacs",
    "baseline_gmacs",
    "eta_pct",
    "compute_bound_cycles",
    "roofline_cycles",
    "link_busy_cycles",
    "link_wait_cycles",
    "l1_conflicts",
    "l2_conflicts",
    "l2_read_bytes",
    "l2_write_bytes",
    "broadcast_saved_bytes",
    "input_wait_cycles",
    "input_wait_per_cluster",
    "ima_utilization",
    "link_utilization",
)

_IDLE_PHASES = {Phase.WAIT_EVENT, Phase.IDLE}


@dataclass(frozen=True)
class TrafficProfile:
    pixels: int
    bytes_in: float
    bytes_out: float


@dataclass(frozen=True)
class MetricsReport:
    strategy: str
    n_clusters: int
    interconnect: str
    kind: str
    bandwidth_bits_per_cycle: int
    latency_cycles: int
    broadcast: bool
    accounting: str
    iterations: int
    warmup: int
    tot_exec_cycles: int
    run_cycles: int
    total_macs: int
    achieved_gmacs: float
    baseline_gmacs: float
    eta_pct: float
    compute_bound_cycles: int
    roofline_cycles: float
    link_busy_cycles: int
    link_wait_cycles: int
    l1_conflicts: int
    l2_conflicts: int
    l2_read_bytes: int
    l2_write_bytes: int
    broadcast_saved_bytes: int
    input_wait_per_cluster: Tuple[int, ...]
    utilization: Dict[str, float] = field(default_factory=dict)

    @property
    def input_wait_cycles(self) -> int:
        return sum(self.input_wait_per_cluster)

    @property
    def ima_utilization(self) -> float:
        values = [value for name, value in self.utilization.items() if name.endswith(".ima")]
        return float(np.mean(values)) if values else 0.0

    @property
    def link_utilization(self) -> float:
        values = [value for name, value in self.utilization.items() if name.startswith(("fabric", "peer."))]
        return float(np.max(values)) if values else 0.0

    def _value(self, column: str) -> Any:
        if column == "input_wait_per_cluster":
            return ";".join(str(cycles) for cycles in self.input_wait_per_cluster)
        return getattr(self, column)

    def to_csv_row(self) -> List[str]:
        """Cells in CSV_COLUMNS order; floats use repr so the file round-trips exactly."""
        cells = []
        for column in CSV_COLUMNS:
            value = self._value(column)
            if isinstance(value, bool):
                cells.append("true" if value else "false")
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(str(value))
        return cells

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["input_wait_per_cluster"] = list(self.input_wait_per_cluster)
        data["input_wait_cycles"] = self.input_wait_cycles
        data["ima_utilization"] = self.ima_utilization
        data["link_utilization"] = self.link_utilization
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def baseline_gmacs(
    n_cl: int, c_in: int, c_out: int, t_eval_ns: float, ports: int, port_width_bytes: int, f_clock: float
) -> float:
    """
    Theoretical GMAC/s of n_cl crossbars that never wait: one c_in x c_out
    matrix-vector product per stream-in + eval + stream-out, in real time.
    """
    if n_cl == 0:
        return 0.0
    beat = ports * port_width_bytes * f_clock
    period = t_eval_ns * 1e-9 + c_in / beat + c_out / beat
    return 1e-9 * n_cl * c_in * c_out / period


def efficiency_pct(total_macs: int, tot_exec_cycles: int, f_clock: float, baseline: float) -> float:
    if tot_exec_cycles <= 0:
        raise ValueError(f"execution time must be positive, got {tot_exec_cycles} cycles")
    if baseline <= 0:
        raise ValueError(f"baseline must be positive, got {baseline} GMAC/s")
    achieved = 1e-9 * f_clock * total_macs / tot_exec_cycles
    return achieved / baseline * 100


def comm_roofline_cycles(
    strategy: Strategy,
    n_cl: int,
    pixels: int,
    bytes_in: float,
    bytes_out: float,
    bits_per_cycle: float,
    broadcast: bool = False,
    accounting: Accounting = Accounting.AGGREGATE_SHARED,
) -> float:
    """
    Lower bound on cycles set by CL <-> L2 traffic alone.

    Data parallelism reads the input once per cluster (once in total with
    broadcast) and writes every cluster's output slice; a pipeline only
    touches L2 at its two ends.

    :param bytes_in: Input bytes per pixel
    :param bytes_out: Output bytes per pixel and cluster (data parallel) or of the last stage (pipelining)
    """
    if strategy == Strategy.DATA_PARALLEL:
        read = pixels * bytes_in * (1 if broadcast else n_cl)
        write = pixels * n_cl * bytes_out
    else:
        read = pixels * bytes_in
        write = pixels * bytes_out
    return traffic_cycles(read, write, bits_per_cycle, accounting)


def traffic_cycles(
    read_bytes: float, write_bytes: float, bits_per_cycle: float, accounting: Accounting = Accounting.AGGREGATE_SHARED
) -> float:
    """Cycles the CL <-> L2 pools need to carry the given read and write volume."""
    if accounting == Accounting.PER_DIRECTION:
        return max(read_bytes, write_bytes) * 8 / bits_per_cycle
    return (read_bytes + write_bytes) * 8 / bits_per_cycle


def predicted_speedup_ratios(
    wired_bits_per_cycle: Sequence[float], wireless_bits_per_cycle: float, n_cl: int, profile: TrafficProfile
) -> List[float]:
    """Roofline ratio of every wired capacity (unicast) over the wireless channel with broadcast."""
    wired = np.array(
        [
            comm_roofline_cycles(
                Strategy.DATA_PARALLEL, n_cl, profile.pixels, profile.bytes_in, profile.bytes_out, capacity
            )
            for capacity in wired_bits_per_cycle
        ]
    )
    wireless = comm_roofline_cycles(
        Strategy.DATA_PARALLEL,
        n_cl,
        profile.pixels,
        profile.bytes_in,
        profile.bytes_out,
        wireless_bits_per_cycle,
        broadcast=True,
    )
    return (wired / wireless).tolist()


def compute_bound_cycles(jobs_per_cluster: Iterable[Iterable[ImaJob]], arch: ValidatedArch) -> int:
    """Contention-free IMA time of every cluster's job list, the slowest cluster wins."""
    slowest = 0
    for jobs in jobs_per_cluster:
        total = 0
        for job in jobs:
            stream_in, evaluate, stream_out = ima_phase_cycles(arch.ima, job.c_in, job.c_out, arch.f_clock)
            total += stream_in + evaluate + stream_out
            if job.needs_reprogram:
                total += arch.cluster.prog_overhead_cycles
        slowest = max(slowest, total)
    return slowest


def utilization(timeline: Timeline, run_cycles: int, link_busy: Dict[str, int]) -> Dict[str, float]:
    """Busy fraction of every timeline resource and link; waits and idle time do not count."""
    if run_cycles <= 0:
        return {}
    busy: Dict[str, int] = {}
    for entry in timeline:
        if entry.phase not in _IDLE_PHASES:
            busy[entry.resource] = busy.get(entry.resource, 0) + entry.end - entry.start
    busy.update(link_busy)
    names = sorted(busy)
    fractions = np.clip(np.array([busy[name] for name in names], dtype=float) / run_cycles, 0.0, 1.0)
    return dict(zip(names, fractions.tolist()))


def roofline_for(result: "SimulationResult") -> float:
    """
    Link-only lower bound on the measured window: the L2 traffic issued and
    finished inside the window over the pool capacity.
    """
    link = result.arch.interconnect
    return traffic_cycles(
        result.window_read_bytes, result.window_write_bytes, link.bandwidth_bits_per_cycle, link.accounting
    )


def collect_metrics(result: "SimulationResult") -> MetricsReport:
    """Fold a finished simulation into a MetricsReport."""
    arch = result.arch
    ima = arch.ima
    link = arch.interconnect
    n_cl = result.plan.n_clusters
    baseline = baseline_gmacs(n_cl, ima.rows, ima.cols, ima.t_eval_ns, ima.ports, ima.port_width_bytes, arch.f_clock)
    cycles = result.tot_exec_cycles
    return MetricsReport(
        strategy=result.plan.strategy.value,
        n_clusters=n_cl,
        interconnect=link.label,
        kind=link.kind.value,
        bandwidth_bits_per_cycle=link.bandwidth_bits_per_cycle,
        latency_cycles=link.latency_cycles,
        broadcast=link.broadcast_enabled,
        accounting=link.accounting.value,
        iterations=result.iterations,
        warmup=result.warmup,
        tot_exec_cycles=cycles,
        run_cycles=result.final_cycle,
        total_macs=result.total_macs,
        achieved_gmacs=1e-9 * arch.f_clock * result.total_macs / cycles,
        baseline_gmacs=baseline,
        eta_pct=efficiency_pct(result.total_macs, cycles, arch.f_clock, baseline),
        compute_bound_cycles=result.compute_bound_cycles,
        roofline_cycles=roofline_for(result),
        link_busy_cycles=result.link_busy_cycles,
        link_wait_cycles=result.link_wait_cycles,
        l1_conflicts=result.l1_conflicts,
        l2_conflicts=result.l2_conflicts,
        l2_read_bytes=result.l2_read_bytes,
        l2_write_bytes=result.l2_write_bytes,
        broadcast_saved_bytes=result.broadcast_saved_bytes,
        input_wait_per_cluster=tuple(result.input_wait_cycles),
        utilization=utilization(result.timeline, result.final_cycle, result.link_busy),
    )
