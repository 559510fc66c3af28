# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Cluster runtime: the double-buffered fetch -> compute -> send pipeline.

Every cluster runs three state machines on the engine. The fetcher brings
input tiles from L2 (or, in a pipeline, the upstream sender pushes them), the
compute machine waits for its input and a free output slot, pays the tile
overhead and runs the IMA jobs of every co-located layer, and the sender
writes the result to L2 or into the next cluster's L1. Each side has two L1
slots, so fetch, compute and send of consecutive iterations overlap.
"""

import math

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from aimcsim.arch_config import L1_WORD_BYTES, ValidatedArch
from aimcsim.cluster import (
    EXTERNAL_PORT,
    Dma,
    DmaDescriptor,
    DmaDirection,
    EventUnit,
    Ima,
    ImaJob,
    L1Memory,
    l1_requesters,
)
from aimcsim.engine import DEFAULT_MAX_EVENTS, Phase, Simulator, Timeline
from aimcsim.errors import DeadlockError, DimensionError, MappingError
from aimcsim.interconnect import Fabric
from aimcsim.logger import package_logger
from aimcsim.metrics import compute_bound_cycles
from aimcsim.workload import (
    DEFAULT_BENCHMARK_PIXELS,
    MappingPlan,
    Strategy,
    balanced_partition,
    build_tile_plan,
    ima_job_decompose,
)

BROADCAST_RESOURCE = "l2.bcast"


@dataclass(frozen=True)
class RunOptions:
    """
    :param iterations: Output pixels of the bundled benchmarks
    :param warmup: Iterations left out of the measured window, None for the strategy default
    :param max_events: Watchdog cap
    """

    iterations: int = DEFAULT_BENCHMARK_PIXELS
    warmup: Optional[int] = None
    max_events: int = DEFAULT_MAX_EVENTS

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise MappingError(f"iterations must be >= 1, got {self.iterations}")
        if self.warmup is not None and self.warmup < 0:
            raise MappingError(f"warmup must be >= 0, got {self.warmup}")
        if self.max_events < 1:
            raise MappingError(f"max_events must be >= 1, got {self.max_events}")


@dataclass
class SimulationResult:
    arch: ValidatedArch
    plan: MappingPlan
    final_cycle: int
    timeline: Timeline
    iterations: int
    warmup: int
    window: Tuple[int, int]
    total_macs: int
    compute_bound_cycles: int
    iteration_done: List[int]
    input_wait_cycles: List[int]
    l1_conflicts: int
    l2_conflicts: int
    link_busy_cycles: int
    link_wait_cycles: int
    l2_read_bytes: int
    l2_write_bytes: int
    broadcast_saved_bytes: int
    events_processed: int
    window_read_bytes: int = 0
    window_write_bytes: int = 0
    link_busy: Dict[str, int] = field(default_factory=dict)

    @property
    def tot_exec_cycles(self) -> int:
        return self.window[1] - self.window[0]


def _align(value: int, unit: int) -> int:
    return -(-value // unit) * unit


class _ClusterRuntime:
    def __init__(self, system: "System", index: int) -> None:
        arch = system.arch
        cfg = arch.cluster
        self.system = system
        self.index = index
        self.name = f"cl{index}"
        self.sim = system.sim
        self.assignments = system.plan.assignments[index]
        self.sources = system.plan.input_sources(index)
        self.sinks = system.plan.output_sinks(index)

        self.l1 = L1Memory(self.sim, f"{self.name}.l1", cfg.l1_banks, l1_requesters(cfg.dma_channels))
        self.events = EventUnit(self.sim, f"{self.name}.eu", cfg.event_latency_cycles)
        self.ima = Ima(self.sim, f"{self.name}.ima", self.l1, arch.ima, arch.eval_cycles, cfg.prog_overhead_cycles)
        self.dma = Dma(self.sim, index, cfg.dma_channels, system.fabric, self.events)
        system.fabric.attach(index, self.l1)

        self.core = f"{self.name}.core"
        self.input_wait_cycles = 0
        self._layout()
        self.jobs = self._decompose()

    def _layer(self, position: int):
        return self.system.plan.layers[self.assignments[position].layer]

    def pixels(self, position: int, k: int) -> int:
        return self.system.chunks[self.assignments[position].layer][k]

    def in_bytes(self, k: int) -> int:
        if self.sources:
            return sum(self.system.runtimes[source].out_bytes(k) for source in self.sources)
        return self._layer(0).in_tile_bytes(self.pixels(0, k))

    def out_bytes(self, k: int) -> int:
        last = self.assignments[-1]
        width = last.c_out_slice[1] - last.c_out_slice[0]
        return self._layer(-1).out_tile_bytes(self.pixels(-1, k), width)

    def macs(self, k: int) -> int:
        total = 0
        for position, item in enumerate(self.assignments):
            rows = item.c_in_slice[1] - item.c_in_slice[0]
            total += self.pixels(position, k) * rows * (item.c_out_slice[1] - item.c_out_slice[0])
        return total

    def _piece_words(self, k: int) -> List[int]:
        """L1 words of every upstream cluster's share of input k, in source order."""
        return [math.ceil(self.system.runtimes[source].out_bytes(k) / L1_WORD_BYTES) for source in self.sources]

    def piece_offset(self, source: int, k: int) -> int:
        return self.in_slot(k) + sum(self._piece_words(k)[: self.sources.index(source)])

    def _layout(self) -> None:
        cfg = self.system.arch.cluster
        iterations = range(self.system.iterations)
        first = self._layer(0)
        in_words = 1
        for k in iterations:
            own = math.ceil(first.in_tile_bytes(self.pixels(0, k)) / L1_WORD_BYTES)
            in_words = max(in_words, own, sum(self._piece_words(k)))
        out_words = max(math.ceil(max(self.out_bytes(k) for k in iterations) / L1_WORD_BYTES), 1)
        scratch_words = 0
        for position, item in enumerate(self.assignments[:-1]):
            width = item.c_out_slice[1] - item.c_out_slice[0]
            most = max(self.pixels(position, k) for k in iterations)
            scratch_bytes = self._layer(position).out_tile_bytes(most, width)
            scratch_words = max(scratch_words, math.ceil(scratch_bytes / L1_WORD_BYTES))
        self._in_words = in_words
        self._out_words = out_words
        self._scratch = (2 * (in_words + out_words), 2 * (in_words + out_words) + scratch_words)
        used = L1_WORD_BYTES * (2 * (in_words + out_words) + 2 * scratch_words)
        if used > cfg.l1_bytes - cfg.runtime_reserve_bytes:
            raise DimensionError(
                f"{self.name}: tile buffers need {used} bytes of L1, "
                f"{cfg.l1_bytes - cfg.runtime_reserve_bytes} bytes available"
            )

    def in_slot(self, k: int) -> int:
        return (k % 2) * self._in_words

    def out_slot(self, k: int) -> int:
        return 2 * self._in_words + (k % 2) * self._out_words

    def _decompose(self) -> List[List[ImaJob]]:
        arch = self.system.arch
        first = self.assignments[0]
        resident: Optional[str] = f"{first.weight_tile}/0.0"
        self.ima.resident = resident
        per_iteration = []
        for k in range(self.system.iterations):
            jobs: List[ImaJob] = []
            for position, item in enumerate(self.assignments):
                pixels = self.pixels(position, k)
                if not pixels:
                    continue
                last = position == len(self.assignments) - 1
                batch = ima_job_decompose(
                    pixels,
                    self._layer(position),
                    arch.ima,
                    item.c_out_slice,
                    resident,
                    item.weight_tile,
                    in_base=self.in_slot(k) if position == 0 else self._scratch[(position - 1) % 2],
                    out_base=self.out_slot(k) if last else self._scratch[position % 2],
                    rows_slice=item.c_in_slice,
                )
                if batch:
                    resident = batch[-1].weight_tile
                jobs.extend(batch)
            per_iteration.append(jobs)
        return per_iteration

    def _in_events(self, k: int) -> List[str]:
        if not self.sources:
            return [f"in:{k}"]
        return [f"in:{k}:{source}" for source in self.sources]

    def start(self) -> None:
        for k in (0, 1):
            self.events.post(f"outslot:{k}")
            if not self.sources:
                self.events.post(f"inslot:{k}")
            for sink in self.sinks:
                self.events.post(f"credit:{k}:{sink}")
        if not self.sources:
            self._fetch(0)
        self._compute(0)
        self._send(0)

    # fetcher

    def _fetch(self, k: int) -> None:
        if k >= self.system.iterations:
            return
        coordinator = self.system.broadcaster
        if coordinator is None:
            self.events.wait([f"inslot:{k}"], lambda _: self._issue_fetch(k), label=f"fetch {k}")
            return
        for slot in range(k, self.system.iterations):
            self.events.wait([f"inslot:{slot}"], lambda _, slot=slot: coordinator.ready(slot), label=f"fetch {slot}")

    def _issue_fetch(self, k: int) -> None:
        nbytes = self.in_bytes(k)
        if not nbytes:
            self.events.post(f"in:{k}")
            self._fetch(k + 1)
            return
        desc = DmaDescriptor(
            DmaDirection.L2_TO_L1,
            nbytes,
            None,
            self.index,
            f"in:{k}",
            l1_addr=self.in_slot(k),
            l2_addr=self.system.input_addr(k),
        )
        self.dma.submit(desc, on_done=lambda _: self._fetch(k + 1))

    # compute

    def _compute(self, k: int) -> None:
        ready = self.sim.now
        self.events.wait(
            self._in_events(k) + [f"outslot:{k}"],
            lambda resume: self._run_tile(k, ready, resume),
            label=f"compute {k}",
        )

    def _run_tile(self, k: int, ready: int, resume: int) -> None:
        arrived = max(self.events.posted_at(event) or 0 for event in self._in_events(k))
        self.input_wait_cycles += max(0, arrived - ready)
        timeline = self.sim.timeline
        timeline.add(self.core, Phase.WAIT_EVENT, ready, resume)
        overhead = self.system.arch.cluster.tile_overhead_cycles
        timeline.add(self.core, Phase.PROG, resume, resume + overhead)
        self.sim.schedule(
            resume + overhead, self.core, lambda: self.ima.run_jobs(self.jobs[k], lambda _: self._tile_done(k))
        )

    def _tile_done(self, k: int) -> None:
        self.events.post(f"out:{k}")
        if not self.sources:
            self.events.post(f"inslot:{k + 2}")
        for source in self.sources:
            self.system.runtimes[source].events.post(f"credit:{k + 2}:{self.index}")
        if k + 1 < self.system.iterations:
            self._compute(k + 1)

    # sender

    def _send(self, k: int) -> None:
        mask = [f"out:{k}"] + [f"credit:{k}:{sink}" for sink in self.sinks]
        self.events.wait(mask, lambda _: self._issue_send(k), label=f"send {k}")

    def _issue_send(self, k: int) -> None:
        nbytes = self.out_bytes(k)
        if not nbytes:
            for sink in self.sinks:
                self.system.runtimes[sink].events.post(f"in:{k}:{self.index}")
            self._sent(k, self.sim.now)
            return
        if not self.sinks:
            desc = DmaDescriptor(
                DmaDirection.L1_TO_L2,
                nbytes,
                self.index,
                None,
                f"sent:{k}",
                l1_addr=self.out_slot(k),
                l2_addr=self.system.output_addr(self.index, k),
            )
            self.dma.submit(desc, on_done=lambda cycle: self._sent(k, cycle))
            return

        pending = [len(self.sinks)]

        def delivered(sink: int, cycle: int) -> None:
            self.system.runtimes[sink].events.post(f"in:{k}:{self.index}")
            pending[0] -= 1
            if not pending[0]:
                self._sent(k, cycle)

        for sink in self.sinks:
            desc = DmaDescriptor(
                DmaDirection.L1_TO_L1_REMOTE,
                nbytes,
                self.index,
                sink,
                f"sent:{k}:{sink}",
                l1_addr=self.out_slot(k),
                remote_l1_addr=self.system.runtimes[sink].piece_offset(self.index, k),
            )
            self.dma.submit(desc, on_done=lambda cycle, sink=sink: delivered(sink, cycle))

    def _sent(self, k: int, cycle: int) -> None:
        self.events.post(f"outslot:{k + 2}")
        if not self.sinks:
            self.system.sink_done(k, cycle)
        if k + 1 < self.system.iterations:
            self._send(k + 1)


class _Broadcaster:
    """L2-side coordinator issuing one broadcast per iteration once every cluster has a free slot."""

    def __init__(self, system: "System") -> None:
        self.system = system
        self._ready: Dict[int, int] = {}
        self._next = 0
        self._busy = False

    def ready(self, k: int) -> None:
        self._ready[k] = self._ready.get(k, 0) + 1
        self._issue()

    def _issue(self) -> None:
        system = self.system
        k = self._next
        if self._busy or k >= system.iterations or self._ready.get(k, 0) < len(system.runtimes):
            return
        self._busy = True
        start = system.sim.now
        nbytes = system.runtimes[0].in_bytes(k)
        sinks = [
            system.fabric.endpoint(runtime.index, runtime.in_slot(k), EXTERNAL_PORT) for runtime in system.runtimes
        ]

        def delivered(cycle: int) -> None:
            system.sim.timeline.add(BROADCAST_RESOURCE, Phase.DMA_READ, start, cycle)
            for runtime in system.runtimes:
                runtime.events.post(f"in:{k}")
            self._busy = False
            self._next += 1
            self._issue()

        system.fabric.broadcast_transfer("bcast", system.input_addr(k), nbytes, sinks, delivered)


class System:
    """
    A full system instance for one architecture and mapping plan.

    :param arch: Validated hardware description
    :param plan: Mapping of the workload onto clusters
    :param options: Run options
    """

    def __init__(self, arch: ValidatedArch, plan: MappingPlan, options: RunOptions = RunOptions()) -> None:
        if plan.n_clusters > arch.n_clusters:
            raise MappingError(f"plan uses {plan.n_clusters} clusters, the system has {arch.n_clusters}")
        self.arch = arch
        self.plan = plan
        self.options = options
        self.sim = Simulator(options.max_events)
        self.fabric = Fabric(self.sim, arch)

        cfg = arch.cluster
        tiles = []
        for index, cluster in enumerate(plan.assignments):
            # one partial input per upstream row block
            copies = len({plan.assignments[source][-1].c_in_slice for source in plan.input_sources(index)}) or 1
            for position, item in enumerate(cluster):
                layer = plan.layers[item.layer]
                width = item.c_out_slice[1] - item.c_out_slice[0]
                tile_plan = build_tile_plan(
                    layer,
                    cfg.l1_bytes,
                    cfg.runtime_reserve_bytes,
                    cfg.max_tile_pixels or None,
                    width,
                    in_copies=copies if position == 0 else 1,
                )
                tiles.append(tile_plan.n_tiles)
        self.iterations = max(tiles)
        self.chunks = [balanced_partition(layer.out_pixels, self.iterations) for layer in plan.layers]

        self.runtimes: List[_ClusterRuntime] = []
        for index in range(plan.n_clusters):
            self.runtimes.append(_ClusterRuntime(self, index))
        self.broadcaster = (
            _Broadcaster(self)
            if plan.strategy == Strategy.DATA_PARALLEL and arch.interconnect.broadcast_enabled and plan.n_clusters > 1
            else None
        )
        self._allocate_l2()

        self._sinks = [runtime.index for runtime in self.runtimes if not runtime.sinks]
        self._sink_count = [0] * self.iterations
        self._iteration_done = [0] * self.iterations

    def _allocate_l2(self) -> None:
        word = self.arch.l2.bank_word_bytes
        head = self.runtimes[0]
        self._in_offsets = [0]
        for k in range(self.iterations):
            self._in_offsets.append(self._in_offsets[-1] + _align(head.in_bytes(k), word))
        out_base = self._in_offsets[-1]
        self._out_offsets: Dict[int, List[int]] = {}
        for runtime in self.runtimes:
            if runtime.sinks:
                continue
            offsets = [out_base]
            for k in range(self.iterations):
                offsets.append(offsets[-1] + _align(runtime.out_bytes(k), word))
            self._out_offsets[runtime.index] = offsets
            out_base = offsets[-1]
        if out_base > self.arch.l2.capacity_bytes:
            raise MappingError(
                f"workload needs {out_base} bytes of L2, capacity is {self.arch.l2.capacity_bytes} bytes"
            )

    def input_addr(self, k: int) -> int:
        return self._in_offsets[k]

    def output_addr(self, cluster: int, k: int) -> int:
        return self._out_offsets[cluster][k]

    def sink_done(self, k: int, cycle: int) -> None:
        self._sink_count[k] += 1
        self._iteration_done[k] = max(self._iteration_done[k], cycle)

    def _warmup(self) -> int:
        warmup = self.options.warmup
        if warmup is None:
            warmup = 1 if self.plan.strategy == Strategy.PIPELINING else 0
        if warmup >= self.iterations:
            package_logger.warning(
                f"Warm-up of {warmup} iterations leaves nothing to measure out of {self.iterations}, "
                "measuring the full run"
            )
            return 0
        return warmup

    def run(self) -> SimulationResult:
        """
        Simulate every iteration of the plan until the system drains.

        :raises DeadlockError: When waits are still blocked after the event queue drained
        """
        package_logger.info(
            f"Simulating {self.plan.strategy.value} on {self.plan.n_clusters} clusters, "
            f"{self.arch.interconnect.label}, {self.iterations} iterations"
        )
        for runtime in self.runtimes:
            runtime.start()
        final_cycle, timeline = self.sim.run_until_idle()

        blocked = [entry for runtime in self.runtimes for entry in runtime.events.blocked()]
        missing = [k for k, count in enumerate(self._sink_count) if count < len(self._sinks)]
        if blocked or missing:
            raise DeadlockError(blocked or [f"iteration {k} never reached L2" for k in missing])

        warmup = self._warmup()
        start = self._iteration_done[warmup - 1] if warmup else 0
        window = (start, self._iteration_done[-1])
        measured = range(warmup, self.iterations)
        fabric = self.fabric
        read_bytes, write_bytes = fabric.window_traffic(*window)
        result = SimulationResult(
            arch=self.arch,
            plan=self.plan,
            final_cycle=final_cycle,
            timeline=timeline,
            iterations=self.iterations,
            warmup=warmup,
            window=window,
            total_macs=sum(runtime.macs(k) for runtime in self.runtimes for k in measured),
            compute_bound_cycles=compute_bound_cycles(
                (
                    [job for begin, end, job in runtime.ima.history if begin >= window[0] and end <= window[1]]
                    for runtime in self.runtimes
                ),
                self.arch,
            ),
            iteration_done=list(self._iteration_done),
            input_wait_cycles=[runtime.input_wait_cycles for runtime in self.runtimes],
            l1_conflicts=sum(runtime.l1.total_conflicts for runtime in self.runtimes),
            l2_conflicts=fabric.l2.conflicts,
            link_busy_cycles=fabric.busy_cycles,
            link_wait_cycles=sum(fabric.wait_cycles.values()),
            l2_read_bytes=fabric.l2_read_bytes,
            l2_write_bytes=fabric.l2_write_bytes,
            broadcast_saved_bytes=fabric.broadcast_saved_bytes,
            events_processed=self.sim.events_processed,
            window_read_bytes=read_bytes,
            window_write_bytes=write_bytes,
            link_busy={link.name: link.busy_cycles for link in fabric.links()},
        )
        package_logger.info(
            f"Finished at cycle {final_cycle} after {self.sim.events_processed} events, "
            f"measured window {window[0]}..{window[1]}"
        )
        return result


def simulate(arch: ValidatedArch, plan: MappingPlan, options: RunOptions = RunOptions()) -> SimulationResult:
    return System(arch, plan, options).run()
