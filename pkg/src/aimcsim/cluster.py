# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Timing models of the resources inside one cluster.

L1Memory arbitrates the word-interleaved banks cycle by cycle, Ima runs the
stream-in / eval / stream-out job sequence through it, Dma moves tiles with
the interconnect fabric and EventUnit implements the hardware and software
events the cluster runtime waits on.
"""

import collections
import enum
import math

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Deque, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from aimcsim.arch_config import L1_WORD_BYTES, ImaConfig, cycles_from_ns
from aimcsim.engine import ClockedResource, Phase, Simulator
from aimcsim.errors import DimensionError, MappingError
from aimcsim.logger import package_logger

if TYPE_CHECKING:
    from aimcsim.interconnect import Fabric

IMA_PORT = "ima"
EXTERNAL_PORT = "ext"

CycleCallback = Callable[[int, int, int], None]
DoneCallback = Callable[[int], None]


def dma_port(channel: int) -> str:
    return f"dma{channel}"


def l1_requesters(dma_channels: int) -> List[str]:
    """Round-robin order of the L1 ports: DMA channels, external (remote/broadcast) writes, then the IMA."""
    return [dma_port(channel) for channel in range(dma_channels)] + [EXTERNAL_PORT, IMA_PORT]


def ima_phase_cycles(cfg: ImaConfig, c_in: int, c_out: int, f_clock: float) -> Tuple[int, int, int]:
    """
    Contention-free cycle counts of the three IMA phases.

    :param cfg: Accelerator geometry
    :param c_in: Input channels streamed in
    :param c_out: Output channels streamed out
    :param f_clock: Clock frequency in Hz
    :return: (stream_in, eval, stream_out)
    :raises DimensionError: When the job does not fit the crossbar
    """
    _check_dims(cfg, c_in, c_out)
    beat = cfg.stream_bytes_per_cycle
    return math.ceil(c_in / beat), cycles_from_ns(cfg.t_eval_ns, f_clock), math.ceil(c_out / beat)


def _check_dims(cfg: ImaConfig, c_in: int, c_out: int) -> None:
    if not 1 <= c_in <= cfg.rows:
        raise DimensionError(f"c_in {c_in} does not fit {cfg.rows} crossbar rows")
    if not 1 <= c_out <= cfg.cols:
        raise DimensionError(f"c_out {c_out} does not fit {cfg.cols} crossbar columns")


@dataclass(frozen=True)
class ImaJob:
    c_in: int
    c_out: int
    l1_src: int = 0
    l1_dst: int = 0
    needs_reprogram: bool = False
    weight_tile: str = ""


class DmaDirection(str, enum.Enum):
    L2_TO_L1 = "l2_to_l1"
    L1_TO_L2 = "l1_to_l2"
    L1_TO_L1_REMOTE = "l1_to_l1_remote"


@dataclass(frozen=True)
class DmaDescriptor:
    """
    One DMA transaction.

    :param l1_addr: Word address in the issuing cluster's L1
    :param l2_addr: Byte address in L2, unused for remote copies
    :param remote_l1_addr: Word address in the destination L1 of a remote copy
    """

    direction: DmaDirection
    bytes: int
    src_cluster: Optional[int]
    dst_cluster: Optional[int]
    completion_event: str
    l1_addr: int = 0
    l2_addr: int = 0
    remote_l1_addr: int = 0

    def __post_init__(self) -> None:
        if self.bytes <= 0:
            raise MappingError(f"DMA transfer '{self.completion_event}' must move at least one byte, got {self.bytes}")
        if self.direction == DmaDirection.L2_TO_L1:
            ok = self.src_cluster is None and self.dst_cluster is not None
        elif self.direction == DmaDirection.L1_TO_L2:
            ok = self.src_cluster is not None and self.dst_cluster is None
        else:
            ok = (
                self.src_cluster is not None
                and self.dst_cluster is not None
                and self.src_cluster != self.dst_cluster
            )
        if not ok:
            raise MappingError(
                f"DMA {self.direction.value} from {self.src_cluster} to {self.dst_cluster} has invalid endpoints"
            )

    @property
    def issuer(self) -> int:
        return self.dst_cluster if self.direction == DmaDirection.L2_TO_L1 else self.src_cluster  # type: ignore


class L1Stream:
    """
    Word stream of one requester through the L1 banks.

    ``available`` words may be granted now; supply() adds words that become
    available from a given cycle on (landing beats, read-ahead credit).
    """

    __slots__ = (
        "memory",
        "requester",
        "rank",
        "order",
        "klass",
        "word_addr",
        "remaining",
        "per_cycle",
        "available",
        "start_cycle",
        "on_cycle",
        "on_done",
        "_arrivals",
    )

    def __init__(
        self,
        memory: "L1Memory",
        requester: str,
        word_addr: int,
        words: int,
        per_cycle: int,
        available: int,
        start_cycle: int,
        on_cycle: Optional[CycleCallback],
        on_done: Optional[DoneCallback],
    ) -> None:
        self.memory = memory
        self.requester = requester
        self.rank = memory.rank(requester)
        self.order = 0
        self.klass = IMA_PORT if requester == IMA_PORT else "dma"
        self.word_addr = word_addr
        self.remaining = words
        self.per_cycle = per_cycle
        self.available = available
        self.start_cycle = start_cycle
        self.on_cycle = on_cycle
        self.on_done = on_done
        self._arrivals: Deque[Tuple[int, int]] = collections.deque()

    def supply(self, words: int, cycle: int) -> None:
        if words <= 0:
            return
        if self._arrivals and self._arrivals[-1][0] >= cycle:
            last_cycle, last_words = self._arrivals.pop()
            self._arrivals.append((last_cycle, last_words + words))
        else:
            self._arrivals.append((cycle, words))
        self.memory.wake(max(cycle, self.start_cycle))

    def _absorb(self, cycle: int) -> None:
        while self._arrivals and self._arrivals[0][0] <= cycle:
            self.available += self._arrivals.popleft()[1]

    def _next_cycle(self, cycle: int) -> Optional[int]:
        if self.remaining <= 0:
            return None
        if self.available > 0:
            return max(cycle, self.start_cycle)
        if self._arrivals:
            return max(cycle, self.start_cycle, self._arrivals[0][0])
        return None


class L1Memory(ClockedResource):
    """
    Multi-banked L1 scratchpad with per-bank round-robin arbitration.

    Word i of a stream sits in bank (word_addr + i) mod banks. Each cycle a
    bank grants one word; losers retry the next cycle and their denied words
    are counted as conflicts of their requester class.
    """

    def __init__(self, sim: Simulator, name: str, banks: int, requesters: Sequence[str]) -> None:
        super().__init__(sim, name)
        self.banks = banks
        self._ranks = {requester: index for index, requester in enumerate(requesters)}
        self._last_winner = [-1] * banks
        self._streams: List[L1Stream] = []
        self._opened = 0
        self.conflicts: Dict[str, int] = {"ima": 0, "dma": 0}
        self.granted_words: Dict[str, int] = {"ima": 0, "dma": 0}

    def rank(self, requester: str) -> int:
        try:
            return self._ranks[requester]
        except KeyError:
            raise MappingError(f"{self.name}: unknown L1 requester '{requester}'") from None

    def open_stream(
        self,
        requester: str,
        word_addr: int,
        words: int,
        per_cycle: int,
        available: Optional[int] = None,
        on_cycle: Optional[CycleCallback] = None,
        on_done: Optional[DoneCallback] = None,
    ) -> L1Stream:
        """
        Start a stream in the current cycle.

        :param available: Words grantable right away, None for all of them
        """
        stream = L1Stream(
            self,
            requester,
            word_addr,
            words,
            min(per_cycle, self.banks),
            words if available is None else min(available, words),
            self.sim.now,
            on_cycle,
            on_done,
        )
        stream.order = self._opened
        self._opened += 1
        self._streams.append(stream)
        self.wake(self.sim.now)
        return stream

    @property
    def total_conflicts(self) -> int:
        return self.conflicts["ima"] + self.conflicts["dma"]

    def step(self, cycle: int) -> None:
        wants: List[Tuple[L1Stream, int]] = []
        for stream in self._streams:
            if stream.start_cycle > cycle:
                continue
            stream._absorb(cycle)
            want = min(stream.remaining, stream.available, stream.per_cycle)
            if want > 0:
                wants.append((stream, want))
        if not wants:
            return

        claims: Dict[int, List[L1Stream]] = {}
        for stream, want in wants:
            for offset in range(want):
                claims.setdefault((stream.word_addr + offset) % self.banks, []).append(stream)

        granted: Dict[int, int] = {id(stream): 0 for stream, _ in wants}
        n_ranks = len(self._ranks)
        for bank, contenders in claims.items():
            if len(contenders) == 1:
                winner = contenders[0]
            else:
                last = self._last_winner[bank]
                winner = min(contenders, key=lambda s: ((s.rank - last - 1) % n_ranks, s.order))
                for loser in contenders:
                    if loser is not winner:
                        self.conflicts[loser.klass] += 1
            self._last_winner[bank] = winner.rank
            granted[id(winner)] += 1

        finished: List[L1Stream] = []
        for stream, want in wants:
            words = granted[id(stream)]
            stream.word_addr += words
            stream.remaining -= words
            stream.available -= words
            self.granted_words[stream.klass] += words
            if stream.on_cycle is not None:
                stream.on_cycle(cycle, words, want)
            if stream.remaining == 0:
                finished.append(stream)

        for stream in finished:
            self._streams.remove(stream)
        for stream in finished:
            if stream.on_done is not None:
                stream.on_done(cycle + 1)

    def next_active_cycle(self, cycle: int) -> Optional[int]:
        candidates = [c for c in (stream._next_cycle(cycle) for stream in self._streams) if c is not None]
        return min(candidates) if candidates else None


class Ima:
    """
    In-memory accelerator of one cluster.

    Jobs run strictly one after the other: optional prog, stream-in through
    the L1 ports, eval without L1 traffic, stream-out.
    """

    def __init__(
        self,
        sim: Simulator,
        name: str,
        l1: L1Memory,
        cfg: ImaConfig,
        eval_cycles: int,
        prog_overhead_cycles: int,
    ) -> None:
        self.sim = sim
        self.name = name
        self.l1 = l1
        self.cfg = cfg
        self.eval_cycles = eval_cycles
        self.prog_overhead_cycles = prog_overhead_cycles
        self.resident: Optional[str] = None
        self.jobs_completed = 0
        self.reprograms = 0
        self.history: List[Tuple[int, int, ImaJob]] = []
        self._queue: Deque[ImaJob] = collections.deque()
        self._on_done: Optional[DoneCallback] = None
        self._busy = False
        self._started = 0

    @property
    def words_per_cycle(self) -> int:
        return self.cfg.stream_bytes_per_cycle // L1_WORD_BYTES

    def run_job(self, job: ImaJob, on_done: Optional[DoneCallback] = None) -> None:
        self.run_jobs([job], on_done)

    def run_jobs(self, jobs: Iterable[ImaJob], on_done: Optional[DoneCallback] = None) -> None:
        if self._busy:
            raise MappingError(f"{self.name}: job batch submitted while the IMA is busy")
        batch = list(jobs)
        for job in batch:
            _check_dims(self.cfg, job.c_in, job.c_out)
        self._queue.extend(batch)
        self._on_done = on_done
        self._busy = True
        self._next()

    def _next(self) -> None:
        if not self._queue:
            self._busy = False
            callback, self._on_done = self._on_done, None
            if callback is not None:
                callback(self.sim.now)
            return
        job = self._queue.popleft()
        self._started = self.sim.now
        if job.needs_reprogram:
            self.reprograms += 1
            self.resident = job.weight_tile
            if self.prog_overhead_cycles > 0:
                now = self.sim.now
                self.sim.timeline.add(self.name, Phase.PROG, now, now + self.prog_overhead_cycles)
                self.sim.after(self.prog_overhead_cycles, self.name, lambda: self._stream_in(job))
                return
        self._stream_in(job)

    def _record_beat(self, phase: Phase) -> CycleCallback:
        def record(cycle: int, granted: int, wanted: int) -> None:
            self.sim.timeline.add(self.name, phase if granted else Phase.CONFLICT_STALL, cycle, cycle + 1)

        return record

    def _stream_in(self, job: ImaJob) -> None:
        self.l1.open_stream(
            IMA_PORT,
            job.l1_src,
            math.ceil(job.c_in / L1_WORD_BYTES),
            self.words_per_cycle,
            on_cycle=self._record_beat(Phase.STREAM_IN),
            on_done=lambda cycle: self._eval(job, cycle),
        )

    def _eval(self, job: ImaJob, cycle: int) -> None:
        self.sim.timeline.add(self.name, Phase.EVAL, cycle, cycle + self.eval_cycles)
        self.sim.schedule(cycle + self.eval_cycles, self.name, lambda: self._stream_out(job))

    def _stream_out(self, job: ImaJob) -> None:
        self.l1.open_stream(
            IMA_PORT,
            job.l1_dst,
            math.ceil(job.c_out / L1_WORD_BYTES),
            self.words_per_cycle,
            on_cycle=self._record_beat(Phase.STREAM_OUT),
            on_done=lambda cycle: self._finish(job),
        )

    def _finish(self, job: ImaJob) -> None:
        self.history.append((self._started, self.sim.now, job))
        self.jobs_completed += 1
        self._next()


class EventUnit:
    """
    Per-cluster event unit.

    A waiter resumes event_latency cycles after the last event of its mask
    was posted, or after the wait itself when all of them were posted before.
    """

    def __init__(self, sim: Simulator, name: str, latency: int) -> None:
        self.sim = sim
        self.name = name
        self.latency = latency
        self._posted: Dict[str, int] = {}
        self._waiters: List[Tuple[FrozenSet[str], int, DoneCallback, str]] = []

    def posted_at(self, event: str) -> Optional[int]:
        return self._posted.get(event)

    def post(self, event: str) -> None:
        if event not in self._posted:
            self._posted[event] = self.sim.now
        still_waiting = []
        for waiter in self._waiters:
            mask, since, resume, label = waiter
            if event in mask and all(name in self._posted for name in mask):
                self._release(mask, since, resume, label)
            else:
                still_waiting.append(waiter)
        self._waiters = still_waiting

    def wait(self, mask: Iterable[str], resume: DoneCallback, label: str = "") -> None:
        """
        Block until every event of the mask has been posted.

        :param resume: Called with the resume cycle
        """
        events = frozenset(mask)
        if not events:
            raise MappingError(f"{self.name}: wait on an empty event mask")
        if all(name in self._posted for name in events):
            self._release(events, self.sim.now, resume, label)
        else:
            self._waiters.append((events, self.sim.now, resume, label))

    def _release(self, mask: FrozenSet[str], since: int, resume: DoneCallback, label: str) -> None:
        at = max(since, max(self._posted[name] for name in mask)) + self.latency
        package_logger.debug(f"{self.name}: {label or sorted(mask)} resumes at {at}")
        self.sim.schedule(at, self.name, lambda: resume(at))

    def blocked(self) -> List[str]:
        return [
            f"{self.name}: {label or 'wait'} on {{{', '.join(sorted(mask - self._posted.keys()))}}}"
            for mask, _, _, label in self._waiters
        ]


class Dma:
    """
    Multi-channel DMA engine; descriptors beyond the free channels queue in FIFO order.
    """

    def __init__(self, sim: Simulator, cluster: int, channels: int, fabric: "Fabric", events: EventUnit) -> None:
        self.sim = sim
        self.cluster = cluster
        self.name = f"cl{cluster}.dma"
        self.fabric = fabric
        self.events = events
        self._free = list(range(channels))
        self._queue: Deque[Tuple[DmaDescriptor, Optional[DoneCallback]]] = collections.deque()
        self.completed = 0

    def submit(self, desc: DmaDescriptor, on_done: Optional[DoneCallback] = None) -> None:
        if desc.issuer != self.cluster:
            raise MappingError(f"{self.name}: descriptor '{desc.completion_event}' belongs to cluster {desc.issuer}")
        self._queue.append((desc, on_done))
        self._dispatch()

    def _dispatch(self) -> None:
        while self._free and self._queue:
            channel = self._free.pop(0)
            desc, on_done = self._queue.popleft()
            self._start(channel, desc, on_done)

    def _start(self, channel: int, desc: DmaDescriptor, on_done: Optional[DoneCallback]) -> None:
        start = self.sim.now
        resource = f"cl{self.cluster}.dma{channel}"
        port = dma_port(channel)

        def finish(cycle: int) -> None:
            phase = Phase.DMA_READ if desc.direction == DmaDirection.L2_TO_L1 else Phase.DMA_WRITE
            self.sim.timeline.add(resource, phase, start, cycle)
            self.completed += 1
            self._free.append(channel)
            self._free.sort()
            self.events.post(desc.completion_event)
            if on_done is not None:
                on_done(cycle)
            self._dispatch()

        if desc.direction == DmaDirection.L2_TO_L1:
            self.fabric.read_l2(
                port,
                desc.l2_addr,
                desc.bytes,
                [self.fabric.endpoint(self.cluster, desc.l1_addr, port)],
                finish,
            )
        elif desc.direction == DmaDirection.L1_TO_L2:
            source = self.fabric.endpoint(self.cluster, desc.l1_addr, port)
            self.fabric.write_l2(port, source, desc.l2_addr, desc.bytes, finish)
        else:
            self.fabric.copy_l1(
                port,
                self.fabric.endpoint(self.cluster, desc.l1_addr, port),
                self.fabric.endpoint(desc.dst_cluster, desc.remote_l1_addr, EXTERNAL_PORT),  # type: ignore[arg-type]
                desc.bytes,
                finish,
            )
