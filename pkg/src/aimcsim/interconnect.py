# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
CL <-> L2 and CL <-> CL communication timing.

A Link is a capacity pool in bits per cycle shared cycle by cycle among its
active flows: equal split, remainder bits handed out round-robin, unused
share redistributed. A beat granted in cycle c lands at c + latency, so the
receiving side sees it complete at c + latency + 1. L2Memory serializes
same-bank accesses. Fabric wires both together and moves DMA payloads
between them and the cluster L1 memories.
"""

import collections
import math

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Deque, Dict, List, Optional, Sequence, Set, Tuple

from aimcsim.arch_config import L1_WORD_BYTES, Accounting, L2Config, ValidatedArch
from aimcsim.engine import ClockedResource, Simulator
from aimcsim.errors import InterconnectError, MappingError
from aimcsim.logger import package_logger

if TYPE_CHECKING:
    from aimcsim.cluster import L1Memory, L1Stream

GrantCallback = Callable[[int, int], None]
DoneCallback = Callable[[int], None]

L2_ENDPOINT = "L2"
READ = "read"
WRITE = "write"


@dataclass(frozen=True)
class LinkRequest:
    requester: str
    bytes: int
    destinations: Tuple[str, ...] = (L2_ENDPOINT,)
    issue_cycle: int = 0


class LinkFlow:
    """
    Progress of one request on a link.

    Sources without a bit budget (L2 reads) can always send; bounded sources
    feed bits with supply() as their L1 read stream advances.
    """

    __slots__ = (
        "request",
        "total_bits",
        "sent_bits",
        "available",
        "start_cycle",
        "blocked_until",
        "latency",
        "first_grant",
        "last_grant",
        "on_grant",
        "on_sent",
        "link",
        "_arrivals",
    )

    def __init__(self, link: "Link", request: LinkRequest, bounded: bool) -> None:
        self.link = link
        self.request = request
        self.total_bits = request.bytes * 8
        self.sent_bits = 0
        self.available: Optional[int] = 0 if bounded else None
        self.start_cycle = max(request.issue_cycle, link.sim.now)
        self.blocked_until = 0
        self.latency = link.latency
        self.first_grant: Optional[int] = None
        self.last_grant: Optional[int] = None
        self.on_grant: Optional[GrantCallback] = None
        self.on_sent: Optional[DoneCallback] = None
        self._arrivals: Deque[Tuple[int, int]] = collections.deque()

    @property
    def requester(self) -> str:
        return self.request.requester

    @property
    def remaining_bits(self) -> int:
        return self.total_bits - self.sent_bits

    @property
    def done(self) -> bool:
        return self.sent_bits >= self.total_bits

    @property
    def first_beat_cycle(self) -> Optional[int]:
        return None if self.first_grant is None else self.first_grant + self.latency + 1

    @property
    def last_beat_cycle(self) -> Optional[int]:
        return None if self.last_grant is None else self.last_grant + self.latency + 1

    def supply(self, bits: int, cycle: int) -> None:
        if bits <= 0 or self.available is None:
            return
        self._arrivals.append((cycle, bits))
        self.link.wake(max(cycle, self.start_cycle))

    def demand(self, cycle: int) -> int:
        if cycle < self.start_cycle or cycle < self.blocked_until:
            return 0
        if self.available is None:
            return self.remaining_bits
        while self._arrivals and self._arrivals[0][0] <= cycle:
            self.available += self._arrivals.popleft()[1]
        return min(self.remaining_bits, self.available)

    def next_cycle(self, cycle: int) -> Optional[int]:
        if self.done:
            return None
        base = max(cycle, self.start_cycle, self.blocked_until)
        if self.available is None or self.available > 0:
            return base
        if self._arrivals:
            return max(base, self._arrivals[0][0])
        return None


class Link(ClockedResource):
    """
    Shared link with round-robin water-filling arbitration.

    :param capacity: Bits per cycle
    :param latency: Cycles between a grant and the beat landing
    """

    def __init__(
        self, sim: Simulator, name: str, capacity: int, latency: int, broadcast_enabled: bool = False
    ) -> None:
        super().__init__(sim, name)
        if capacity < 1:
            raise InterconnectError(f"{name}: capacity must be at least one bit per cycle")
        self.capacity = capacity
        self.latency = latency
        self.broadcast_enabled = broadcast_enabled
        self.flows: List[LinkFlow] = []
        self.busy_cycles = 0
        self.granted_bits = 0
        self.wait_cycles: Dict[str, int] = {}
        self._rr = 0

    def transfer(self, request: LinkRequest, bounded: bool = False) -> LinkFlow:
        """
        Start a flow; grants begin at max(issue_cycle, now).

        :raises InterconnectError: On an empty destination set, or several destinations without broadcast
        """
        if not request.destinations:
            raise InterconnectError(f"{self.name}: transfer from {request.requester} has no destination")
        if len(request.destinations) > 1 and not self.broadcast_enabled:
            raise InterconnectError(f"{self.name}: broadcast requested on a link without broadcast support")
        if request.bytes <= 0:
            raise MappingError(f"{self.name}: transfer from {request.requester} must move at least one byte")
        flow = LinkFlow(self, request, bounded)
        self.flows.append(flow)
        self.wake(flow.start_cycle)
        return flow

    def step(self, cycle: int) -> None:
        active = []
        for flow in self.flows:
            want = flow.demand(cycle)
            if want > 0:
                active.append((flow, want))
        if not active:
            return

        n_active = len(active)
        shift = self._rr % n_active
        order = active[shift:] + active[:shift]
        if n_active > 1:
            self._rr += 1

        grants = [0] * n_active
        pending = list(range(n_active))
        left = self.capacity
        while left > 0 and pending:
            share, extra = divmod(left, len(pending))
            still = []
            for position, index in enumerate(pending):
                want = order[index][1] - grants[index]
                give = min(want, share + (1 if position < extra else 0))
                grants[index] += give
                left -= give
                if grants[index] < order[index][1]:
                    still.append(index)
            pending = still

        total = sum(grants)
        if total:
            self.busy_cycles += 1
            self.granted_bits += total

        sent: List[LinkFlow] = []
        for (flow, want), bits in zip(order, grants):
            if bits < min(want, self.capacity):
                self.wait_cycles[flow.requester] = self.wait_cycles.get(flow.requester, 0) + 1
            if not bits:
                continue
            flow.sent_bits += bits
            if flow.available is not None:
                flow.available -= bits
            if flow.first_grant is None:
                flow.first_grant = cycle
            flow.last_grant = cycle
            if flow.on_grant is not None:
                flow.on_grant(cycle, bits)
            if flow.done:
                sent.append(flow)

        for flow in sent:
            self.flows.remove(flow)
        for flow in sent:
            if flow.on_sent is not None:
                flow.on_sent(cycle)

    def next_active_cycle(self, cycle: int) -> Optional[int]:
        candidates = [c for c in (flow.next_cycle(cycle) for flow in self.flows) if c is not None]
        return min(candidates) if candidates else None


def link_transfer(link: Link, request: LinkRequest) -> LinkFlow:
    """
    Issue a bare transfer; after the run the flow carries first_beat_cycle and last_beat_cycle.
    """
    return link.transfer(request)


class L2Memory:
    """Word-interleaved multi-banked L2; one access per bank per cycle."""

    def __init__(self, cfg: L2Config) -> None:
        self.cfg = cfg
        self.conflicts = 0
        self.accesses = 0
        self._reserved: Dict[int, Set[int]] = {}
        self._pruned_below = 0

    def l2_access(self, addr: int, nbytes: int, cycle: int) -> List[int]:
        """
        Reserve the banks holding [addr, addr + nbytes).

        :return: Grant cycle of every touched bank word, in address order
        :raises InterconnectError: When the range leaves the L2
        """
        if addr < 0 or nbytes <= 0 or addr + nbytes > self.cfg.capacity_bytes:
            raise InterconnectError(
                f"L2 access [{addr}, {addr + nbytes}) outside the {self.cfg.capacity_bytes}-byte L2"
            )
        word = self.cfg.bank_word_bytes
        grants = []
        for index in range(addr // word, (addr + nbytes - 1) // word + 1):
            bank = index % self.cfg.banks
            granted = cycle
            while bank in self._reserved.get(granted, ()):
                granted += 1
            if granted != cycle:
                self.conflicts += 1
            self._reserved.setdefault(granted, set()).add(bank)
            grants.append(granted)
        self.accesses += len(grants)
        return grants

    def release_before(self, cycle: int) -> None:
        if cycle - self._pruned_below < 1024:
            return
        for stale in [c for c in self._reserved if c < cycle]:
            del self._reserved[stale]
        self._pruned_below = cycle


@dataclass(frozen=True)
class Endpoint:
    cluster: int
    memory: "L1Memory"
    word_addr: int
    port: str


@dataclass
class Delivery:
    """Completion record of an L2 read, one entry per destination cluster."""

    flow: LinkFlow
    done_cycles: Dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class L2Transfer:
    """One finished CL <-> L2 transfer, from its issue cycle to its last landing."""

    direction: str
    start: int
    end: int
    nbytes: int


class Fabric:
    """
    Interconnect of one system: CL <-> L2 pools, neighbour links and the L2.

    aggregate_shared accounting puts reads and writes in one pool,
    per_direction gives each direction its own capacity.
    """

    def __init__(self, sim: Simulator, arch: ValidatedArch) -> None:
        self.sim = sim
        self.arch = arch
        link = arch.interconnect
        self.l2 = L2Memory(arch.l2)
        capacity, latency = link.bandwidth_bits_per_cycle, link.latency_cycles
        if link.accounting == Accounting.PER_DIRECTION:
            self.read_pool = Link(sim, "fabric.rd", capacity, latency, link.broadcast_enabled)
            self.write_pool = Link(sim, "fabric.wr", capacity, latency)
        else:
            self.read_pool = Link(sim, "fabric", capacity, latency, link.broadcast_enabled)
            self.write_pool = self.read_pool
        self.port_words = max(1, arch.cluster.dma_port_bytes // L1_WORD_BYTES)
        self.readahead_words = 2 * self.port_words
        self._peers: Dict[Tuple[int, int], Link] = {}
        self._memories: Dict[int, "L1Memory"] = {}
        self.l2_read_bytes = 0
        self.l2_write_bytes = 0
        self.broadcast_saved_bytes = 0
        self.transfers: List[L2Transfer] = []

    def attach(self, cluster: int, memory: "L1Memory") -> None:
        self._memories[cluster] = memory

    def endpoint(self, cluster: int, word_addr: int, port: str) -> Endpoint:
        try:
            return Endpoint(cluster, self._memories[cluster], word_addr, port)
        except KeyError:
            raise MappingError(f"cluster {cluster} is not attached to the fabric") from None

    def links(self) -> List[Link]:
        pools = [self.read_pool] if self.read_pool is self.write_pool else [self.read_pool, self.write_pool]
        return pools + [self._peers[key] for key in sorted(self._peers)]

    def peer_link(self, src: int, dst: int) -> Link:
        if not self.arch.interconnect.peer_links:
            return self.write_pool
        key = (src, dst)
        if key not in self._peers:
            cfg = self.arch.interconnect
            self._peers[key] = Link(self.sim, f"peer.cl{src}-cl{dst}", cfg.bandwidth_bits_per_cycle, cfg.latency_cycles)
        return self._peers[key]

    @property
    def busy_cycles(self) -> int:
        return sum(link.busy_cycles for link in self.links())

    @property
    def wait_cycles(self) -> Dict[str, int]:
        totals: Dict[str, int] = {}
        for link in self.links():
            for requester, cycles in link.wait_cycles.items():
                totals[requester] = totals.get(requester, 0) + cycles
        return totals

    def window_traffic(self, start: int, end: int) -> Tuple[int, int]:
        """L2 read and write bytes of the transfers issued and finished within [start, end]."""
        inside = [t for t in self.transfers if t.start >= start and t.end <= end]
        return (
            sum(t.nbytes for t in inside if t.direction == READ),
            sum(t.nbytes for t in inside if t.direction == WRITE),
        )

    def _sink_streams(
        self,
        sinks: Sequence[Endpoint],
        nbytes: int,
        finished: DoneCallback,
        done_cycles: Optional[Dict[int, int]] = None,
    ) -> List["L1Stream"]:
        words = math.ceil(nbytes / L1_WORD_BYTES)
        pending = [len(sinks)]

        def landed_at(cluster: int) -> DoneCallback:
            def landed(cycle: int) -> None:
                if done_cycles is not None:
                    done_cycles[cluster] = cycle
                pending[0] -= 1
                if pending[0] == 0:
                    finished(cycle)

            return landed

        return [
            sink.memory.open_stream(
                sink.port, sink.word_addr, words, self.port_words, available=0, on_done=landed_at(sink.cluster)
            )
            for sink in sinks
        ]

    def _source_stream(self, source: Endpoint, flow: LinkFlow, nbytes: int) -> "L1Stream":
        fed = [0]

        def feed(cycle: int, granted: int, wanted: int) -> None:
            bits = min(granted * L1_WORD_BYTES * 8, flow.total_bits - fed[0])
            fed[0] += bits
            flow.supply(bits, cycle + 1)

        return source.memory.open_stream(
            source.port,
            source.word_addr,
            math.ceil(nbytes / L1_WORD_BYTES),
            self.port_words,
            available=self.readahead_words,
            on_cycle=feed,
        )

    @staticmethod
    def _progress(flow: LinkFlow, nbytes: int, unit: int) -> int:
        """Whole units of ``unit`` bytes transmitted so far; the tail counts once the flow is done."""
        if flow.done:
            return math.ceil(nbytes / unit)
        return (flow.sent_bits // 8) // unit

    def _l2_touch(self, l2_addr: int, nbytes: int, done_words: int, new_words: int, cycle: int) -> int:
        word = self.arch.l2.bank_word_bytes
        start = l2_addr + done_words * word
        size = min(new_words * word, l2_addr + nbytes - start)
        self.l2.release_before(self.sim.now - 1)
        return max(self.l2.l2_access(start, size, cycle))

    def read_l2(
        self, requester: str, l2_addr: int, nbytes: int, sinks: Sequence[Endpoint], on_done: DoneCallback
    ) -> Delivery:
        """
        Move nbytes from L2 into one L1, or into several with a single broadcast occupancy.
        """
        if not sinks:
            raise InterconnectError(f"{requester}: L2 read with an empty destination set")
        request = LinkRequest(requester, nbytes, tuple(f"cl{sink.cluster}" for sink in sinks), self.sim.now)
        flow = self.read_pool.transfer(request)
        delivery = Delivery(flow)
        self.l2_read_bytes += nbytes
        self.broadcast_saved_bytes += nbytes * (len(sinks) - 1)

        issued = self.sim.now

        def finished(cycle: int) -> None:
            self.transfers.append(L2Transfer(READ, issued, cycle, nbytes))
            on_done(cycle)

        l1_streams = self._sink_streams(sinks, nbytes, finished, delivery.done_cycles)
        state = {"l2_words": 0, "l1_words": 0, "landing": 0}
        word = self.arch.l2.bank_word_bytes

        def granted(cycle: int, bits: int) -> None:
            ready = cycle
            l2_words = self._progress(flow, nbytes, word)
            if l2_words > state["l2_words"]:
                last = self._l2_touch(l2_addr, nbytes, state["l2_words"], l2_words - state["l2_words"], cycle)
                ready = max(cycle, last)
                state["l2_words"] = l2_words
                flow.blocked_until = ready
            landing = max(state["landing"], ready + flow.latency)
            state["landing"] = landing
            l1_words = self._progress(flow, nbytes, L1_WORD_BYTES)
            if l1_words > state["l1_words"]:
                for stream in l1_streams:
                    stream.supply(l1_words - state["l1_words"], landing)
                state["l1_words"] = l1_words

        flow.on_grant = granted
        return delivery

    def broadcast_transfer(
        self, requester: str, l2_addr: int, nbytes: int, sinks: Sequence[Endpoint], on_done: DoneCallback
    ) -> Delivery:
        if not self.read_pool.broadcast_enabled:
            raise InterconnectError("broadcast requires a wireless interconnect with broadcast enabled")
        return self.read_l2(requester, l2_addr, nbytes, sinks, on_done)

    def write_l2(self, requester: str, source: Endpoint, l2_addr: int, nbytes: int, on_done: DoneCallback) -> LinkFlow:
        """Move nbytes from an L1 to L2; done when the last bank write is granted."""
        flow = self.write_pool.transfer(LinkRequest(requester, nbytes, (L2_ENDPOINT,), self.sim.now), bounded=True)
        self.l2_write_bytes += nbytes
        issued = self.sim.now
        stream = self._source_stream(source, flow, nbytes)
        word = self.arch.l2.bank_word_bytes
        state = {"l2_words": 0, "credited": 0, "done": 0}

        def granted(cycle: int, bits: int) -> None:
            self._credit(stream, flow, nbytes, state, cycle)
            l2_words = self._progress(flow, nbytes, word)
            if l2_words > state["l2_words"]:
                landing = cycle + flow.latency
                last = self._l2_touch(l2_addr, nbytes, state["l2_words"], l2_words - state["l2_words"], landing)
                state["l2_words"] = l2_words
                state["done"] = max(state["done"], last + 1)
                flow.blocked_until = last - flow.latency

        def sent(cycle: int) -> None:
            finish = max(state["done"], cycle + flow.latency + 1)
            self.transfers.append(L2Transfer(WRITE, issued, finish, nbytes))
            self.sim.schedule(finish, requester, lambda: on_done(finish))

        flow.on_grant = granted
        flow.on_sent = sent
        return flow

    def copy_l1(
        self, requester: str, source: Endpoint, sink: Endpoint, nbytes: int, on_done: DoneCallback
    ) -> LinkFlow:
        """Move nbytes between two cluster L1 memories over their neighbour link."""
        if source.cluster == sink.cluster:
            raise MappingError(f"{requester}: remote copy needs two distinct clusters, got cl{source.cluster} twice")
        link = self.peer_link(source.cluster, sink.cluster)
        flow = link.transfer(LinkRequest(requester, nbytes, (f"cl{sink.cluster}",), self.sim.now), bounded=True)
        stream = self._source_stream(source, flow, nbytes)
        (landing_stream,) = self._sink_streams([sink], nbytes, on_done)
        state = {"credited": 0, "l1_words": 0}

        def granted(cycle: int, bits: int) -> None:
            self._credit(stream, flow, nbytes, state, cycle)
            l1_words = self._progress(flow, nbytes, L1_WORD_BYTES)
            if l1_words > state["l1_words"]:
                landing_stream.supply(l1_words - state["l1_words"], cycle + flow.latency)
                state["l1_words"] = l1_words

        flow.on_grant = granted
        return flow

    def _credit(self, stream: "L1Stream", flow: LinkFlow, nbytes: int, state: Dict[str, int], cycle: int) -> None:
        consumed = self._progress(flow, nbytes, L1_WORD_BYTES)
        if consumed > state["credited"]:
            if stream.remaining > 0:
                stream.supply(consumed - state["credited"], cycle + 1)
            state["credited"] = consumed

    def summary(self) -> str:
        parts = [f"{link.name}: {link.busy_cycles} busy" for link in self.links()]
        package_logger.debug(f"Fabric {', '.join(parts)}; L2 conflicts {self.l2.conflicts}")
        return "; ".join(parts)
