# *****************************************************************************
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
# *****************************************************************************

"""
Deterministic discrete-event kernel with integer cycle timestamps.

Events are ordered by (time, seq), seq being a monotone insertion counter, so
two events at the same cycle always run in the order they were scheduled.
Per-cycle arbiters (L1 banks, links) derive from ClockedResource: the tick
executed at time t + 1 arbitrates cycle t over every demand whose start cycle
is at most t.
"""

import enum
import heapq
import json
import pathlib

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Set, Tuple, Union

from aimcsim.errors import SchedulingError, WatchdogError
from aimcsim.logger import package_logger

DEFAULT_MAX_EVENTS = 50_000_000


class Phase(str, enum.Enum):
    STREAM_IN = "stream-in"
    EVAL = "eval"
    STREAM_OUT = "stream-out"
    DMA_READ = "dma-read"
    DMA_WRITE = "dma-write"
    WAIT_EVENT = "wait-event"
    PROG = "prog"
    CONFLICT_STALL = "conflict-stall"
    IDLE = "idle"


@dataclass(frozen=True)
class SimEvent:
    time: int
    seq: int
    target: str
    payload: Callable[[], None]


@dataclass
class TimelineEntry:
    resource: str
    phase: Phase
    start: int
    end: int

    def to_dict(self) -> Dict[str, Union[str, int]]:
        return {"resource": self.resource, "phase": self.phase.value, "start": self.start, "end": self.end}


class Timeline:
    """
    Busy/idle phases of every modelled resource.

    Entries of one resource never overlap and are appended in start order;
    an entry that continues the previous one of the same phase is merged.
    """

    def __init__(self) -> None:
        self.entries: List[TimelineEntry] = []
        self._last: Dict[str, TimelineEntry] = {}

    def add(self, resource: str, phase: Phase, start: int, end: int) -> None:
        if end < start:
            raise SchedulingError(f"{resource}: {phase.value} ends at {end} before it starts at {start}")
        if end == start:
            return
        last = self._last.get(resource)
        if last is not None:
            if start < last.end:
                raise SchedulingError(
                    f"{resource}: {phase.value} at {start} overlaps {last.phase.value} ending at {last.end}"
                )
            if last.phase == phase and last.end == start:
                last.end = end
                return
        entry = TimelineEntry(resource, phase, start, end)
        self.entries.append(entry)
        self._last[resource] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TimelineEntry]:
        return iter(self.entries)

    def resources(self) -> List[str]:
        return sorted(self._last)

    def for_resource(self, resource: str) -> List[TimelineEntry]:
        return [entry for entry in self.entries if entry.resource == resource]

    def busy_cycles(self, resource: str, phases: Optional[Iterable[Phase]] = None) -> int:
        selected: Optional[Set[Phase]] = set(phases) if phases is not None else None
        return sum(
            entry.end - entry.start
            for entry in self.entries
            if entry.resource == resource and (selected is None or entry.phase in selected)
        )

    def to_jsonl(self) -> str:
        return "".join(json.dumps(entry.to_dict()) + "\n" for entry in self.entries)

    def write_trace(self, path: Union[str, pathlib.Path]) -> None:
        """
        Write the timeline as JSON lines, one object per entry.

        :param path: Output file, keys are resource, phase, start and end
        """
        path = pathlib.Path(path)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        package_logger.info(f"Wrote {len(self.entries)} trace entries to {path}")


class Simulator:
    """
    Single-threaded event loop.

    :param max_events: Watchdog cap on processed events, exceeded only by a livelocked model
    """

    def __init__(self, max_events: int = DEFAULT_MAX_EVENTS) -> None:
        self.now = 0
        self.max_events = max_events
        self.events_processed = 0
        self.timeline = Timeline()
        self._queue: List[Tuple[int, int, SimEvent]] = []
        self._seq = 0

    def schedule(self, time: int, target: str, action: Callable[[], None]) -> SimEvent:
        if time < self.now:
            raise SchedulingError(f"{target}: cannot schedule at cycle {time}, simulation is at cycle {self.now}")
        event = SimEvent(time=time, seq=self._seq, target=target, payload=action)
        self._seq += 1
        heapq.heappush(self._queue, (event.time, event.seq, event))
        return event

    def after(self, delay: int, target: str, action: Callable[[], None]) -> SimEvent:
        return self.schedule(self.now + delay, target, action)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def run_until_idle(self) -> Tuple[int, Timeline]:
        """
        Process events in (time, seq) order until the queue is empty.

        :return: The final cycle count and the timeline
        :raises WatchdogError: When more than max_events events are processed
        """
        while self._queue:
            time, _, event = heapq.heappop(self._queue)
            self.now = time
            self.events_processed += 1
            if self.events_processed > self.max_events:
                package_logger.error(f"Watchdog tripped at cycle {time} on {event.target}")
                raise WatchdogError(
                    f"more than {self.max_events} events processed, last target {event.target} at cycle {time}"
                )
            event.payload()

        package_logger.debug(f"Simulation idle at cycle {self.now} after {self.events_processed} events")
        return self.now, self.timeline


class ClockedResource:
    """
    Base class of the per-cycle arbiters.

    Subclasses implement step(cycle) and next_active_cycle(cycle). Ticks are
    only scheduled while there is work, so idle resources cost nothing.
    """

    def __init__(self, sim: Simulator, name: str) -> None:
        self.sim = sim
        self.name = name
        self._ticks: Set[int] = set()
        self._last_cycle = -1

    def wake(self, cycle: int) -> None:
        time = max(cycle, self.sim.now) + 1
        if time in self._ticks:
            return
        self._ticks.add(time)
        self.sim.schedule(time, self.name, lambda: self._tick(time))

    def _tick(self, time: int) -> None:
        self._ticks.discard(time)
        cycle = time - 1
        if cycle <= self._last_cycle:
            return
        self._last_cycle = cycle
        self.step(cycle)
        upcoming = self.next_active_cycle(cycle + 1)
        if upcoming is not None:
            self.wake(upcoming)

    def step(self, cycle: int) -> None:
        raise NotImplementedError

    def next_active_cycle(self, cycle: int) -> Optional[int]:
        raise NotImplementedError
