#
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
import json
import unittest

from aimcsim.engine import ClockedResource, Phase, Simulator, Timeline
from aimcsim.errors import SchedulingError, WatchdogError


class _Pulses(ClockedResource):
    def __init__(self, sim, cycles):
        super().__init__(sim, "pulses")
        self.pending = sorted(cycles)
        self.stepped = []

    def step(self, cycle):
        self.stepped.append(cycle)
        self.pending = [c for c in self.pending if c > cycle]

    def next_active_cycle(self, cycle):
        upcoming = [c for c in self.pending if c >= cycle]
        return upcoming[0] if upcoming else None


class TestSimulator(unittest.TestCase):
    def test_ties_run_in_schedule_order(self):
        sim = Simulator()
        order = []
        sim.schedule(5, "a", lambda: order.append("a"))
        sim.schedule(3, "b", lambda: order.append("b"))
        sim.schedule(5, "c", lambda: order.append("c"))
        final, _ = sim.run_until_idle()
        self.assertEqual(["b", "a", "c"], order)
        self.assertEqual(5, final)
        self.assertEqual(3, sim.events_processed)

    def test_scheduling_in_the_past(self):
        sim = Simulator()
        sim.schedule(5, "late", lambda: sim.schedule(2, "past", lambda: None))
        with self.assertRaises(SchedulingError):
            sim.run_until_idle()

    def test_watchdog(self):
        sim = Simulator(max_events=100)

        def again():
            sim.after(1, "spin", again)

        sim.schedule(0, "spin", again)
        with self.assertRaises(WatchdogError):
            sim.run_until_idle()

    def test_zero_delay_runs_in_the_same_cycle(self):
        sim = Simulator()
        seen = []
        sim.schedule(4, "a", lambda: sim.after(0, "b", lambda: seen.append(sim.now)))
        sim.run_until_idle()
        self.assertEqual([4], seen)


class TestTimeline(unittest.TestCase):
    def test_contiguous_phases_merge(self):
        timeline = Timeline()
        timeline.add("cl0.ima", Phase.EVAL, 0, 5)
        timeline.add("cl0.ima", Phase.EVAL, 5, 8)
        timeline.add("cl0.ima", Phase.STREAM_OUT, 8, 10)
        self.assertEqual(2, len(timeline))
        self.assertEqual(8, timeline.for_resource("cl0.ima")[0].end)
        self.assertEqual(8, timeline.busy_cycles("cl0.ima", [Phase.EVAL]))

    def test_overlap_is_rejected(self):
        timeline = Timeline()
        timeline.add("cl0.ima", Phase.EVAL, 0, 5)
        with self.assertRaises(SchedulingError):
            timeline.add("cl0.ima", Phase.STREAM_OUT, 4, 6)

    def test_negative_duration_is_rejected(self):
        with self.assertRaises(SchedulingError):
            Timeline().add("cl0.ima", Phase.EVAL, 5, 4)

    def test_empty_entries_are_dropped(self):
        timeline = Timeline()
        timeline.add("cl0.core", Phase.WAIT_EVENT, 3, 3)
        self.assertEqual(0, len(timeline))

    def test_jsonl(self):
        timeline = Timeline()
        timeline.add("cl1.dma0", Phase.DMA_READ, 2, 9)
        record = json.loads(timeline.to_jsonl())
        self.assertEqual({"resource": "cl1.dma0", "phase": "dma-read", "start": 2, "end": 9}, record)


class TestClockedResource(unittest.TestCase):
    def test_ticks_only_while_busy(self):
        sim = Simulator()
        pulses = _Pulses(sim, [0, 1, 2, 7])
        pulses.wake(0)
        final, _ = sim.run_until_idle()
        self.assertEqual([0, 1, 2, 7], pulses.stepped)
        self.assertEqual(8, final)

    def test_duplicate_wakes_step_once(self):
        sim = Simulator()
        pulses = _Pulses(sim, [3])
        pulses.wake(3)
        pulses.wake(3)
        sim.run_until_idle()
        self.assertEqual([3], pulses.stepped)


if __name__ == "__main__":
    unittest.main()
