#
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
import json
import pathlib
import random
import tempfile
import unittest

from aimcsim.arch_config import InterconnectKind, default_config, require_valid, with_clusters, with_interconnect
from aimcsim.engine import Phase
from aimcsim.errors import MappingError, WatchdogError
from aimcsim.harness import FIGURE_VARIANTS, REPORTED_SPEEDUPS, run_once
from aimcsim.metrics import roofline_for
from aimcsim.system import RunOptions, simulate
from aimcsim.tests import SimTestCase
from aimcsim.workload import LayerDescriptor, Strategy, benchmark_layers, build_plan, map_data_parallel

WIRELESS = dict(kind=InterconnectKind.WIRELESS, bandwidth=256, latency=1)


def _config(n_cl, kind=InterconnectKind.WIRED, bandwidth=256, latency=9, broadcast=False):
    return with_interconnect(with_clusters(default_config(), n_cl), kind, bandwidth, latency, broadcast)


def _simulate(cfg, strategy, pixels=64, **options):
    arch = require_valid(cfg)
    layers = benchmark_layers(strategy, cfg.n_clusters, arch.ima, pixels)
    plan = build_plan(strategy, layers, cfg.n_clusters, arch.ima)
    return simulate(arch, plan, RunOptions(iterations=pixels, **options))


class TestSingleCluster(SimTestCase):
    def test_one_tile_is_compute_bound(self):
        result = _simulate(_config(1), Strategy.DATA_PARALLEL, pixels=8)
        self.assertEqual(1, result.iterations)
        self.assertEqual(432, result.compute_bound_cycles)
        self.assertEqual(8 * 65536, result.total_macs)
        self.assertGreater(result.tot_exec_cycles, 432)
        self.assertEqual(2048, result.l2_read_bytes)
        self.assertEqual(2048, result.l2_write_bytes)

    def test_efficiency_stays_below_the_baseline(self):
        report = run_once(_config(1), Strategy.PIPELINING)
        self.assertGreaterEqual(report.eta_pct, 70.0)
        self.assertLessEqual(report.eta_pct, 95.0)
        self.assertGreaterEqual(report.tot_exec_cycles, report.compute_bound_cycles)

    def test_warmup_longer_than_the_run_is_dropped(self):
        result = _simulate(_config(2), Strategy.PIPELINING, pixels=8)
        self.assertEqual(0, result.warmup)
        self.assertEqual((0, result.iteration_done[-1]), result.window)


class TestRunOptions(unittest.TestCase):
    def test_negative_warmup(self):
        with self.assertRaises(MappingError):
            RunOptions(iterations=16, warmup=-1)

    def test_iterations_and_watchdog_must_be_positive(self):
        with self.assertRaises(MappingError):
            RunOptions(iterations=0)
        with self.assertRaises(MappingError):
            RunOptions(max_events=0)

    def test_zero_warmup_is_allowed(self):
        self.assertEqual(0, RunOptions(warmup=0).warmup)
        self.assertIsNone(RunOptions().warmup)


class TestMultiCrossbarLayers(SimTestCase):
    LAYERS = [LayerDescriptor(name, 512, 512, 1, 8, 8) for name in ("a", "b")]

    def _run(self, n_cl):
        arch = require_valid(with_clusters(default_config(), n_cl))
        plan = build_plan(Strategy.PIPELINING, self.LAYERS, n_cl, arch.ima)
        return plan, simulate(arch, plan)

    def test_one_cluster_per_crossbar_never_reprograms(self):
        plan, result = self._run(16)
        self.assertEqual(8, plan.n_clusters)
        self.assertEqual(8, result.iterations)
        reprograms = [e for e in result.timeline if e.resource.endswith(".ima") and e.phase == Phase.PROG]
        self.assertEqual([], reprograms)
        self.assertEqual(4 * 64 * 512, result.l2_read_bytes)
        self.assertEqual(4 * 64 * 256, result.l2_write_bytes)
        self.assertEqual(7 * 8 * 2 * 512 * 512, result.total_macs)
        self.assertGreaterEqual(result.tot_exec_cycles, result.compute_bound_cycles)

    def test_without_enough_clusters_layers_share_a_crossbar(self):
        plan, result = self._run(4)
        self.assertEqual(2, plan.n_clusters)
        reprograms = [e for e in result.timeline if e.resource.endswith(".ima") and e.phase == Phase.PROG]
        self.assertGreater(len(reprograms), 0)
        self.assertEqual(7 * 8 * 2 * 512 * 512, result.total_macs)

    def test_split_stages_are_faster_than_shared_crossbars(self):
        _, spread = self._run(16)
        _, shared = self._run(4)
        self.assertLess(spread.tot_exec_cycles, shared.tot_exec_cycles)


class TestSystemErrors(SimTestCase):
    def test_plan_larger_than_the_system(self):
        arch = require_valid(_config(2))
        with self.assertRaises(MappingError):
            simulate(arch, map_data_parallel(LayerDescriptor("conv", 256, 1024, 1, 8, 1), 4))

    def test_watchdog(self):
        with self.assertRaises(WatchdogError):
            _simulate(_config(2), Strategy.PIPELINING, max_events=50)


class TestBroadcast(SimTestCase):
    def test_input_is_read_once(self):
        for n_cl in (2, 4, 8, 16):
            with self.subTest(n_cl=n_cl):
                unicast = _simulate(_config(n_cl, broadcast=False, **WIRELESS), Strategy.DATA_PARALLEL, pixels=16)
                broadcast = _simulate(_config(n_cl, broadcast=True, **WIRELESS), Strategy.DATA_PARALLEL, pixels=16)
                self.assertEqual(n_cl * 16 * 256, unicast.l2_read_bytes)
                self.assertEqual(unicast.l2_read_bytes, n_cl * broadcast.l2_read_bytes)
                self.assertEqual((n_cl - 1) * broadcast.l2_read_bytes, broadcast.broadcast_saved_bytes)
                self.assertEqual(unicast.l2_write_bytes, broadcast.l2_write_bytes)
                self.assertIn("l2.bcast", broadcast.timeline.resources())

    def test_broadcast_does_not_slow_down_a_loaded_channel(self):
        for n_cl in (8, 16):
            with self.subTest(n_cl=n_cl):
                unicast = _simulate(_config(n_cl, broadcast=False, **WIRELESS), Strategy.DATA_PARALLEL, pixels=32)
                broadcast = _simulate(_config(n_cl, broadcast=True, **WIRELESS), Strategy.DATA_PARALLEL, pixels=32)
                self.assertLessEqual(broadcast.tot_exec_cycles, unicast.tot_exec_cycles)


class TestTrends(SimTestCase):
    def test_lower_latency_shortens_the_pipeline_fill(self):
        slow = _simulate(_config(4, latency=9), Strategy.PIPELINING)
        fast = _simulate(_config(4, latency=1), Strategy.PIPELINING)
        self.assertLess(sum(fast.input_wait_cycles), sum(slow.input_wait_cycles))
        self.assertLess(fast.iteration_done[0], slow.iteration_done[0])

    def test_pipelining_efficiency_is_flat(self):
        etas = [run_once(_config(n_cl), Strategy.PIPELINING).eta_pct for n_cl in (2, 4, 8, 16)]
        self.assertGreater(min(etas), 60.0)
        self.assertLessEqual(max(etas) - min(etas), 5.0)

    def test_wireless_speedups_at_sixteen_clusters(self):
        base = with_clusters(default_config(), 16)
        reports = [run_once(variant.apply(base), Strategy.DATA_PARALLEL) for variant in FIGURE_VARIANTS]
        wireless = reports[-1]
        ratios = [wireless.achieved_gmacs / wired.achieved_gmacs for wired in reports[:-1]]
        self.assertGreater(ratios[0], ratios[1])
        self.assertGreater(ratios[1], ratios[2])
        for reported, ratio in zip(REPORTED_SPEEDUPS, ratios):
            self.assertGreaterEqual(ratio, 0.75 * reported)
            self.assertLessEqual(ratio, 1.25 * reported)


class TestDeterminism(SimTestCase):
    def test_identical_runs(self):
        cfg = _config(4)
        first = run_once(cfg, Strategy.DATA_PARALLEL, options=RunOptions(iterations=16))
        second = run_once(cfg, Strategy.DATA_PARALLEL, options=RunOptions(iterations=16))
        self.assertEqual(first.to_csv_row(), second.to_csv_row())

    def test_trace(self):
        with tempfile.TemporaryDirectory() as tmp:
            traces = []
            for name in ("first.jsonl", "second.jsonl"):
                path = pathlib.Path(tmp) / name
                run_once(_config(2), Strategy.PIPELINING, options=RunOptions(iterations=16), trace=path)
                traces.append(path.read_text(encoding="utf-8"))
        self.assertEqual(traces[0], traces[1])

        records = [json.loads(line) for line in traces[0].splitlines()]
        phases = {phase.value for phase in Phase}
        last_end = {}
        for record in records:
            self.assertIn(record["phase"], phases)
            self.assertLess(record["start"], record["end"])
            self.assertGreaterEqual(record["start"], last_end.get(record["resource"], 0))
            last_end[record["resource"]] = record["end"]
        self.assertIn("cl1.ima", last_end)
        self.assertTrue(any(record["phase"] == "stream-in" for record in records))


class TestLowerBounds(SimTestCase):
    def test_random_configurations_respect_both_bounds(self):
        rng = random.Random(2026)
        base = default_config()
        for trial in range(200):
            n_cl = rng.randint(1, 4)
            strategy = rng.choice([Strategy.PIPELINING, Strategy.DATA_PARALLEL])
            kind = rng.choice([InterconnectKind.WIRED, InterconnectKind.WIRELESS])
            broadcast = kind == InterconnectKind.WIRELESS and rng.random() < 0.5
            cfg = with_interconnect(
                with_clusters(base, n_cl), kind, rng.choice([64, 128, 256]), rng.choice([1, 9]), broadcast
            )
            w_in, h_in = rng.randint(1, 6), rng.randint(1, 3)
            if strategy == Strategy.PIPELINING:
                channels = [rng.randint(1, 512) for _ in range(rng.randint(2, 5))]
                layers = [
                    LayerDescriptor(f"l{index}", c_in, c_out, 1, w_in, h_in)
                    for index, (c_in, c_out) in enumerate(zip(channels, channels[1:]))
                ]
            else:
                layers = [LayerDescriptor("conv", rng.randint(1, 512), rng.randint(1, 512), 1, w_in, h_in)]

            with self.subTest(trial=trial, n_cl=n_cl, strategy=strategy.value, link=cfg.interconnect.label):
                arch = require_valid(cfg)
                result = simulate(arch, build_plan(strategy, layers, n_cl, arch.ima))
                self.assertGreaterEqual(result.tot_exec_cycles, result.compute_bound_cycles)
                self.assertGreaterEqual(result.tot_exec_cycles, roofline_for(result))

    def test_default_warmup_counts_only_work_inside_the_window(self):
        arch = require_valid(_config(1, bandwidth=64))
        layers = [LayerDescriptor("l0", 334, 495, 1, 8, 3)]
        result = simulate(arch, build_plan(Strategy.PIPELINING, layers, 1, arch.ima))
        self.assertEqual(1, result.warmup)
        self.assertGreater(result.window[0], 0)
        self.assertGreater(result.compute_bound_cycles, 0)
        self.assertGreaterEqual(result.tot_exec_cycles, result.compute_bound_cycles)
        self.assertGreaterEqual(result.tot_exec_cycles, roofline_for(result))
        self.assertLess(result.window_read_bytes, result.l2_read_bytes)


if __name__ == "__main__":
    unittest.main()
