#
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
import contextlib
import csv
import io
import json
import pathlib
import tempfile
import unittest

from aimcsim.arch_config import default_config, with_clusters
from aimcsim.cli import EXIT_IO_ERROR, EXIT_MODEL_ERROR, EXIT_OK, main
from aimcsim.errors import SweepError
from aimcsim.harness import (
    FIGURE_CLUSTERS,
    FIGURE_VARIANTS,
    REPORTED_SPEEDUPS,
    SweepSpec,
    describe_layers,
    reproduce_figure4,
    run_once,
    run_sweep,
)
from aimcsim.metrics import CSV_COLUMNS
from aimcsim.system import RunOptions
from aimcsim.tests import SimTestCase
from aimcsim.workload import LayerDescriptor, Strategy

BOTH = (Strategy.PIPELINING, Strategy.DATA_PARALLEL)
SMALL = RunOptions(iterations=16)


class TestSweepSpec(unittest.TestCase):
    def test_points_are_lexicographic(self):
        spec = SweepSpec((4, 1), FIGURE_VARIANTS[:2], BOTH)
        points = spec.points()
        self.assertEqual(8, len(points))
        self.assertEqual((1, 0, Strategy.DATA_PARALLEL), points[0])
        self.assertEqual((1, 0, Strategy.PIPELINING), points[1])
        self.assertEqual((4, 1, Strategy.PIPELINING), points[-1])

    def test_cap(self):
        with self.assertRaises(SweepError):
            SweepSpec(FIGURE_CLUSTERS, FIGURE_VARIANTS, BOTH, cap=39)

    def test_empty_axis(self):
        with self.assertRaises(SweepError):
            SweepSpec((), FIGURE_VARIANTS, BOTH)

    def test_jobs(self):
        with self.assertRaises(SweepError):
            SweepSpec((1,), FIGURE_VARIANTS, BOTH, jobs=0)


class TestSweep(SimTestCase):
    def test_figure_sweep_has_one_row_per_point(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = pathlib.Path(tmp) / "nested" / "sweep.csv"
            spec = SweepSpec(FIGURE_CLUSTERS, FIGURE_VARIANTS, BOTH, out=out)
            text = run_sweep(spec, default_config(), SMALL)
            self.assertEqual(text, out.read_text(encoding="utf-8"))

        rows = list(csv.DictReader(io.StringIO(text)))
        self.assertEqual(list(CSV_COLUMNS), list(csv.reader(io.StringIO(text)))[0])
        self.assertEqual(40, len(rows))
        self.assertEqual(("1", "data_parallel"), (rows[0]["n_clusters"], rows[0]["strategy"]))
        self.assertEqual(("16", "pipelining"), (rows[-1]["n_clusters"], rows[-1]["strategy"]))
        for row in rows:
            self.assertGreater(float(row["eta_pct"]), 0.0)
            self.assertIn(row["broadcast"], ("true", "false"))

    def test_single_point_matches_run_once(self):
        variant = FIGURE_VARIANTS[3]
        spec = SweepSpec((2,), (variant,), (Strategy.DATA_PARALLEL,))
        text = run_sweep(spec, default_config(), SMALL)
        expected = run_once(variant.apply(with_clusters(default_config(), 2)), Strategy.DATA_PARALLEL, options=SMALL)
        self.assertEqual([list(CSV_COLUMNS), expected.to_csv_row()], list(csv.reader(io.StringIO(text))))

    def test_efficiency_column_is_consistent(self):
        spec = SweepSpec((1, 4), FIGURE_VARIANTS[::3], BOTH)
        f_clock = default_config().f_clock
        for row in csv.DictReader(io.StringIO(run_sweep(spec, default_config(), SMALL))):
            achieved = 1e-9 * f_clock * int(row["total_macs"]) / int(row["tot_exec_cycles"])
            self.assertAlmostEqual(
                achieved / float(row["baseline_gmacs"]) * 100, float(row["eta_pct"]), delta=1e-6
            )

    def test_sweep_is_deterministic(self):
        spec = SweepSpec((2,), FIGURE_VARIANTS[::3], BOTH)
        first = run_sweep(spec, default_config(), SMALL)
        second = run_sweep(spec, default_config(), SMALL)
        self.assertEqual(first, second)


class TestReproduction(SimTestCase):
    def test_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            summary = reproduce_figure4(default_config(), SMALL, tmp)
            names = sorted(path.name for path in pathlib.Path(tmp).iterdir())
            text = (pathlib.Path(tmp) / "summary.txt").read_text(encoding="utf-8")

        self.assertEqual(["efficiency.csv", "summary.txt", "sweep.csv", "throughput.csv"], names)
        self.assertEqual(16, summary.n_clusters)
        self.assertEqual(40, len(summary.reports))
        self.assertEqual(list(REPORTED_SPEEDUPS), list(summary.reported_speedups.values()))
        self.assertEqual(3, len(summary.simulated_speedups))
        self.assertEqual(4, len(summary.pipelining_spread))
        self.assertIn("wired-64b-9c", text)


class TestLayerDescription(SimTestCase):
    LAYERS = [LayerDescriptor(name, 512, 512, 1, 8, 8) for name in ("a", "b")]

    def test_one_stage_per_layer(self):
        table = describe_layers(default_config(), self.LAYERS)
        self.assertEqual([4, 4], table.crossbars)
        self.assertEqual((8, 8), (table.total_crossbars, table.clusters_used))
        self.assertEqual([432, 432], table.tile_cycles)
        self.assertEqual((0, 432), (table.timing.critical_stage, table.timing.interval))
        self.assertIn("one stage per layer", table.to_text())

    def test_shared_crossbars_pay_for_reprogramming(self):
        table = describe_layers(with_clusters(default_config(), 4), self.LAYERS)
        self.assertEqual(2, table.clusters_used)
        self.assertEqual([32 * 54 + 4 * 150] * 2, table.tile_cycles)
        self.assertIn("layers serialized", table.to_text())


class TestCommandLine(SimTestCase):
    def test_validate_bundled_config(self):
        self.assertEqual(EXIT_OK, main(["validate-config"]))

    def test_invalid_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "bad.yaml"
            path.write_text("f_clock: 350000000\nn_clusters: 0\ninterconnect:\n  kind: wired\n", encoding="utf-8")
            self.assertEqual(EXIT_MODEL_ERROR, main(["validate-config", "--config", str(path)]))

    def test_missing_config(self):
        self.assertEqual(EXIT_IO_ERROR, main(["validate-config", "--config", "/nonexistent/system.yaml"]))

    def test_seedless_takes_no_value(self):
        self.assertEqual(EXIT_OK, main(["validate-config", "--seedless"]))
        self.assertEqual(EXIT_MODEL_ERROR, main(["validate-config", "--seedless", "42"]))

    def test_run_writes_a_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = pathlib.Path(tmp) / "report.json"
            code = main(
                ["run", "--strategy", "data_parallel", "--clusters", "2", "--iterations", "16", "--out", str(out)]
            )
            report = json.loads(out.read_text(encoding="utf-8"))
        self.assertEqual(EXIT_OK, code)
        self.assertEqual("data_parallel", report["strategy"])
        self.assertEqual(2, report["n_clusters"])

    def test_negative_warmup_exits_with_one(self):
        self.assertEqual(EXIT_MODEL_ERROR, main(["run", "--clusters", "2", "--iterations", "16", "--warmup", "-1"]))

    def test_run_exports_the_plan(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = pathlib.Path(tmp) / "plan.json"
            code = main(["run", "--clusters", "2", "--iterations", "16", "--plan-out", str(out)])
            plan = json.loads(out.read_text(encoding="utf-8"))
        self.assertEqual(EXIT_OK, code)
        self.assertEqual("pipelining", plan["strategy"])
        self.assertEqual(2, len(plan["assignments"]))
        self.assertEqual({"layer": 1, "src": 0, "dst": 1}, plan["edges"][1])

    def test_sweep_variants_from_the_command_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = pathlib.Path(tmp) / "sweep.csv"
            code = main(
                [
                    "sweep",
                    "--clusters",
                    "2",
                    "--strategy",
                    "data_parallel",
                    "--variant",
                    "wired:128:9",
                    "--variant",
                    "config",
                    "--iterations",
                    "16",
                    "--out",
                    str(out),
                ]
            )
            rows = list(csv.DictReader(io.StringIO(out.read_text(encoding="utf-8"))))
        self.assertEqual(EXIT_OK, code)
        self.assertEqual(["wired-128b-9c", "wired-256b-9c"], [row["interconnect"] for row in rows])

    def test_malformed_variant(self):
        with self.assertRaises(SystemExit):
            main(["sweep", "--variant", "wired:fast"])

    def test_validate_reports_layer_crossbars(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "layers.txt"
            path.write_text("a 512 512 1 8 8 1\nb 512 512 1 8 8 1\n", encoding="utf-8")
            stdout = io.StringIO()
            with contextlib.redirect_stdout(stdout):
                code = main(["validate-config", "--layers", str(path)])
        self.assertEqual(EXIT_OK, code)
        self.assertIn("total crossbars 8 for 16 clusters", stdout.getvalue())
        self.assertIn("stage interval 432 cycles", stdout.getvalue())

    def test_layer_table_errors_exit_with_one(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "layers.txt"
            path.write_text("conv1 3 64\n", encoding="utf-8")
            self.assertEqual(EXIT_MODEL_ERROR, main(["run", "--layers", str(path)]))


if __name__ == "__main__":
    unittest.main()
