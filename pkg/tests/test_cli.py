#!/usr/bin/env python3
"""
Unit tests for the command-line entry point (main.py) and the experiment
manifests it runs.
"""
import csv
import json
import os
import shutil
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from io import StringIO

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from main import cli_main
from services import experiments
from services.lib.errors import SpecFormatError
from services.lib.pencil import laplace_halfpi_oracle


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class CliTestCase(unittest.TestCase):

    def setUp(self):
        """Save original environment, clear lab variables and make an output directory"""
        self.original_env = os.environ.copy()
        for key in list(os.environ.keys()):
            if key.startswith('LAB_'):
                del os.environ[key]
        self.out = tempfile.mkdtemp(prefix="lab-test-")

    def tearDown(self):
        os.environ.clear()
        os.environ.update(self.original_env)
        shutil.rmtree(self.out, ignore_errors=True)

    def run_cli(self, *argv):
        buf = StringIO()
        with redirect_stdout(buf):
            code = cli_main(list(argv) + ["--out", self.out])
        return code, buf.getvalue()

    def path(self, *parts):
        return os.path.join(self.out, *parts)


class TestCommands(CliTestCase):

    def test_examples_list(self):
        code, text = self.run_cli("examples", "list")
        self.assertEqual(code, 0)
        for example_id in ("case1", "case2", "case3", "bitsadze-border"):
            self.assertIn(example_id, text)

    def test_unknown_examples_action(self):
        code, _ = self.run_cli("examples", "show")
        self.assertEqual(code, 2)

    def test_spectrum_border_case(self):
        code, _ = self.run_cli("spectrum", "--example", "case2")
        self.assertEqual(code, 0)
        rows = read_csv(self.path("spectrum.csv"))
        self.assertEqual(len(rows), 1)
        self.assertAlmostEqual(float(rows[0]["re"]), 0.0, places=8)
        self.assertAlmostEqual(float(rows[0]["im"]), -1.0, places=8)
        self.assertEqual(rows[0]["kind"], "proper")
        with open(self.path("spectrum.json")) as f:
            self.assertEqual(len(json.load(f)["orbits"]), 1)

    def test_spectrum_empty_band(self):
        code, _ = self.run_cli("spectrum", "--example", "case1")
        self.assertEqual(code, 0)
        self.assertEqual(read_csv(self.path("spectrum.csv")), [])

    def test_spectrum_from_s(self):
        code, _ = self.run_cli("spectrum", "--s", "-1")
        self.assertEqual(code, 0)
        (row,) = read_csv(self.path("spectrum.csv"))
        self.assertAlmostEqual(float(row["im"]), -2.0 / 3.0, places=8)
        self.assertEqual(row["kind"], "improper")

    def test_spectrum_needs_a_source(self):
        code, _ = self.run_cli("spectrum")
        self.assertEqual(code, 2)

    def test_unknown_example_is_structural(self):
        code, _ = self.run_cli("classify", "--example", "case4")
        self.assertEqual(code, 2)

    def test_classify_violation_writes_witness(self):
        code, text = self.run_cli("classify", "--example", "case3")
        self.assertEqual(code, 0)
        self.assertIn("Violates", text)
        with open(self.path("verdict.json")) as f:
            verdict = json.load(f)
        self.assertEqual(verdict["kind"], "Violates")
        self.assertTrue(os.path.exists(verdict["witness"]["profiles_csv_path"]))
        self.assertEqual(len(read_csv(self.path("witness_w2_levels.csv"))), 16)

    def test_witness_refused_for_preserving_case(self):
        code, _ = self.run_cli("witness", "--example", "case1")
        self.assertEqual(code, 2)

    def test_consistency(self):
        code, _ = self.run_cli("consistency", "--example", "case2")
        self.assertEqual(code, 0)
        with open(self.path("consistency.json")) as f:
            self.assertEqual(json.load(f)["orbits"]["0"]["rank"], 1)
        code, _ = self.run_cli("consistency", "--example", "case1")
        self.assertEqual(code, 2)

    def test_sweep_matches_closed_form(self):
        code, _ = self.run_cli("sweep")
        self.assertEqual(code, 0)
        rows = read_csv(self.path("sweep.csv"))
        self.assertEqual(len(rows), 41)
        for row in rows:
            with self.subTest(s=row["s"]):
                s = float(row["s"])
                self.assertEqual(row["case_label"], laplace_halfpi_oracle(0.0 if abs(s) < 1e-12 else s).label)

    def test_manifest_written(self):
        self.run_cli("spectrum", "--example", "case2", "--seed", "7")
        with open(self.path("manifest.json")) as f:
            manifest = json.load(f)
        self.assertEqual(manifest["command"], "spectrum")
        self.assertEqual(manifest["spec_path"], "case2")
        self.assertEqual(manifest["seed"], 7)
        self.assertEqual(manifest["output_dir"], self.out)
        self.assertIn(manifest["tool_version_source"], ("env", "git", "fallback"))

    def test_pinned_version(self):
        from __version__ import resolve_version

        os.environ['APP_VERSION'] = '2026.10.17-42'
        self.assertEqual(resolve_version(), ('2026.10.17-42', 'env'))

    def test_invalid_environment_exits(self):
        os.environ['LAB_THREADS'] = '0'
        with redirect_stdout(StringIO()):
            with self.assertRaises(SystemExit) as cm:
                cli_main(["examples", "list", "--out", self.out])
        self.assertEqual(cm.exception.code, 1)


class TestExperiments(CliTestCase):

    def write_manifest(self, doc, name="small-manufactured"):
        path = self.path(f"{name}.json")
        with open(path, "w") as f:
            json.dump(doc, f)
        return path

    def test_shipped_manifests_load(self):
        ids = experiments.list_experiments()
        self.assertIn("singular-exponent-s-1", ids)
        for ref in ids:
            with self.subTest(experiment=ref):
                doc = experiments.load_manifest(ref)
                self.assertEqual(doc["name"], ref)
                self.assertIn(doc["kind"], experiments.KINDS)
                experiments.experiment_spec(doc).validate()

    def test_bad_manifests(self):
        with self.assertRaises(SpecFormatError):
            experiments.load_manifest("no-such-experiment")
        with self.assertRaises(SpecFormatError):
            experiments.load_manifest(self.write_manifest({"kind": "fourier"}, "bad"))

    def test_solve_small_manufactured(self):
        path = self.write_manifest({
            "kind": "manufactured", "T": 6.0, "halfpi": {"b1": 0.5, "b2": 0.5},
            "grids": [[16, 32], [32, 64]],
        })
        code, text = self.run_cli("solve", "--experiment", path)
        self.assertEqual(code, 0)
        self.assertIn("small-manufactured (manufactured): no expectation", text)
        with open(self.path("small-manufactured", "result.json")) as f:
            result = json.load(f)
        self.assertGreater(result["min_order"], 1.0)
        rows = read_csv(self.path("small-manufactured", "convergence.csv"))
        self.assertEqual(len(rows), 2)

    def run_shipped(self, ref):
        with redirect_stdout(StringIO()):
            (result,) = experiments.run_solve([ref], self.out, 1)
        return result

    def test_singular_exponent_window(self):
        result = self.run_shipped("singular-exponent-s-1")
        self.assertGreaterEqual(result["fit"]["alpha"], 0.633)
        self.assertLessEqual(result["fit"]["alpha"], 0.700)
        self.assertTrue(result["fit"]["meaningful"])
        self.assertLess(result["double_T"]["relative_alpha_change"], 0.005)
        self.assertEqual(result["method"], "gmres")
        self.assertTrue(result["passed"])
        self.assertGreater(len(result["w2_dyadic"]), 0)

    def test_w2_bounded_for_s1(self):
        result = self.run_shipped("preserves-s1")
        self.assertEqual(result["w2"]["trend"], "bounded")
        self.assertTrue(result["passed"])

    def test_w2_divergent_with_exterior_coefficient(self):
        result = self.run_shipped("border-violation-a-const")
        self.assertEqual(result["w2"]["trend"], "divergent")
        self.assertTrue(result["passed"])

    def test_witness_roundtrip(self):
        result = self.run_shipped("witness-roundtrip")
        self.assertAlmostEqual(result["lambda0"]["im"], -2.0 / 3.0, places=8)
        self.assertTrue(result["decreasing"])
        self.assertTrue(result["passed"])


if __name__ == '__main__':
    unittest.main()
