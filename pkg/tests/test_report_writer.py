#!/usr/bin/env python3
"""
Unit tests for utils/report_writer.py and utils/work_pool.py
"""
import json
import math
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.report_writer import RunManifest, format_cell, json_text, write_binary, write_csv, write_manifest
from utils.work_pool import make_mapper, pool_map


class TestReportWriter(unittest.TestCase):

    def setUp(self):
        self.out = tempfile.mkdtemp(prefix="lab-report-")

    def tearDown(self):
        shutil.rmtree(self.out, ignore_errors=True)

    def test_cells(self):
        self.assertEqual(format_cell(0.1), "0.10000000000000001")
        self.assertEqual(format_cell(np.float64(2.0)), "2")
        self.assertEqual(format_cell(True), "true")
        self.assertEqual(format_cell(None), "")
        self.assertEqual(format_cell("Case 2"), "Case 2")

    def test_json_is_plain(self):
        doc = json.loads(json_text({"z": 1j, "a": np.arange(3), "n": np.int64(4), "t": (1.5, np.bool_(True))}))
        self.assertEqual(doc, {"a": [0, 1, 2], "n": 4, "t": [1.5, True], "z": {"re": 0.0, "im": 1.0}})
        self.assertTrue(json_text({"b": 1, "a": 2}).startswith('{\n  "a"'))

    def test_csv(self):
        path = write_csv(os.path.join(self.out, "nested", "rows.csv"), ("s", "label"), [(-1.0, "Case 3")])
        with open(path) as f:
            self.assertEqual(f.read(), "s,label\n-1,Case 3\n")
        self.assertEqual([n for n in os.listdir(os.path.dirname(path)) if n.startswith(".tmp-")], [])

    def test_binary_with_sidecar(self):
        values = np.arange(6, dtype=float).reshape(2, 3)
        path = write_binary(os.path.join(self.out, "u.f64"), values, {"grid": {"n_t": 1}})
        self.assertEqual(os.path.getsize(path), 48)
        np.testing.assert_array_equal(np.fromfile(path, dtype="<f8").reshape(2, 3), values)
        with open(path + ".json") as f:
            meta = json.load(f)
        self.assertEqual(meta["shape"], [2, 3])
        self.assertEqual(meta["byte_order"], "little")
        self.assertEqual(meta["grid"], {"n_t": 1})

    def test_manifest(self):
        path = write_manifest(self.out, RunManifest("sweep", None, {"s_step": 0.1}, self.out, 3, "1.0.0"))
        with open(path) as f:
            manifest = json.load(f)
        self.assertEqual(manifest["command"], "sweep")
        self.assertIsNone(manifest["spec_path"])
        self.assertEqual(manifest["overrides"], {"s_step": 0.1})


class TestWorkPool(unittest.TestCase):

    def test_in_process(self):
        self.assertEqual(pool_map(math.sqrt, [4.0, 9.0], 1), [2.0, 3.0])
        self.assertEqual(pool_map(math.sqrt, [], 4), [])

    def test_process_pool_keeps_order(self):
        jobs = [float(n * n) for n in range(8)]
        self.assertEqual(pool_map(math.sqrt, jobs, 2), [float(n) for n in range(8)])
        self.assertEqual(list(make_mapper(2)(math.sqrt, jobs)), [float(n) for n in range(8)])


if __name__ == '__main__':
    unittest.main()
