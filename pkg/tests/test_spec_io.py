#!/usr/bin/env python3
"""
Unit tests for services/lib/spec_io.py
"""
import json
import math
import os
import sys
import tempfile
import unittest

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.lib.errors import SpecFormatError, ValidationError
from services.lib.spec_io import (
    EXAMPLE_IDS, dump_spec, halfpi_model, halfpi_spec, list_examples, load_example, load_spec, parse_spec,
    spec_to_dict,
)


class TestExamples(unittest.TestCase):

    def test_every_example_loads(self):
        listed = [e["id"] for e in list_examples()]
        self.assertEqual(listed, list(EXAMPLE_IDS))
        for example in list_examples():
            self.assertTrue(example["description"])

    def test_examples_round_trip(self):
        for example_id in EXAMPLE_IDS:
            with self.subTest(example=example_id):
                spec = load_example(example_id)
                again = parse_spec(spec_to_dict(spec))
                self.assertEqual(spec_to_dict(again), spec_to_dict(spec))
                self.assertEqual(again.orbits, spec.orbits)

    def test_two_point_examples(self):
        spec = load_example("two-orbits-mixed")
        self.assertEqual([m.orbit_id for m in spec.orbits], [0, 1])
        weights = [sorted(t.weight_at_vertex for t in m.terms) for m in spec.orbits]
        self.assertEqual(weights, [[-0.5, 0.5], [-0.5, -0.5]])
        for model in spec.orbits:
            for term in model.terms:
                self.assertAlmostEqual(model.image_angle(term), 0.0, places=10)

    def test_unknown_example(self):
        with self.assertRaises(SpecFormatError):
            load_example("case4")


class TestParsing(unittest.TestCase):

    def test_missing_orbits(self):
        with self.assertRaises(SpecFormatError):
            parse_spec({"rhs": {}})

    def test_both_orbit_forms(self):
        with self.assertRaises(SpecFormatError):
            parse_spec({"orbits": [], "points": []})

    def test_missing_term_key(self):
        doc = {"orbits": [{"orbit_id": 0, "angles": [1.0], "terms": [{"j": 0, "sigma": 1, "s": 1, "weight": 1}]}]}
        with self.assertRaises(SpecFormatError) as cm:
            parse_spec(doc)
        self.assertIn("'k'", str(cm.exception))

    def test_weight_from_profile(self):
        doc = {"orbits": [{"orbit_id": 0, "angles": [math.pi / 2], "terms": [
            {"j": 0, "sigma": 1, "k": 0, "s": 1, "weight_profile": "poly:0.25,1", "rotation": math.pi / 2}]}]}
        spec = parse_spec(doc)
        self.assertEqual(spec.orbits[0].terms[0].weight_at_vertex, 0.25)

    def test_structural_errors_surface(self):
        doc = {"orbits": [{"orbit_id": 0, "angles": [4.0]}]}
        with self.assertRaises(ValidationError):
            parse_spec(doc)

    def test_bad_json_file(self):
        with tempfile.NamedTemporaryFile(mode="w", suffix=".json", delete=False) as f:
            f.write("{not json")
            path = f.name
        try:
            with self.assertRaises(SpecFormatError):
                load_spec(path)
        finally:
            os.unlink(path)

    def test_dump_and_load(self):
        spec = halfpi_spec(0.5, -0.5, name="dumped")
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "spec.json")
            dump_spec(spec, path)
            with open(path) as f:
                self.assertEqual(json.load(f)["name"], "dumped")
            self.assertEqual(load_spec(path).orbits, spec.orbits)

    def test_halfpi_dirichlet_has_no_terms(self):
        self.assertEqual(halfpi_model(0.0, 0.0).terms, ())
        self.assertEqual(len(halfpi_model(0.5, 0.0).terms), 1)


if __name__ == '__main__':
    unittest.main()
