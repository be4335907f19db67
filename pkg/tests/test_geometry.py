#!/usr/bin/env python3
"""
Unit tests for services/lib/geometry.py

Covers orbit partitioning, localization of boundary maps, validation of the
structural hypotheses and coefficient freezing.
"""
import math
import os
import sys
import unittest

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.lib.errors import ConditionK1Violation, OrbitError, ValidationError
from services.lib.geometry import (
    BoundaryMap, ConjugationPoint, ExteriorTerm, NonlocalTerm, OrbitModel, PrincipalPart, ProblemSpec,
    Truncation, compute_orbits, freeze, freeze_model, landing_case, localize_transformation,
    models_from_points, rotation_matrix, side_row,
)
from services.lib.profiles import ScalarProfile

HALF_PI = math.pi / 2


def rotation_about(center, angle, scale=1.0, target=None):
    c = np.asarray(center, dtype=float)
    t = c if target is None else np.asarray(target, dtype=float)
    m = scale * rotation_matrix(angle)
    return lambda x: t + m @ (np.asarray(x, dtype=float) - c)


class TestOrbits(unittest.TestCase):

    def test_three_points_two_orbits(self):
        points = [
            ConjugationPoint(0, (0.0, 0.0), HALF_PI),
            ConjugationPoint(1, (1.0, 0.0), HALF_PI),
            ConjugationPoint(2, (5.0, 5.0), HALF_PI),
        ]
        maps = [BoundaryMap(source=0, sigma=1, image=1, func=rotation_about((0, 0), 0.0, target=(1, 0)))]
        self.assertEqual(compute_orbits(points, maps), [(0, 1), (2,)])

    def test_inverse_direction_joins_orbits(self):
        points = [ConjugationPoint(3, (0.0, 0.0), HALF_PI), ConjugationPoint(1, (2.0, 0.0), HALF_PI)]
        maps = [BoundaryMap(source=1, sigma=2, image=3, func=rotation_about((2, 0), 0.0, target=(0, 0)))]
        self.assertEqual(compute_orbits(points, maps), [(1, 3)])

    def test_image_outside_point_set(self):
        points = [ConjugationPoint(0, (0.0, 0.0), HALF_PI)]
        maps = [BoundaryMap(source=0, sigma=1, image=0, func=lambda x: np.asarray(x) + 0.3)]
        with self.assertRaises(OrbitError):
            compute_orbits(points, maps)

    def test_duplicate_point_ids(self):
        points = [ConjugationPoint(0, (0.0, 0.0), HALF_PI), ConjugationPoint(0, (1.0, 0.0), HALF_PI)]
        with self.assertRaises(OrbitError):
            compute_orbits(points, [])


class TestLocalization(unittest.TestCase):

    def test_rotation_and_homothety_recovered(self):
        vertex = ConjugationPoint(0, (0.0, 0.0), HALF_PI)
        rotation, homothety, deviation = localize_transformation(
            rotation_about((0, 0), 0.7, scale=0.5), vertex, vertex)
        self.assertAlmostEqual(rotation, 0.7, places=12)
        self.assertAlmostEqual(homothety, 0.5, places=12)
        self.assertLess(deviation, 1e-12)

    def test_rotated_frame(self):
        g = ConjugationPoint(0, (0.0, 0.0), HALF_PI)
        h = ConjugationPoint(1, (2.0, 0.0), HALF_PI, frame_rotation=math.pi)
        rotation, homothety, _ = localize_transformation(rotation_about((2, 0), HALF_PI), h, h)
        self.assertAlmostEqual(rotation, HALF_PI, places=12)
        self.assertAlmostEqual(homothety, 1.0, places=12)
        rotation, _, _ = localize_transformation(rotation_about((0, 0), HALF_PI), g, g)
        self.assertAlmostEqual(rotation, HALF_PI, places=12)

    def test_shear_rejected(self):
        vertex = ConjugationPoint(0, (0.0, 0.0), HALF_PI)
        shear = np.array([[1.0, 0.4], [0.0, 1.0]])
        with self.assertRaises(ConditionK1Violation) as cm:
            localize_transformation(lambda x: shear @ np.asarray(x), vertex, vertex)
        self.assertGreater(cm.exception.deviation, 1e-8)

    def test_models_from_points(self):
        vertex = ConjugationPoint(0, (0.0, 0.0), HALF_PI)
        maps = [
            BoundaryMap(0, 1, 0, rotation_about((0, 0), HALF_PI), ScalarProfile.const(0.5)),
            BoundaryMap(0, 2, 0, rotation_about((0, 0), -HALF_PI), ScalarProfile.const(-0.5)),
        ]
        (model,) = models_from_points([vertex], maps)
        self.assertEqual(model.angles, (HALF_PI,))
        weights = {(t.sigma, t.s): t.weight_at_vertex for t in model.terms}
        self.assertEqual(weights, {(1, 1): 0.5, (2, 1): -0.5})
        self.assertAlmostEqual(model.image_angle(model.terms_for(0, 1)[0]), 0.0, places=12)


class TestValidation(unittest.TestCase):

    def _term(self, **kw):
        base = dict(j=0, sigma=1, k=0, s=1, weight_at_vertex=0.5, rotation=HALF_PI, homothety=1.0)
        base.update(kw)
        return NonlocalTerm(**base)

    def test_side_rows(self):
        self.assertEqual([side_row(j, s) for j in range(2) for s in (1, 2)], [0, 1, 2, 3])

    def test_angle_out_of_range(self):
        with self.assertRaises(ValidationError):
            OrbitModel(0, (math.pi,), ()).validate()

    def test_image_on_the_boundary(self):
        model = OrbitModel(0, (HALF_PI,), (self._term(rotation=math.pi),))
        with self.assertRaises(ValidationError):
            model.validate()

    def test_duplicate_term(self):
        model = OrbitModel(0, (HALF_PI,), (self._term(), self._term()))
        with self.assertRaises(ValidationError):
            model.validate()

    def test_non_elliptic_principal_part(self):
        model = OrbitModel(0, (HALF_PI,), (), principal_parts=(PrincipalPart(1.0, 1.0, 1.0),))
        with self.assertRaises(ValidationError):
            model.validate()

    def test_separation_condition(self):
        model = OrbitModel(0, (HALF_PI,), (self._term(homothety=4.0, rotation=HALF_PI),))
        spec = ProblemSpec(orbits=(model,), truncation=Truncation.from_epsilon(0.25))
        with self.assertRaises(ValidationError):
            spec.validate()

    def test_cutoff_radius(self):
        model = OrbitModel(0, (HALF_PI,), (self._term(),))
        spec = ProblemSpec(orbits=(model,), truncation=Truncation.from_epsilon(0.25))
        self.assertAlmostEqual(spec.cutoff_radius(), 0.03125)


class TestFreezing(unittest.TestCase):

    def test_identity_terms_inserted(self):
        model = OrbitModel(0, (HALF_PI,), (
            NonlocalTerm(0, 1, 0, 1, 0.0, HALF_PI, 1.0, ScalarProfile.parse("poly:0.5,3")),
        ))
        frozen = freeze_model(model)
        identities = [t for t in frozen.terms if t.is_identity]
        self.assertEqual(len(identities), 2)
        nonlocal_term = [t for t in frozen.terms if not t.is_identity][0]
        self.assertEqual(nonlocal_term.weight_at_vertex, 0.5)
        self.assertEqual(freeze_model(frozen), frozen)

    def test_freeze_spec(self):
        spec = ProblemSpec(orbits=(OrbitModel(0, (HALF_PI,), ()), OrbitModel(1, (1.0, 2.0), ())))
        models = freeze(spec)
        self.assertEqual([len(m.terms) for m in models], [2, 4])

    def test_landing_cases(self):
        a = ScalarProfile.const(1.0)
        self.assertEqual(landing_case(ExteriorTerm(0, 0, 1, a, "interior")), "A")
        self.assertEqual(landing_case(ExteriorTerm(0, 0, 1, a, "interior-point")), "B")
        self.assertEqual(landing_case(ExteriorTerm(0, 0, 1, a, "boundary", landing_coefficient=0.3)), "C")
        self.assertIsNone(landing_case(ExteriorTerm(0, 0, 1, a, "boundary", landing_coefficient=0.0)))


if __name__ == '__main__':
    unittest.main()
