#!/usr/bin/env python3
"""
Unit tests for services/lib/pencil.py

The flat-boundary model (half-opening pi/2, sides rotated onto the inner
normal) has det M(lambda) = (sinh(lambda pi/2)/lambda)(2 cosh(lambda pi/2) + s)
up to a nonzero factor, with s = b1(0) + b2(0). Its band picture is known in
closed form and is used as the oracle here.
"""
import cmath
import math
import os
import sys
import time
import unittest

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.lib.errors import AmbiguousSpectrum
from services.lib.geometry import OrbitModel, PrincipalPart, freeze_model
from services.lib.pencil import (
    cauchy_riemann_residual, char_det, characteristic_derivative, characteristic_matrix,
    classify_eigenvalue, count_zeros_in_band, eigenvalue_or_raise, find_eigenvalues, fundamental_system,
    jordan_structure, laplace_halfpi_oracle, spectral_report,
)
from services.lib.spec_io import halfpi_model


def flat(s):
    return freeze_model(halfpi_model(s / 2, s / 2))


class TestCharacteristicMatrix(unittest.TestCase):

    def test_fundamental_system_initial_values(self):
        u0, u1, du0, du1 = fundamental_system(flat(1.0), 0, 0.3 - 0.4j, [0.0])
        np.testing.assert_allclose([u0[0], u1[0], du0[0], du1[0]], [1, 0, 0, 1], atol=1e-15)

    def test_determinant_matches_closed_form(self):
        for s in (-1.5, 0.0, 1.0):
            model = flat(s)
            for lam in (0.3 - 0.2j, -1.1 - 0.7j, 2.0 - 0.5j):
                with self.subTest(s=s, lam=lam):
                    closed = (cmath.sinh(lam * math.pi / 2) / lam) * (2 * cmath.cosh(lam * math.pi / 2) + s)
                    ratio = char_det(model, lam) / closed
                    self.assertAlmostEqual(abs(ratio), 1.0, places=10)

    def test_derivative_matches_differences(self):
        model = flat(-1.0)
        lam, h = 0.4 - 0.3j, 1e-6
        fd = (characteristic_matrix(model, lam + h) - characteristic_matrix(model, lam - h)) / (2 * h)
        np.testing.assert_allclose(characteristic_derivative(model, lam), fd, atol=1e-7)

    def test_determinant_is_analytic(self):
        self.assertLess(cauchy_riemann_residual(flat(-0.7), 0.5 - 0.45j), 1e-5)

    def test_shooting_matches_closed_form_for_laplace(self):
        laplace = flat(1.0)
        part = PrincipalPart(1.0, 1e-15, 1.0)
        self.assertFalse(part.is_laplace)
        shot = OrbitModel(0, (math.pi / 2,), laplace.terms, principal_parts=(part,))
        rng = np.random.default_rng(11)
        lams = rng.uniform(-4.0, 4.0, 50) + 1j * rng.uniform(-1.0, 0.0, 50)
        for lam in lams:
            with self.subTest(lam=lam):
                expected = characteristic_matrix(laplace, lam)
                got = characteristic_matrix(shot, lam, method="shooting")
                scale = max(1.0, np.abs(expected).max())
                self.assertLess(np.abs(got - expected).max(), 1e-10 * scale)

    def test_shooting_samples_both_directions(self):
        model = OrbitModel(0, (math.pi / 2,), flat(1.0).terms, principal_parts=(PrincipalPart(1.0, 1e-15, 1.0),))
        omegas = [-math.pi / 2, -0.3, 0.0, 0.7, math.pi / 2]
        shot = fundamental_system(model, 0, 0.8 - 0.3j, omegas, method="shooting")
        exact = fundamental_system(flat(1.0), 0, 0.8 - 0.3j, omegas)
        for got, expected in zip(shot, exact):
            np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-12)

    def test_general_elliptic_closed_form_matches_shooting(self):
        model = OrbitModel(0, (math.pi / 2,), flat(-1.0).terms, principal_parts=(PrincipalPart(2.0, 0.5, 1.0),))
        for lam in (0.3 - 0.2j, -2.5 - 0.9j, 1e-9 - 1e-9j):
            with self.subTest(lam=lam):
                omegas = np.linspace(-math.pi / 2, math.pi / 2, 7)
                closed = fundamental_system(model, 0, lam, omegas)
                shot = fundamental_system(model, 0, lam, omegas, method="shooting")
                for got, expected in zip(closed, shot):
                    np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-11)

    def test_unknown_method_rejected(self):
        with self.assertRaises(ValueError):
            fundamental_system(flat(1.0), 0, 0.5j, [0.1], method="euler")


class TestHalfPiSpectrum(unittest.TestCase):

    def test_closed_form_eigenvalues(self):
        for s in (-1.9, -1.5, -1.0, -0.5, -0.1):
            with self.subTest(s=s):
                start = time.perf_counter()
                eigen, total, unresolved = find_eigenvalues(flat(s))
                elapsed = time.perf_counter() - start
                self.assertEqual(len(eigen), 1)
                self.assertEqual(total, 1)
                self.assertEqual(unresolved, [])
                expected = laplace_halfpi_oracle(s).eigenvalue
                self.assertLess(abs(eigen[0][0] - expected), 1e-8)
                self.assertLess(elapsed, 1.0)

    def test_arctan_form_agrees(self):
        for s in (-1.9, -1.0, -0.1):
            case = laplace_halfpi_oracle(s)
            self.assertAlmostEqual(case.arctan_form.imag, case.eigenvalue.imag, places=12)

    def test_case_table(self):
        for s in (-3.0, -2.0, 0.5, 1.0):
            with self.subTest(s=s):
                report = spectral_report(flat(s))
                self.assertEqual(report.eigenvalues, [])
                self.assertTrue(report.closed)
                self.assertEqual(laplace_halfpi_oracle(s).label, "Case 1")

        report = spectral_report(flat(0.0))
        self.assertEqual(len(report.eigenvalues), 1)
        eig = report.eigenvalues[0]
        self.assertLess(abs(eig.lam - (-1j)), 1e-8)
        self.assertTrue(eig.proper)
        self.assertTrue(report.closed)

        for s in (-1.5, -1.0, -0.5):
            with self.subTest(s=s):
                report = spectral_report(flat(s))
                self.assertEqual(len(report.eigenvalues), 1)
                self.assertIs(report.eigenvalues[0].proper, False)
                self.assertTrue(report.closed)

    def test_dirichlet_model(self):
        report = spectral_report(halfpi_model(0.0, 0.0))
        self.assertEqual(len(report.eigenvalues), 1)
        self.assertTrue(report.eigenvalues[0].proper)

    def test_general_elliptic_dirichlet_half_plane(self):
        # an affine change maps the half-plane to itself, so the Dirichlet exponents stay integers
        model = OrbitModel(0, (math.pi / 2,), halfpi_model(0.0, 0.0).terms,
                           principal_parts=(PrincipalPart(2.0, 0.5, 1.0),))
        start = time.perf_counter()
        report = spectral_report(model)
        elapsed = time.perf_counter() - start
        self.assertEqual(len(report.eigenvalues), 1)
        self.assertLess(abs(report.eigenvalues[0].lam - (-1j)), 1e-8)
        self.assertTrue(report.closed)
        self.assertLess(report.shooting_mismatch, 1e-8)
        self.assertLess(elapsed, 10.0)

    def test_unfrozen_model_is_frozen_first(self):
        eigen, _, _ = find_eigenvalues(halfpi_model(-0.5, -0.5))
        self.assertEqual(len(eigen), 1)

    def test_winding_count_inside_band(self):
        self.assertEqual(count_zeros_in_band(flat(-1.0)), 1)
        self.assertEqual(count_zeros_in_band(flat(1.0)), 0)

    def test_band_is_half_open(self):
        # s = 2: 2 cosh(lambda pi/2) + 2 vanishes at lambda = -2i, outside the band
        eigen, _, _ = find_eigenvalues(flat(2.0), (-1.0, 0.0))
        self.assertEqual(eigen, [])


class TestJordanStructure(unittest.TestCase):

    def test_simple_eigenvalue_has_no_associated_vectors(self):
        eig = jordan_structure(flat(-1.0), complex(0.0, -2.0 / 3.0), 1)
        self.assertEqual(eig.partial_multiplicities, (1,))
        self.assertEqual(eig.has_associated, (False,))
        self.assertFalse(eig.rank_ambiguous)
        m = characteristic_matrix(flat(-1.0), eig.lam)
        self.assertLess(np.linalg.norm(m @ eig.eigenvectors[0]), 1e-10)

    def test_eigenvector_profile(self):
        eig = jordan_structure(flat(-1.0), complex(0.0, -2.0 / 3.0), 1)
        omegas = np.linspace(-math.pi / 2, math.pi / 2, 9)
        u0, u1, _, _ = fundamental_system(flat(-1.0), 0, eig.lam, omegas)
        phi = eig.eigenvectors[0][0] * u0 + eig.eigenvectors[0][1] * u1
        expected = np.cos(2 * omegas / 3)
        ratio = phi / expected
        np.testing.assert_allclose(ratio, ratio[0], atol=1e-10)

    def test_classification_of_minus_i(self):
        eig = classify_eigenvalue(flat(0.0), jordan_structure(flat(0.0), -1j, 1))
        self.assertTrue(eig.proper)
        self.assertLess(eig.proper_residual, 1e-6)

    def test_ambiguous_report_raises(self):
        report = spectral_report(flat(-1.0))
        report.eigenvalues[0].proper = None
        with self.assertRaises(AmbiguousSpectrum):
            eigenvalue_or_raise(report)


if __name__ == '__main__':
    unittest.main()
