#!/usr/bin/env python3
"""
Unit tests for services/lib/solver.py

Grids are kept small; the full-size exponent and blow-up runs live in the
experiment manifests.
"""
import math
import os
import sys
import unittest

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.lib.errors import FitWindowError, GridConstructionError, ValidationError
from services.lib.geometry import NonlocalTerm, OrbitModel, PrincipalPart, freeze_model
from services.lib.solver import (
    DiscreteSolution, GaussianBumpField, LogPolarGrid, assemble, constant_relation_residual,
    convergence_orders, discrete_w2, dyadic_w2_levels, exact_error, fit_power_law, fit_singularity_exponent,
    manufactured_data, solve, w2_blowup_diagnostic,
)
from services.lib.spec_io import halfpi_model

HALF_PI = math.pi / 2


class TestGrid(unittest.TestCase):

    def test_layout(self):
        grid = LogPolarGrid.build(freeze_model(halfpi_model(0.5, 0.5)), 6.0, 64, 32)
        self.assertEqual(grid.n_omega, (32,))
        self.assertEqual(grid.size, 65 * 33)
        self.assertAlmostEqual(grid.t[0], -6.0)
        self.assertAlmostEqual(grid.radii[-1], 1.0)
        self.assertAlmostEqual(grid.omegas(0)[0], -HALF_PI)
        self.assertAlmostEqual(grid.omegas(0)[-1], HALF_PI)
        self.assertEqual(grid.node_indices(0).shape, (65, 33))

    def test_image_offset(self):
        model = freeze_model(halfpi_model(0.5, 0.5))
        grid = LogPolarGrid.build(model, 6.0, 64, 32)
        term = [t for t in model.terms if not t.is_identity][0]
        self.assertEqual(grid.image_offset(model, term), (16, 0))

    def test_rotation_off_the_grid(self):
        with self.assertRaises(GridConstructionError):
            LogPolarGrid.build(halfpi_model(0.5, 0.5), 6.0, 64, 5)

    def test_homothety_off_the_grid(self):
        model = OrbitModel(0, (HALF_PI,), (NonlocalTerm(0, 1, 0, 1, 0.5, rotation=HALF_PI, homothety=2.0),))
        with self.assertRaises(GridConstructionError) as cm:
            LogPolarGrid.build(model, 6.0, 64, 32)
        self.assertIn("n_t", str(cm.exception))

    def test_rejects_degenerate_sizes(self):
        model = halfpi_model(0.0, 0.0)
        for T, n_t, n_omega in ((0.0, 64, 32), (6.0, 2, 32), (6.0, 64, 2)):
            with self.subTest(T=T, n_t=n_t, n_omega=n_omega):
                with self.assertRaises(GridConstructionError):
                    LogPolarGrid.build(model, T, n_t, n_omega)

    def test_refinement(self):
        model = halfpi_model(0.0, 0.0)
        coarse = LogPolarGrid.build(model, 6.0, 32, 16)
        self.assertTrue(LogPolarGrid.build(model, 6.0, 64, 32).is_refinement_of(coarse))
        self.assertFalse(LogPolarGrid.build(model, 12.0, 64, 32).is_refinement_of(coarse))


class TestSolve(unittest.TestCase):

    def test_only_the_laplacian(self):
        model = OrbitModel(0, (HALF_PI,), (), principal_parts=(PrincipalPart(2.0, 0.0, 1.0),))
        grid = LogPolarGrid.build(model, 6.0, 16, 8)
        with self.assertRaises(ValidationError):
            assemble(model, grid)

    def test_zero_data_gives_zero_solution(self):
        model = halfpi_model(0.5, 0.5)
        sol = solve(assemble(model, LogPolarGrid.build(freeze_model(model), 6.0, 16, 8)))
        self.assertEqual(sol.method, "zero")
        self.assertFalse(np.any(sol.values))

    def test_manufactured_convergence(self):
        field = GaussianBumpField()
        T = 6.0
        for label, (b1, b2) in (("dirichlet", (0.0, 0.0)), ("nonlocal", (0.5, 0.5))):
            with self.subTest(config=label):
                model = freeze_model(halfpi_model(b1, b2))
                data = manufactured_data(model, field, T)
                errors = []
                for n_omega, n_t in ((32, 64), (64, 128)):
                    sol = solve(assemble(model, LogPolarGrid.build(model, T, n_t, n_omega), data))
                    self.assertLess(sol.residual, 1e-6)
                    errors.append(exact_error(sol, lambda j, r, w: field.value(r, w)))
                self.assertGreater(convergence_orders(errors)[0], 1.7)

    def test_preconditioned_gmres_is_used(self):
        field = GaussianBumpField()
        for label, (b1, b2) in (("dirichlet", (0.0, 0.0)), ("nonlocal", (0.5, 0.5)), ("improper", (-0.5, -0.5))):
            with self.subTest(config=label):
                model = freeze_model(halfpi_model(b1, b2))
                data = manufactured_data(model, field, 6.0)
                sol = solve(assemble(model, LogPolarGrid.build(model, 6.0, 64, 32), data))
                self.assertEqual(sol.method, "gmres")
                self.assertLess(sol.residual, 1e-9)

    def test_solution_carries_dyadic_w2(self):
        model = freeze_model(halfpi_model(0.5, 0.5))
        sol = solve(assemble(model, LogPolarGrid.build(model, 6.0, 64, 32), manufactured_data(model, GaussianBumpField(), 6.0)))
        self.assertEqual(len(sol.w2_dyadic), int(6.0 / math.log(2)))
        covered = 2.0 ** -len(sol.w2_dyadic)
        self.assertAlmostEqual(sum(sol.w2_dyadic), discrete_w2(sol, covered), delta=1e-12 * discrete_w2(sol, covered))
        self.assertEqual(dyadic_w2_levels(sol), sol.w2_dyadic)
        self.assertIsNone(sol.fit)

    def test_convergence_orders(self):
        np.testing.assert_allclose(convergence_orders([4.0, 1.0, 0.25]), [2.0, 2.0])


class TestDiagnostics(unittest.TestCase):

    def test_power_law_recovered(self):
        r = 2.0 ** -np.linspace(3, 9, 97)
        fit = fit_power_law(r, 1.0 + 2.0 * r ** (2.0 / 3.0), 1.0)
        self.assertAlmostEqual(fit.alpha, 2.0 / 3.0, places=6)
        self.assertAlmostEqual(fit.constant, 1.0, places=6)
        self.assertAlmostEqual(fit.amplitude, 2.0, places=5)
        self.assertTrue(fit.meaningful)

    def test_power_law_with_regular_part(self):
        r = 2.0 ** -np.linspace(3, 9, 97)
        fit = fit_power_law(r, 1.0 + 2.0 * r ** (2.0 / 3.0) + 0.8 * r - 0.3 * r ** 2, 1.0)
        self.assertAlmostEqual(fit.alpha, 2.0 / 3.0, places=6)
        self.assertAlmostEqual(fit.constant, 1.0, places=6)
        self.assertAlmostEqual(fit.regular[1.0], 0.8, places=4)
        self.assertAlmostEqual(fit.regular[2.0], -0.3, places=3)
        self.assertIn("r^1", fit.to_dict()["regular"])

    def test_regular_power_next_to_alpha_is_dropped(self):
        r = 2.0 ** -np.linspace(3, 9, 97)
        fit = fit_power_law(r, 0.5 + 1.5 * r, 0.5)
        self.assertAlmostEqual(fit.alpha, 1.0, places=6)
        self.assertNotIn(1.0, fit.regular)

    def test_exponent_of_synthetic_field(self):
        grid = LogPolarGrid.build(halfpi_model(-0.5, -0.5), 12.0, 384, 8)
        idx = grid.node_indices(0)
        rr, ww = np.meshgrid(grid.radii, grid.omegas(0), indexing="ij")
        values = np.zeros(grid.size)
        values[idx] = 1.0 + rr ** (2.0 / 3.0) * np.cos(2.0 * ww / 3.0)
        sol = DiscreteSolution(grid, values)
        fit = fit_singularity_exponent(sol)
        self.assertIs(sol.fit, fit)
        self.assertAlmostEqual(fit.alpha, 2.0 / 3.0, delta=1e-3)
        self.assertAlmostEqual(fit.constant, 1.0, delta=1e-3)

    def test_short_truncation_pollutes_the_window(self):
        grid = LogPolarGrid.build(halfpi_model(0.0, 0.0), 6.0, 16, 8)
        with self.assertRaises(FitWindowError) as cm:
            fit_singularity_exponent(DiscreteSolution(grid, np.zeros(grid.size)))
        self.assertIn("T >= 12", str(cm.exception))

    def test_w2_needs_three_grids(self):
        model = halfpi_model(0.0, 0.0)
        sols = [DiscreteSolution(g, np.zeros(g.size)) for g in (
            LogPolarGrid.build(model, 6.0, 16, 8), LogPolarGrid.build(model, 6.0, 32, 16))]
        with self.assertRaises(GridConstructionError):
            w2_blowup_diagnostic(sols)

    def test_w2_needs_nested_grids(self):
        model = halfpi_model(0.0, 0.0)
        sols = [DiscreteSolution(g, np.zeros(g.size)) for g in (
            LogPolarGrid.build(model, 6.0, 16, 8), LogPolarGrid.build(model, 6.0, 32, 16),
            LogPolarGrid.build(model, 6.0, 48, 32))]
        with self.assertRaises(GridConstructionError):
            w2_blowup_diagnostic(sols)

    def test_w2_region_deepens_per_refinement(self):
        model = halfpi_model(0.0, 0.0)
        sols = []
        for n_t, n_omega in ((16, 8), (32, 16), (64, 32)):
            grid = LogPolarGrid.build(model, 6.0, n_t, n_omega)
            rr, ww = np.meshgrid(grid.radii, grid.omegas(0), indexing="ij")
            values = np.zeros(grid.size)
            values[grid.node_indices(0)] = rr ** 2 * np.cos(2 * ww)
            sols.append(DiscreteSolution(grid, values))
        trend = w2_blowup_diagnostic(sols)
        self.assertEqual(trend.regions, [2.0 ** -8, 2.0 ** -9, 2.0 ** -10])
        self.assertEqual(trend.values[0], discrete_w2(sols[0], 2.0 ** -8))

    def test_constant_relation(self):
        model = halfpi_model(0.5, 0.5)
        self.assertLess(constant_relation_residual(model, 2.0, {(0, 1): 3.0, (0, 2): 3.0}), 1e-15)
        self.assertAlmostEqual(constant_relation_residual(model, 2.0, {}), 1.0)

    def test_constant_relation_per_angle(self):
        model = halfpi_model(0.5, 0.5)
        self.assertLess(constant_relation_residual(model, [2.0], {(0, 1): 3.0, (0, 2): 3.0}), 1e-15)
        with self.assertRaises(ValidationError):
            constant_relation_residual(model, [2.0, 1.0], {})

    def test_constant_relation_couples_angles(self):
        model = OrbitModel(0, (HALF_PI, HALF_PI), (
            NonlocalTerm(0, 1, 1, 1, 0.5, rotation=0.0),
            NonlocalTerm(1, 1, 0, 1, 0.5, rotation=0.0),
        ))
        # side (0, 1): C_0 + 0.5 C_1, side (1, 1): C_1 + 0.5 C_0; sides 2 carry C_j alone
        psi = {(0, 1): 2.0, (1, 1): 2.5, (0, 2): 1.0, (1, 2): 2.0}
        self.assertLess(constant_relation_residual(model, [1.0, 2.0], psi), 1e-15)
        self.assertGreater(constant_relation_residual(model, 1.5, psi), 0.1)


if __name__ == '__main__':
    unittest.main()
