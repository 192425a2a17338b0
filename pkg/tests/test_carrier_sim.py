"""
Tests for the drift-diffusion relaxation engine.
"""

import os
import sys
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from carrier_seg.carrier_sim import (
    CarrierGrid, ConvergenceTrace, SimParams, carrier_image, closed_form_balance,
    diffuse_flux, drift_flux, interface_field, sign_counts, sign_map, simulate, step
)
from carrier_seg.exceptions import (
    ConfigurationError, DimensionMismatchError, UnstableParameterError, ValidationError
)
from carrier_seg.pgm_io import GrayImage, ImageKind, Sign, THREE_SHAPES_LEVELS, make_test_image


def two_pixel_image() -> GrayImage:
    return GrayImage.from_sequence(2, 1, [0.0, 1.0])


class TestInterfaceFluxes(unittest.TestCase):
    """Per-interface field and flux terms."""

    def test_interface_field(self):
        self.assertAlmostEqual(interface_field(0.8, 0.3, 1.0), 0.5)
        self.assertEqual(interface_field(0.5, 0.5, 2.0), 0.0)
        self.assertAlmostEqual(interface_field(0.3, 0.8, 1.0), -0.5)

    def test_drift_flux_direction(self):
        """Test that the darker pixel gains net positive carrier"""
        self.assertAlmostEqual(drift_flux(0.0, 1.0, 0.05), 0.05)
        self.assertAlmostEqual(drift_flux(1.0, 0.0, 0.05), -0.05)
        for k1 in (0.01, 0.05, 3.0):
            self.assertEqual(drift_flux(0.4, 0.4, k1), 0.0)

    def test_drift_is_opposite_of_field(self):
        self.assertEqual(drift_flux(0.8, 0.3, 0.1), -interface_field(0.8, 0.3, 0.1))

    def test_diffuse_flux(self):
        self.assertAlmostEqual(diffuse_flux(0.05, -0.05, 0.2), -0.02)
        self.assertEqual(diffuse_flux(0.3, 0.3, 0.2), 0.0)
        self.assertAlmostEqual(diffuse_flux(-1.0, 1.0, 0.1), 0.2)

    def test_antisymmetry_is_exact(self):
        rng = np.random.default_rng(11)
        g, g_a, c, c_a = rng.random((4, 50))
        np.testing.assert_array_equal(drift_flux(g, g_a, 0.05), -drift_flux(g_a, g, 0.05))
        np.testing.assert_array_equal(diffuse_flux(c, c_a, 0.2), -diffuse_flux(c_a, c, 0.2))


class TestSimParams(unittest.TestCase):
    """Parameter validation."""

    def test_defaults(self):
        p = SimParams()
        self.assertEqual((p.k1, p.k2, p.epsilon, p.max_iters, p.zero_tol),
                         (0.05, 0.2, 1e-6, 100000, 0.0))

    def test_stability_bound(self):
        """Test that k2 >= 0.25 is rejected with a message naming the bound"""
        for k2 in (0.25, 0.3):
            with self.assertRaises(UnstableParameterError) as ctx:
                SimParams(k2=k2)
            self.assertIn("stability bound", str(ctx.exception))

    def test_invalid_values(self):
        bad = [dict(k1=0.0), dict(k2=-0.1), dict(epsilon=0.0), dict(max_iters=0),
               dict(zero_tol=-1e-9), dict(workers=0), dict(snapshot_iters=(5, 3)),
               dict(snapshot_iters=(0, 2))]
        for kwargs in bad:
            with self.subTest(kwargs=kwargs):
                with self.assertRaises(ConfigurationError):
                    SimParams(**kwargs)


class TestStep(unittest.TestCase):
    """Single synchronous update."""

    def setUp(self):
        self.params = SimParams(k1=0.05, k2=0.2)

    def test_two_pixel_recurrence(self):
        """Test the first two steps of the hand-derived recurrence"""
        img = two_pixel_image()
        grid, change = step(CarrierGrid.zeros(2, 1), img, self.params)
        np.testing.assert_allclose(grid.net_carrier, [0.05, -0.05], atol=1e-15)
        self.assertAlmostEqual(change, 0.05, places=15)

        grid, change = step(grid, img, self.params)
        np.testing.assert_allclose(grid.net_carrier, [0.08, -0.08], atol=1e-15)
        self.assertAlmostEqual(change, 0.03, places=15)

    def test_closed_form_trajectory(self):
        """Test c_t = 0.125 * (1 - 0.6**t)"""
        img = two_pixel_image()
        grid = CarrierGrid.zeros(2, 1)
        for t in range(1, 30):
            grid, _ = step(grid, img, self.params)
            expected = 0.125 * (1 - 0.6 ** t)
            np.testing.assert_allclose(grid.net_carrier, [expected, -expected], atol=1e-14)

    def test_uniform_image_stays_zero(self):
        img = GrayImage(np.full((5, 7), 0.42))
        grid, change = step(CarrierGrid.zeros(7, 5), img, self.params)
        self.assertTrue(np.all(grid.values == 0.0))
        self.assertEqual(change, 0.0)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            step(CarrierGrid.zeros(3, 2), GrayImage(np.zeros((3, 2))), self.params)

    def test_border_pixels_use_existing_neighbors(self):
        """Test a 3x3 bright center against a hand-computed first step"""
        pixels = np.zeros((3, 3))
        pixels[1, 1] = 1.0
        grid, _ = step(CarrierGrid.zeros(3, 3), GrayImage(pixels), self.params)
        expected = np.array([[0.0, 0.05, 0.0],
                             [0.05, -0.2, 0.05],
                             [0.0, 0.05, 0.0]])
        np.testing.assert_allclose(grid.values, expected, atol=1e-15)

    def test_conservation(self):
        """Test that the total net carrier stays at zero every iteration"""
        rng = np.random.default_rng(5)
        images = [make_test_image(kind, 32, 32) for kind in ImageKind]
        images.append(GrayImage(rng.random((13, 21))))
        for img in images:
            grid = CarrierGrid.zeros(img.width, img.height)
            bound = 1e-9 * img.pixels.size
            for _ in range(300):
                grid, _ = step(grid, img, self.params)
                self.assertLessEqual(abs(grid.total()), bound)

    def test_workers_do_not_change_results(self):
        """Test bit-identical steps for any number of row bands"""
        rng = np.random.default_rng(9)
        img = GrayImage(rng.random((17, 11)))
        start = CarrierGrid(rng.normal(size=(17, 11)))
        reference, reference_change = step(start, img, self.params)
        for workers in (2, 3, 5, 17, 40):
            grid, change = step(start, img, replace(self.params, workers=workers))
            np.testing.assert_array_equal(grid.values, reference.values)
            self.assertEqual(change, reference_change)


class TestPropagation(unittest.TestCase):
    """Locality of the transient and k1 scaling."""

    def test_two_halves_locality(self):
        """Test that only pixels within t-1 of the border columns are nonzero"""
        img = make_test_image(ImageKind.TWO_HALVES, 64, 64)
        params = SimParams()
        columns = np.arange(64)
        distance = np.minimum(np.abs(columns - 31), np.abs(columns - 32))
        grid = CarrierGrid.zeros(64, 64)
        for t in range(1, 11):
            grid, _ = step(grid, img, params)
            if t in (1, 5, 10):
                far = distance > t - 1
                self.assertTrue(np.all(grid.values[:, far] == 0.0))
                self.assertTrue(np.all(grid.values[:, ~far] != 0.0))

    def test_k1_scaling(self):
        """Test that doubling k1 doubles every value exactly"""
        img = make_test_image(ImageKind.THREE_SHAPES, 48, 48)
        base, doubled = SimParams(k1=0.05), SimParams(k1=0.1)
        a = CarrierGrid.zeros(48, 48)
        b = CarrierGrid.zeros(48, 48)
        for _ in range(25):
            a, _ = step(a, img, base)
            b, _ = step(b, img, doubled)
            np.testing.assert_array_equal(b.values, 2.0 * a.values)


class TestSignMap(unittest.TestCase):
    """Sign classification."""

    def test_examples(self):
        self.assertEqual(sign_map(CarrierGrid.from_sequence(2, 1, [0.125, -0.125]), 0.0).signs,
                         [Sign.POSITIVE, Sign.NEGATIVE])
        self.assertEqual(sign_map(CarrierGrid.from_sequence(1, 1, [0.0]), 0.0).signs, [Sign.ZERO])
        self.assertEqual(sign_map(CarrierGrid.from_sequence(1, 1, [1e-12]), 1e-9).signs,
                         [Sign.ZERO])

    def test_counts(self):
        sm = sign_map(CarrierGrid.from_sequence(5, 1, [1.0, -2.0, 0.0, 3.0, 0.0]))
        self.assertEqual(sign_counts(sm), (2, 1, 2))


class TestClosedForm(unittest.TestCase):
    """Analytic balance state."""

    def test_examples(self):
        p = SimParams(k1=0.05, k2=0.2)
        np.testing.assert_allclose(closed_form_balance(two_pixel_image(), p).net_carrier,
                                   [0.125, -0.125])
        uniform = closed_form_balance(GrayImage(np.full((4, 4), 0.6)), p)
        np.testing.assert_allclose(uniform.values, 0.0, atol=1e-15)

    def test_two_halves_small(self):
        """Test the 4x2 closed form against brute-force iteration"""
        img = make_test_image(ImageKind.TWO_HALVES, 4, 2)
        p = SimParams(k1=0.05, k2=0.2)
        expected = [0.05, 0.05, -0.05, -0.05] * 2
        np.testing.assert_allclose(closed_form_balance(img, p).net_carrier, expected, atol=1e-15)

        grid = CarrierGrid.zeros(4, 2)
        change = 1.0
        while change >= 1e-12:
            grid, change = step(grid, img, p)
        np.testing.assert_allclose(grid.net_carrier, expected, atol=1e-10)


class TestSimulate(unittest.TestCase):
    """Full relaxation runs."""

    def test_two_pixel_convergence(self):
        result = simulate(two_pixel_image(), SimParams(epsilon=1e-9))
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.final.net_carrier, [0.125, -0.125], atol=1e-6)
        self.assertEqual([e.iteration for e in result.trace.entries],
                         list(range(1, result.iterations + 1)))

    def test_uniform_image(self):
        """Test immediate convergence without a driving field"""
        result = simulate(GrayImage(np.full((6, 9), 0.5)), SimParams())
        self.assertTrue(result.converged)
        self.assertEqual(result.iterations, 1)
        self.assertEqual(result.trace.values, [0.0])
        self.assertTrue(np.all(result.final.values == 0.0))

    def test_iteration_cap(self):
        result = simulate(make_test_image(ImageKind.TWO_HALVES, 16, 16), SimParams(max_iters=7))
        self.assertFalse(result.converged)
        self.assertEqual(result.iterations, 7)

    def test_snapshots(self):
        img = make_test_image(ImageKind.TWO_HALVES, 16, 8)
        calls = []
        result = simulate(img, SimParams(snapshot_iters=(1, 3, 10 ** 6)),
                          on_iteration=lambda i, c: calls.append(i))
        self.assertEqual([n for n, _ in result.snapshots], [1, 3])
        first = result.snapshots[0][1]
        # Only the two columns at the border carry a sign after one step
        self.assertEqual(sign_counts(first), (8, 8, 16 * 8 - 16))
        self.assertEqual(calls, list(range(1, result.iterations + 1)))

    def test_unstable_rejected(self):
        p = SimParams()
        object.__setattr__(p, 'k2', 0.3)
        with self.assertRaises(UnstableParameterError):
            simulate(two_pixel_image(), p)

    def test_oracle_equivalence(self):
        """Test agreement with the analytic balance on random images"""
        rng = np.random.default_rng(2024)
        p = SimParams(epsilon=1e-12)
        for _ in range(100):
            width, height = (int(v) for v in rng.integers(1, 17, size=2))
            img = GrayImage(rng.random((height, width)))
            result = simulate(img, p)
            self.assertTrue(result.converged)
            error = np.abs(result.final.values - closed_form_balance(img, p).values).max()
            self.assertLess(error, 1e-6)

    def test_drift_computed_once_per_run(self):
        """Test that the image drift is evaluated once, not every iteration"""
        img = make_test_image(ImageKind.RECTANGLE, 12, 10)
        with patch('carrier_seg.carrier_sim.drift_flux', wraps=drift_flux) as spy:
            result = simulate(img, SimParams(max_iters=40, workers=3))
        self.assertEqual(result.iterations, 40)
        # One horizontal and one vertical evaluation
        self.assertEqual(spy.call_count, 2)

    def test_deterministic_across_workers(self):
        rng = np.random.default_rng(1)
        img = GrayImage(rng.random((23, 14)))
        runs = [simulate(img, SimParams(epsilon=1e-8, snapshot_iters=(2, 50), workers=w))
                for w in (1, 1, 4)]
        for other in runs[1:]:
            np.testing.assert_array_equal(other.final.values, runs[0].final.values)
            self.assertEqual(other.trace.values, runs[0].trace.values)
            self.assertEqual([s for _, s in other.snapshots], [s for _, s in runs[0].snapshots])


class TestSyntheticImages(unittest.TestCase):
    """Balance-state sign patterns of the three test images at defaults."""

    @classmethod
    def setUpClass(cls):
        cls.params = SimParams()
        cls.images = {
            ImageKind.TWO_HALVES: make_test_image(ImageKind.TWO_HALVES, 64, 64),
            ImageKind.RECTANGLE: make_test_image(ImageKind.RECTANGLE, 64, 64),
            ImageKind.THREE_SHAPES: make_test_image(ImageKind.THREE_SHAPES, 96, 96),
        }
        cls.runs = {kind: simulate(img, cls.params) for kind, img in cls.images.items()}

    def test_all_converge(self):
        for kind, result in self.runs.items():
            with self.subTest(kind=kind):
                self.assertTrue(result.converged)
                self.assertLess(result.trace.values[-1], 1e-6)

    def test_two_halves_signs(self):
        """Test darker half positive, brighter half negative"""
        grid = sign_map(self.runs[ImageKind.TWO_HALVES].final).grid
        self.assertTrue(np.all(grid[:, :32] == Sign.POSITIVE))
        self.assertTrue(np.all(grid[:, 32:] == Sign.NEGATIVE))

    def test_rectangle_signs(self):
        grid = sign_map(self.runs[ImageKind.RECTANGLE].final).grid
        self.assertTrue(np.all(grid[16:48, 16:48] == Sign.POSITIVE))
        outside = np.ones((64, 64), dtype=bool)
        outside[16:48, 16:48] = False
        self.assertTrue(np.all(grid[outside] == Sign.NEGATIVE))

    def test_three_shapes_signs(self):
        """Test shapes positive and background negative"""
        img = make_test_image(ImageKind.THREE_SHAPES, 96, 96)
        grid = sign_map(self.runs[ImageKind.THREE_SHAPES].final).grid
        background = img.pixels == THREE_SHAPES_LEVELS[0]
        self.assertTrue(np.all(grid[background] == Sign.NEGATIVE))
        self.assertTrue(np.all(grid[~background] == Sign.POSITIVE))

    def test_trace_decreases(self):
        """Test final trace value is below 1% of the peak and the first entry"""
        for kind, result in self.runs.items():
            with self.subTest(kind=kind):
                values = result.trace.values
                self.assertLess(values[-1], values[0])
                self.assertLess(values[-1], 0.01 * max(values))

    def test_conservation_through_convergence(self):
        """Test zero total net carrier at every iteration of each default run"""
        for kind, result in self.runs.items():
            with self.subTest(kind=kind):
                img = self.images[kind]
                bound = 1e-9 * img.pixels.size
                grid = CarrierGrid.zeros(img.width, img.height)
                iterations, change = 0, float('inf')
                while change >= self.params.epsilon:
                    grid, change = step(grid, img, self.params)
                    iterations += 1
                    self.assertLessEqual(abs(grid.total()), bound)
                self.assertEqual(iterations, result.iterations)
                np.testing.assert_array_equal(grid.values, result.final.values)

    def test_balance_matches_closed_form(self):
        img = make_test_image(ImageKind.TWO_HALVES, 64, 64)
        expected = closed_form_balance(img, self.params).values
        self.assertLess(np.abs(self.runs[ImageKind.TWO_HALVES].final.values - expected).max(), 0.01)


class TestK1ScalingRun(unittest.TestCase):
    """Sign maps do not depend on the scale of k1."""

    def test_three_shapes_sign_maps(self):
        img = make_test_image(ImageKind.THREE_SHAPES, 96, 96)
        base = simulate(img, SimParams(k1=0.05, snapshot_iters=(1, 10)))
        doubled = simulate(img, SimParams(k1=0.1, snapshot_iters=(1, 10)))
        self.assertEqual([s for _, s in base.snapshots], [s for _, s in doubled.snapshots])
        self.assertEqual(sign_map(base.final), sign_map(doubled.final))


class TestTraceAndRendering(unittest.TestCase):
    """Trace CSV and carrier rendering."""

    def test_trace_csv(self):
        trace = ConvergenceTrace()
        trace.record(1, 0.05)
        trace.record(2, 0.03)
        trace.record(3, 1.5e-7)
        text = trace.to_csv()
        lines = text.splitlines()
        self.assertEqual(lines[0], "iteration,mean_abs_change")
        self.assertEqual(lines[1], "1,0.0500000000000")
        self.assertEqual(lines[3], "3,0.000000150000000000")
        back = ConvergenceTrace.from_csv(text)
        self.assertEqual([e.iteration for e in back.entries], [1, 2, 3])
        for a, b in zip(back.values, trace.values):
            self.assertAlmostEqual(a, b, delta=abs(b) * 1e-11)

    def test_zero_row(self):
        trace = simulate(GrayImage(np.full((2, 2), 0.1)), SimParams()).trace
        self.assertEqual(trace.to_csv().splitlines()[1], "1,0.000000000000")

    def test_trace_iterations_must_be_consecutive(self):
        trace = ConvergenceTrace()
        with self.assertRaises(ValidationError):
            trace.record(2, 0.1)

    def test_carrier_image(self):
        flat = carrier_image(CarrierGrid.zeros(3, 2))
        self.assertTrue(np.all(flat.pixels == 0.5))
        img = carrier_image(CarrierGrid.from_sequence(3, 1, [0.2, -0.1, 0.0]))
        np.testing.assert_allclose(img.intensities, [1.0, 0.25, 0.5])


if __name__ == '__main__':
    unittest.main()
