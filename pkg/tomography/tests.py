import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.polynomial.legendre import leggauss
from numpy.testing import assert_allclose

from core import wavf
from core.exceptions import ConvergenceError
from geometry.domain import DomainConfig
from solver.potential import Bump, PotentialSpec
from tomography.recon import (
    ReconGrid,
    build_system,
    gradient_operator,
    invert,
    ray_breakpoints,
    ray_count_study,
    ray_row,
    select_lambda,
    write_reconstruction,
)
from tomography.transform import (
    ARC_FACTOR,
    FreeRay,
    RaySample,
    bump_interval,
    chord_interval,
    ray_integral_adaptive,
    ray_integral_oracle,
    read_samples,
    write_samples,
)


def demo_domain():
    return DomainConfig(n=2, r=1.0, r_tilde=1.3, T=2.5)


def oblique_ray():
    return FreeRay(t0=0.5, p_entry=(-0.8, -0.2), xi=(0.8, 0.6), index=1)


def fan_rays(count, radius=0.9, offset=0.3):
    """Abanico de rayos que atraviesan Ω con direcciones repartidas."""
    rays = []
    for k in range(count):
        angle = 2.0 * math.pi * k / count
        xi = np.array([math.cos(angle), math.sin(angle)])
        perp = np.array([-xi[1], xi[0]])
        shift = offset * ((k % 3) - 1)
        rays.append(
            FreeRay(
                t0=0.3 + 0.15 * (k % 7),
                p_entry=-radius * xi + shift * perp,
                xi=xi,
                index=k + 1,
            )
        )
    return rays


def central_bump():
    return PotentialSpec(
        bumps=(Bump(center=(1.2, 0.1, -0.1), radii=(0.4, 0.3), amplitude=1.5),)
    )


class RayIntegralTest(SimpleTestCase):
    """Tests para las integrales de rayo de referencia."""

    def test_oracles_agree(self):
        """Test para el acuerdo entre Simpson y la cuadratura adaptativa."""
        V = central_bump()
        rng = np.random.default_rng(7)
        for _ in range(6):
            angle = rng.uniform(0.0, 2.0 * math.pi)
            xi = (math.cos(angle), math.sin(angle))
            entry = np.array([0.1, -0.1]) + rng.uniform(-0.08, 0.08, size=2)
            ray = FreeRay(t0=1.2 + rng.uniform(-0.1, 0.1), p_entry=entry, xi=xi)
            simpson_value = ray_integral_oracle(V, ray)
            quad_value = ray_integral_adaptive(V, ray)
            self.assertGreater(simpson_value, 0.0)
            assert_allclose(simpson_value, quad_value, rtol=1e-8, atol=1e-12)

    def test_zero_potential(self):
        """Test para V ≡ 0."""
        ray = oblique_ray()
        self.assertEqual(ray_integral_oracle(PotentialSpec(), ray), 0.0)
        self.assertEqual(ray_integral_adaptive(PotentialSpec(), ray), 0.0)

    def test_disjoint_bump(self):
        """Test para un rayo que no toca el soporte del bulto."""
        V = central_bump()
        ray = FreeRay(t0=0.1, p_entry=(-0.9, 0.9), xi=(1.0, 0.0))
        self.assertIsNone(bump_interval(V.bumps[0], ray))
        self.assertEqual(ray_integral_oracle(V, ray), 0.0)

    def test_arclength_factor(self):
        """Test para el factor √2 de la longitud de arco."""
        bump = central_bump().bumps[0]
        ray = FreeRay(t0=1.2, p_entry=(0.1, -0.1), xi=(1.0, 0.0))
        start, stop = bump_interval(bump, ray)
        nodes, weights = leggauss(40)
        s = 0.5 * (stop - start) * nodes + 0.5 * (stop + start)
        t, x = ray.point(s)
        expected = 0.5 * (stop - start) * np.dot(weights, bump.evaluate(t, x))
        assert_allclose(
            ray_integral_oracle(central_bump(), ray), ARC_FACTOR * expected, rtol=1e-8
        )

    def test_non_unit_direction_rejected(self):
        """Test para el rechazo de direcciones no unitarias."""
        with self.assertRaises(ValueError):
            FreeRay(t0=0.5, p_entry=(0.0, 0.0), xi=(1.0, 1.0))

    def test_sample_validation(self):
        """Test para la validación de procedencia y valor."""
        with self.assertRaises(ValueError):
            RaySample(oblique_ray(), 1.0, "medida")
        with self.assertRaises(ValueError):
            RaySample(oblique_ray(), math.nan)

    def test_samples_csv(self):
        """Test para la escritura y lectura del CSV de muestras."""
        samples = [
            RaySample(ray, 0.25 * ray.index, "extraction") for ray in fan_rays(4)
        ]
        with tempfile.TemporaryDirectory() as folder:
            path = write_samples(samples, Path(folder) / "samples.csv")
            loaded = read_samples(path)
        self.assertEqual(len(loaded), 4)
        for original, copy in zip(samples, loaded):
            self.assertEqual(copy.provenance, "extraction")
            self.assertEqual(copy.ray.index, original.ray.index)
            self.assertEqual(copy.value, original.value)
            assert_allclose(copy.ray.xi, original.ray.xi, rtol=0, atol=0)


class SystemMatrixTest(SimpleTestCase):
    """Tests para la matriz del sistema de rayos."""

    def setUp(self):
        self.domain = demo_domain()
        self.grid = ReconGrid.build(self.domain, time_cells=5, space_cells=4)

    def test_row_sum_is_chord_length(self):
        """Test para la partición de la unidad: suma de la fila = √2 · cuerda."""
        ray = oblique_ray()
        start, stop = chord_interval(self.domain, ray)
        for grid in (self.grid, self.grid.refined()):
            _, weights = ray_row(ray, grid)
            assert_allclose(weights.sum(), ARC_FACTOR * (stop - start), rtol=1e-10)

    def test_linear_function_exact(self):
        """Test para la reproducción exacta de funciones afines."""

        def affine(t, x):
            return 1.0 + 0.5 * t + 0.3 * x[..., 0] - 0.2 * x[..., 1]

        t, x = self.grid.nodes()
        coeffs = affine(t, x).ravel()
        ray = oblique_ray()
        columns, weights = ray_row(ray, self.grid)
        start, stop = chord_interval(self.domain, ray)
        nodes, gauss = leggauss(4)
        s = 0.5 * (stop - start) * nodes + 0.5 * (stop + start)
        t_ray, x_ray = ray.point(s)
        expected = 0.5 * (stop - start) * np.dot(gauss, affine(t_ray, x_ray))
        assert_allclose(
            np.dot(weights, coeffs[columns]), ARC_FACTOR * expected, rtol=1e-11
        )

    def test_row_matches_interpolant(self):
        """Test para la integral exacta del interpolante multilineal."""
        rng = np.random.default_rng(3)
        coeffs = rng.standard_normal(self.grid.size)
        ray = oblique_ray()
        columns, weights = ray_row(ray, self.grid)
        sigma = ray_breakpoints(ray, self.grid)
        nodes, gauss = leggauss(6)
        expected = 0.0
        for left, right in zip(sigma[:-1], sigma[1:]):
            s = 0.5 * (right - left) * nodes + 0.5 * (right + left)
            t, x = ray.point(s)
            values = self.grid.interpolate(coeffs, t, x)
            expected += 0.5 * (right - left) * np.dot(gauss, values)
        assert_allclose(
            np.dot(weights, coeffs[columns]), ARC_FACTOR * expected, rtol=1e-10
        )

    def test_empty_row_flagged(self):
        """Test para los rayos que no cortan (0, T) × Ω."""
        outside = FreeRay(t0=0.5, p_entry=(-2.0, 1.5), xi=(1.0, 0.0), index=9)
        system = build_system([oblique_ray(), outside], self.grid)
        self.assertEqual(system.shape, (2, self.grid.size))
        self.assertEqual(system.empty_rows, [1])
        self.assertEqual(system.matrix[1].nnz, 0)

    def test_threaded_build_matches(self):
        """Test para la construcción en paralelo."""
        rays = fan_rays(8)
        serial = build_system(rays, self.grid).matrix
        threaded = build_system(rays, self.grid, workers=3).matrix
        assert_allclose(serial.toarray(), threaded.toarray(), rtol=0, atol=0)

    def test_empty_list(self):
        """Test para una lista de rayos vacía."""
        with self.assertRaises(ValueError):
            build_system([], self.grid)

    def test_gradient_annihilates_constants(self):
        """Test para el núcleo del regularizador."""
        G = gradient_operator(self.grid)
        assert_allclose(G @ np.ones(self.grid.size), 0.0, atol=1e-12)
        t, _ = self.grid.nodes()
        slope = G @ t.ravel()
        self.assertAlmostEqual(float(slope.max()), 1.0, places=12)


class InversionTest(SimpleTestCase):
    """Tests para la inversión regularizada."""

    def setUp(self):
        self.domain = demo_domain()
        self.grid = ReconGrid.build(self.domain, time_cells=4, space_cells=4)
        self.rays = fan_rays(60)
        self.system = build_system(self.rays, self.grid)

    def samples_from(self, coeffs):
        values = self.system.matrix @ coeffs
        return [RaySample(ray, float(v)) for ray, v in zip(self.rays, values)]

    def test_zero_data(self):
        """Test para datos nulos: reconstrucción nula."""
        samples = [RaySample(ray, 0.0) for ray in self.rays]
        result = invert(samples, self.grid, 1e-3, self.system)
        assert_allclose(result.coeffs, 0.0, atol=0)
        self.assertEqual(result.data_residual, 0.0)

    def test_consistent_data_fitted(self):
        """Test para el ajuste de datos generados por un interpolante afín."""
        t, x = self.grid.nodes()
        coeffs = (1.0 + 0.5 * t + 0.3 * x[..., 0]).ravel()
        result = invert(self.samples_from(coeffs), self.grid, 1e-4, self.system)
        self.assertLess(result.data_residual, 1e-2)
        self.assertEqual(result.iterations, len(result.residuals))

    def test_convergence_error(self):
        """Test para el agotamiento de iteraciones con el mejor iterado."""
        rng = np.random.default_rng(11)
        samples = self.samples_from(rng.standard_normal(self.grid.size))
        with self.assertRaises(ConvergenceError) as context:
            invert(samples, self.grid, 1e-3, self.system, maxiter=1, tol=1e-14)
        error = context.exception
        self.assertEqual(error.best_iterate.shape, (self.grid.size,))
        self.assertEqual(len(error.residuals), 1)
        self.assertEqual(error.exit_code, 9)

    def test_rejects_few_rays_and_bad_lambda(self):
        """Test para los argumentos inválidos."""
        samples = [RaySample(ray, 0.0) for ray in self.rays]
        with self.assertRaises(ValueError):
            invert(samples[:5], self.grid, 1e-3)
        with self.assertRaises(ValueError):
            invert(samples, self.grid, 0.0, self.system)

    def test_lambda_selection_with_truth(self):
        """Test para el barrido de λ con potencial conocido."""
        V = central_bump()
        samples = self.samples_from(self.grid.project(V))
        best, results = select_lambda(
            samples, self.grid, [1e-2, 1e-4], truth=V, system=self.system
        )
        self.assertEqual(len(results), 2)
        self.assertEqual(
            best.masked_error, min(item.masked_error for item in results)
        )
        self.assertEqual([item.lam for item in results], [1e-4, 1e-2])

    def test_write_reconstruction(self):
        """Test para el archivo WAVF de la reconstrucción."""
        samples = [RaySample(ray, 0.0) for ray in self.rays]
        result = invert(samples, self.grid, 1e-3, self.system)
        with tempfile.TemporaryDirectory() as folder:
            path = write_reconstruction(result, Path(folder) / "V.wavf", "abc")
            values, metadata = wavf.read_field(path)
        self.assertEqual(values.shape, self.grid.node_shape)
        self.assertEqual(metadata["config_hash"], "abc")
        self.assertEqual(metadata["cells"], [4, 4, 4])
        self.assertEqual(
            metadata["unconstrained_cells"], int((~self.grid.mask).sum())
        )


class RayCountStudyTest(SimpleTestCase):
    """Tests para el error de inversión frente al número de rayos."""

    def test_error_with_doubling_rays(self):
        """Test para 400 rayos oráculo: error ≤ 20% y no creciente al duplicar."""
        domain = demo_domain()
        V = PotentialSpec(
            bumps=(Bump(center=(1.25, 0.0, 0.0), radii=(0.9, 0.8), amplitude=1.0),)
        )
        grid = ReconGrid.build(domain, time_cells=8, space_cells=10)
        points = ray_count_study(
            V, domain, grid, (100, 200, 400), (24, 9), [1e-4, 1e-3, 1e-2]
        )
        self.assertEqual([point.count for point in points], [100, 200, 400])
        errors = [point.masked_error for point in points]
        self.assertLessEqual(errors[-1], 0.2)
        self.assertLessEqual(errors[1], errors[0])
        self.assertLessEqual(errors[2], errors[1])
