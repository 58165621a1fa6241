import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from scipy import integrate

from core.exceptions import GeometryError, InsufficientRays
from geometry.cutoff import build_cutoff, eval_eta, eval_zeta, ramp
from geometry.domain import DomainConfig, in_D
from geometry.rays import (
    RayDescriptor,
    density_proxy,
    enumerate_rays,
    line_distance,
    orthonormal_frame,
    random_ray,
    read_manifest,
    tube_points,
    write_manifest,
)


def demo_domain():
    return DomainConfig(n=2, r=1.0, r_tilde=1.3, T=2.5)


class CutoffProfileTest(SimpleTestCase):
    """Tests para el perfil de corte χ."""

    def setUp(self):
        self.chi = build_cutoff(2)

    def test_plateau_and_support(self):
        """Test para los valores en la meseta y fuera del soporte."""
        self.assertEqual(float(self.chi(0.0)), 1.0)
        self.assertEqual(float(self.chi(self.chi.plateau)), 1.0)
        self.assertEqual(float(self.chi(1.0)), 0.0)
        self.assertEqual(float(self.chi(-self.chi.support)), 0.0)
        samples = self.chi(np.linspace(-0.5, 0.5, 2001))
        self.assertTrue(np.all(samples >= 0.0))
        self.assertTrue(np.all(samples <= 1.0))

    def test_l2_norm_matches_quadrature(self):
        """Test para ∫χ² frente a cuadratura adaptativa independiente."""
        a, b = self.chi.plateau, self.chi.support
        value, _ = integrate.quad(
            lambda t: float(self.chi(t)) ** 2,
            -b,
            b,
            points=[-a, a],
            epsabs=0.0,
            epsrel=1e-14,
            limit=200,
        )
        self.assertLess(abs(value - self.chi.l2_norm_sq) / value, 1e-12)
        self.assertGreater(self.chi.l2_norm_sq, 1.0 / (4.0 * math.sqrt(2.0)))
        self.assertLess(self.chi.l2_norm_sq, 1.0 / (2.0 * math.sqrt(2.0)))

    def test_derivatives_match_finite_differences(self):
        """Test para las derivadas exactas frente a diferencias centradas."""
        rng = np.random.default_rng(7)
        t = rng.uniform(-self.chi.support, self.chi.support, size=100)
        h = 1e-5 * self.chi.width
        for d in (1, 2, 3):
            exact = self.chi(t, d)
            approx = (self.chi(t + h, d - 1) - self.chi(t - h, d - 1)) / (2 * h)
            scale = np.max(np.abs(exact))
            assert_allclose(approx, exact, atol=1e-6 * scale, rtol=0)

    def test_fourth_derivative_available(self):
        """Test para la cuarta derivada (nudos C⁴)."""
        t = np.linspace(-self.chi.support, self.chi.support, 401)
        h = 1e-6 * self.chi.width
        exact = self.chi(t, 4)
        approx = (self.chi(t + h, 3) - self.chi(t - h, 3)) / (2 * h)
        assert_allclose(approx, exact, atol=1e-4 * np.max(np.abs(exact)), rtol=0)
        with self.assertRaises(ValueError):
            self.chi(0.0, self.chi.smoothness + 1)

    def test_invalid_dimension(self):
        """Test para rechazar n < 2."""
        with self.assertRaises(ValueError):
            build_cutoff(1)

    def test_extraction_constant(self):
        """Test para C_χ = 2^{-1/2}(∫χ²)ⁿ."""
        expected = self.chi.l2_norm_sq**2 / math.sqrt(2.0)
        self.assertAlmostEqual(self.chi.extraction_constant(), expected, places=15)

    def test_decreasing_ramp(self):
        """Test para la rampa decreciente (start > end)."""
        self.assertEqual(float(ramp(0.0, 2.0, 1.0)), 1.0)
        self.assertEqual(float(ramp(3.0, 2.0, 1.0)), 0.0)
        self.assertAlmostEqual(float(ramp(1.5, 2.0, 1.0)), 0.5, places=14)


class DomainTest(SimpleTestCase):
    """Tests para el dominio y el conjunto óptimo 𝒟."""

    def setUp(self):
        self.domain = demo_domain()

    def test_default_box(self):
        """Test para el semiancho de caja por defecto r̃ + T."""
        self.assertAlmostEqual(self.domain.box_halfwidth, 3.8)

    def test_rejects_short_horizon(self):
        """Test para T ≤ 2r."""
        with self.assertRaises(GeometryError):
            DomainConfig(n=2, r=1.0, r_tilde=1.3, T=2.0)

    def test_rejects_small_box(self):
        """Test para una caja demasiado pequeña."""
        with self.assertRaises(GeometryError):
            DomainConfig(n=2, r=1.0, r_tilde=1.3, T=2.5, box_halfwidth=3.0)

    def test_center_point(self):
        """Test para el centro a tiempo T/2."""
        self.assertTrue(in_D(self.domain, 1.25, np.zeros(2)))
        wide = DomainConfig(n=2, r=1.5, r_tilde=1.8, T=3.2)
        self.assertTrue(in_D(wide, 1.6, np.zeros(2)))
        short = DomainConfig(n=2, r=1.0, r_tilde=1.3, T=2.01)
        self.assertTrue(in_D(short, 1.005, np.zeros(2)))

    def test_initial_time_and_exterior(self):
        """Test para t = 0 y puntos fuera de Ω."""
        rng = np.random.default_rng(3)
        x = rng.uniform(-0.7, 0.7, size=(50, 2))
        self.assertFalse(np.any(in_D(self.domain, 0.0, x)))
        self.assertFalse(in_D(self.domain, 1.25, np.array([1.1, 0.0])))
        self.assertFalse(in_D(self.domain, 0.1, np.array([0.5, 0.0])))


class RayFamilyTest(SimpleTestCase):
    """Tests para la enumeración de rayos admisibles."""

    def setUp(self):
        self.domain = demo_domain()
        self.family = enumerate_rays(self.domain, 12, (16, 3))

    def test_first_ray_midpoint(self):
        """Test para la propiedad (i) en el punto medio del primer rayo."""
        ray = enumerate_rays(self.domain, 1, (16, 3))[1]
        t_mid = ray.t0 + ray.chord_length / 2
        x_mid = 0.5 * (ray.p_entry + ray.p_exit)
        self.assertTrue(in_D(self.domain, t_mid, x_mid))

    def test_unit_direction_and_boundary_entry(self):
        """Test para |ξ| = 1 y γ(0) ∈ (0,T) × ∂Ω."""
        for ray in self.family.rays:
            self.assertAlmostEqual(np.linalg.norm(ray.xi), 1.0, places=14)
            self.assertAlmostEqual(np.linalg.norm(ray.p_entry), 1.0, places=14)
            self.assertTrue(0.0 < ray.t0 < self.domain.T)

    def test_strictly_decreasing_radii(self):
        """Test para δ_1 > δ_2 > … estrictamente."""
        deltas = [ray.delta for ray in self.family.rays]
        self.assertTrue(all(a > b for a, b in zip(deltas, deltas[1:])))
        self.assertEqual(
            [ray.index for ray in self.family.rays], list(range(1, 13))
        )

    def test_anchor_ball_in_exterior(self):
        """Test para B_δ(q_j) ⊂ (0,T) × (Ω̃ ∖ Ω̄)."""
        for ray in self.family.rays:
            self.assertLess(ray.s_hat, 0.0)
            radius = np.linalg.norm(ray.anchor_x)
            self.assertGreater(radius - ray.delta, self.domain.r)
            self.assertLess(radius + ray.delta, self.domain.r_tilde)
            self.assertGreater(ray.anchor_t - ray.delta, 0.0)
            self.assertLess(ray.anchor_t + ray.delta, self.domain.T)
            t, x = ray.point(ray.s_hat)
            assert_allclose(x, ray.anchor_x, atol=1e-15)

    def test_frame_orthonormal(self):
        """Test para la ortonormalidad de {ξ, e_k}."""
        rng = np.random.default_rng(11)
        directions = [ray.xi for ray in self.family.rays]
        for _ in range(20):
            v = rng.normal(size=3)
            directions.append(v / np.linalg.norm(v))
        for xi in directions:
            basis = np.vstack([xi, orthonormal_frame(xi)])
            gram = basis @ basis.T
            self.assertLess(np.max(np.abs(gram - np.eye(xi.size))), 1e-12)

    def test_tube_containment(self):
        """Test para que el tubo de radio δ_j dentro de (0,T)×Ω quede en 𝒟."""
        rng = np.random.default_rng(5)
        for ray in self.family.rays[:4]:
            points = tube_points(ray, self.domain, 1000, rng)
            self.assertEqual(len(points), 1000)
            self.assertTrue(np.all(in_D(self.domain, points[:, 0], points[:, 1:])))

    def test_insufficient_rays(self):
        """Test para InsufficientRays con J excesivo."""
        with self.assertRaises(InsufficientRays):
            enumerate_rays(self.domain, 10**6, (4, 1))

    def test_density_proxy_non_increasing(self):
        """Test para el indicador de densidad al refinar las semillas."""
        coarse = enumerate_rays(self.domain, None, (8, 3))
        fine = enumerate_rays(self.domain, None, (16, 7))
        angle_in, angle_out = 0.3, 2.0
        p_entry = np.array([math.cos(angle_in), math.sin(angle_in)])
        p_exit = np.array([math.cos(angle_out), math.sin(angle_out)])
        held_out = RayDescriptor(
            index=0,
            t0=0.9,
            p_entry=p_entry,
            p_exit=p_exit,
            xi=(p_exit - p_entry) / np.linalg.norm(p_exit - p_entry),
            s_hat=-0.1,
            anchor_x=p_entry,
            delta=0.01,
        )
        self.assertLessEqual(
            density_proxy(fine, held_out), density_proxy(coarse, held_out)
        )

    def test_random_ray_admissible(self):
        """Test para un rayo aleatorio fuera de la enumeración."""
        rng = np.random.default_rng(17)
        for _ in range(5):
            ray = random_ray(self.domain, rng)
            self.assertAlmostEqual(np.linalg.norm(ray.p_entry), 1.0, places=12)
            self.assertAlmostEqual(np.linalg.norm(ray.xi), 1.0, places=12)
            self.assertLess(ray.s_hat, 0.0)
            self.assertGreater(ray.delta, 0.0)
            t_mid = ray.t0 + ray.chord_length / 2
            x_mid = 0.5 * (ray.p_entry + ray.p_exit)
            self.assertTrue(in_D(self.domain, t_mid, x_mid))

    def test_random_ray_exhausted(self):
        """Test para GeometryError sin candidatos que probar."""
        with self.assertRaises(GeometryError):
            random_ray(self.domain, np.random.default_rng(1), attempts=0)

    def test_line_distance(self):
        """Test para θ entre rectas paralelas y secantes."""
        first, second = self.family[1], self.family[2]
        self.assertAlmostEqual(line_distance(first, first), 0.0, places=12)
        self.assertGreaterEqual(line_distance(first, second), 0.0)

    def test_manifest_round_trip(self):
        """Test para escribir y releer el manifiesto CSV."""
        with tempfile.TemporaryDirectory() as tmp:
            path = write_manifest(
                self.family, Path(tmp) / "rays.csv", {"config_hash": "abc"}
            )
            text = path.read_text(encoding="utf-8")
            self.assertIn("# config_hash: abc", text)
            family, header = read_manifest(path)
        self.assertEqual(header["config_hash"], "abc")
        self.assertEqual(len(family), len(self.family))
        for loaded, ray in zip(family.rays, self.family.rays):
            self.assertEqual(loaded.delta, ray.delta)
            self.assertAlmostEqual(loaded.anchor_t, ray.anchor_t, places=14)
            assert_allclose(loaded.frame, ray.frame, atol=0)


class ZetaEtaTest(SimpleTestCase):
    """Tests para los cortes ζ_{j,±} y η_j."""

    def setUp(self):
        self.domain = demo_domain()
        self.ray = enumerate_rays(self.domain, 1, (16, 3))[1]

    def test_zeta_values(self):
        """Test para ζ₋(s_j + 1) = 1 y ζ₊(s_j + δ) = 0."""
        s = self.ray.anchor_t
        self.assertEqual(float(eval_zeta(self.ray, "-", s + 1.0)), 1.0)
        self.assertEqual(float(eval_zeta(self.ray, "+", s + self.ray.delta)), 0.0)
        quarter = self.ray.delta / (4 * math.sqrt(2))
        self.assertEqual(float(eval_zeta(self.ray, "-", s - quarter)), 0.0)

    def test_zeta_transitions_disjoint(self):
        """Test para ζ₋ζ₊ ≡ 1 en [s_j, s_j + δ/(8√n)]."""
        s = self.ray.anchor_t
        eighth = self.ray.delta / (8 * math.sqrt(2))
        t = np.linspace(s, s + eighth, 500)
        product = eval_zeta(self.ray, "-", t) * eval_zeta(self.ray, "+", t)
        assert_allclose(product, 1.0, atol=0)

    def test_zeta_derivative(self):
        """Test para la derivada de ζ₋ frente a diferencias centradas."""
        quarter = self.ray.delta / (4 * math.sqrt(2))
        t = np.linspace(self.ray.anchor_t - quarter, self.ray.anchor_t, 100)
        h = 1e-5 * quarter
        exact = eval_zeta(self.ray, "-", t, 1)
        approx = (eval_zeta(self.ray, "-", t + h) - eval_zeta(self.ray, "-", t - h)) / (
            2 * h
        )
        assert_allclose(approx, exact, atol=1e-6 * np.max(np.abs(exact)), rtol=0)

    def test_eta_values(self):
        """Test para η = 1 en Ω y η = 0 a distancia δ/2."""
        self.assertEqual(float(eval_eta(self.ray, self.domain, np.zeros(2))), 1.0)
        x = np.array([self.domain.r + self.ray.delta / 2, 0.0])
        self.assertEqual(float(eval_eta(self.ray, self.domain, x)), 0.0)
        inside = np.array([0.3, -0.6])
        self.assertEqual(float(eval_eta(self.ray, self.domain, inside, (1, 0))), 0.0)
        self.assertEqual(float(eval_eta(self.ray, self.domain, inside, (0, 2))), 0.0)

    def test_eta_gradient(self):
        """Test para ∇η frente a diferencias centradas en la capa."""
        rng = np.random.default_rng(2)
        rho = rng.uniform(
            self.domain.r, self.domain.r + self.ray.delta / 4, size=100
        )
        angle = rng.uniform(0, 2 * math.pi, size=100)
        x = np.stack([rho * np.cos(angle), rho * np.sin(angle)], axis=-1)
        h = 1e-5 * self.ray.delta / 4
        shift = np.array([h, 0.0])
        exact = eval_eta(self.ray, self.domain, x, (1, 0))
        approx = (
            eval_eta(self.ray, self.domain, x + shift)
            - eval_eta(self.ray, self.domain, x - shift)
        ) / (2 * h)
        assert_allclose(approx, exact, atol=1e-6 * np.max(np.abs(exact)), rtol=0)
        with self.assertRaises(ValueError):
            eval_eta(self.ray, self.domain, x, (2, 1))
