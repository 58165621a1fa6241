import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from core.exceptions import CoverageError, ResolutionError
from geometry.domain import DomainConfig
from geometry.rays import RayDescriptor, RayFamily
from measurement.diagnostics import density_index, density_proxy, overlap_map
from measurement.extraction import (
    ExtractionResult,
    compute_I,
    compute_S,
    extract_ray_integrals,
    read_extraction_csv,
    s_terms,
)
from measurement.oracle import (
    bound_ratio,
    lemma_diagnostics,
    lemma_trend,
    oracle_extract,
)
from measurement.tubes import TubeQuadrature, overlap_interval
from optics.probes import build_probe
from solver.grid import FieldSlab, GridSpec
from solver.potential import Bump, PotentialSpec
from source.weights import WeightScheme, frequency_weights
from tomography.transform import ray_integral_oracle


def wide_domain(T=0.7):
    return DomainConfig(n=2, r=0.3, r_tilde=1.0, T=T)


def horizontal_ray(index=1, t0=0.7, height=0.0, delta=0.3):
    """Rayo con ξ = (1, 0) a altura ``height`` que entra en Ω en t₀."""
    entry = -math.sqrt(0.09 - height**2)
    return RayDescriptor(
        index=index,
        t0=t0,
        p_entry=(entry, height),
        p_exit=(-entry, height),
        xi=(1.0, 0.0),
        s_hat=-0.35,
        anchor_x=(entry - 0.35, height),
        delta=delta,
    )


def reverse_ray(index=2):
    return RayDescriptor(
        index=index,
        t0=0.6,
        p_entry=(0.3, 0.0),
        p_exit=(-0.3, 0.0),
        xi=(-1.0, 0.0),
        s_hat=-0.3,
        anchor_x=(0.6, 0.0),
        delta=0.25,
    )


def family_of(domain, *rays):
    return RayFamily(
        domain=domain,
        rays=list(rays),
        boundary_samples=np.empty((0, 2)),
        time_samples=np.empty(0),
    )


def weights_for(J, L=2):
    taus, c = frequency_weights(L)
    kappa = tuple(1.0 + j for j in range(J))
    b = tuple(2.0**-j / value for j, value in enumerate(kappa, start=1))
    return WeightScheme(taus=taus, c=c, kappa=kappa, b=b, kappa_mode="formula")


def exterior_grid():
    return GridSpec(n=2, dx=2.2 / 150, dt=0.7 / 75, halfwidth=1.1, steps=75, cells=150)


def random_exterior(grid, domain, seed=7):
    points = grid.annulus(domain.r, domain.r_tilde)
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((grid.steps + 1, points.size))
    return FieldSlab(grid=grid, values=values, region="exterior", points=points)


class ComputeITest(SimpleTestCase):
    """Tests para la integral I_N^j sobre datos exteriores."""

    def setUp(self):
        self.domain = wide_domain()
        self.family = family_of(self.domain, horizontal_ray())
        self.grid = exterior_grid()
        self.u_ext = random_exterior(self.grid, self.domain)

    def test_zero_data(self):
        """Test para u ≡ 0 y f ≡ 0 → I = 0."""
        zero = FieldSlab(
            grid=self.grid,
            values=np.zeros_like(self.u_ext.values),
            region="exterior",
            points=self.u_ext.points,
        )
        self.assertEqual(compute_I(1, 2, None, zero, self.family), 0j)

    def test_nonzero_on_random_data(self):
        """Test para I ≠ 0 cuando u no se anula en la cáscara."""
        value = compute_I(1, 2, None, self.u_ext, self.family)
        self.assertTrue(np.isfinite(value))
        self.assertGreater(abs(value), 0.0)

    def test_phase_conjugation(self):
        """Test para I con 𝒲 conjugada igual al conjugado de I (u real)."""
        value = compute_I(1, 2, None, self.u_ext, self.family)
        conjugated = compute_I(1, 2, None, self.u_ext, self.family, conjugate=True)
        assert_allclose(conjugated, np.conj(value), rtol=1e-14, atol=0.0)

    def test_shell_locality(self):
        """Test para I sin cambios al perturbar u fuera de |x| < r + δ_j/4."""
        value = compute_I(1, 2, None, self.u_ext, self.family)
        radius = np.linalg.norm(self.u_ext.coordinates(), axis=-1)
        far = radius > self.domain.r + self.family[1].delta / 4.0
        perturbed = FieldSlab(
            grid=self.grid,
            values=self.u_ext.values + 1e3 * far,
            region="exterior",
            points=self.u_ext.points,
        )
        self.assertEqual(compute_I(1, 2, None, perturbed, self.family), value)

    def test_source_term_linear(self):
        """Test para la parte de f lineal en la fuente."""

        def source(t, x):
            return np.exp(-np.sum((x - (-0.34, 0.0)) ** 2, axis=-1) / 0.001)

        def doubled(t, x):
            return 2.0 * source(t, x)

        zero = FieldSlab(
            grid=self.grid,
            values=np.zeros_like(self.u_ext.values),
            region="exterior",
            points=self.u_ext.points,
        )
        single = compute_I(1, 2, source, zero, self.family)
        double = compute_I(1, 2, doubled, zero, self.family)
        self.assertGreater(abs(single), 0.0)
        assert_allclose(double, 2.0 * single, rtol=1e-12)

    def test_coverage_error(self):
        """Test para CoverageError si u_ext no cubre la cáscara."""
        points = self.grid.annulus(0.35, self.domain.r_tilde)
        partial = FieldSlab(
            grid=self.grid,
            values=np.zeros((self.grid.steps + 1, points.size)),
            region="exterior",
            points=points,
        )
        with self.assertRaises(CoverageError):
            compute_I(1, 2, None, partial, self.family)

    def test_missing_levels(self):
        """Test para CoverageError con niveles de tiempo incompletos."""
        truncated = FieldSlab(
            grid=self.grid,
            values=self.u_ext.values[:10],
            region="exterior",
            points=self.u_ext.points,
        )
        with self.assertRaises(CoverageError):
            compute_I(1, 2, None, truncated, self.family)


class ComputeSTest(SimpleTestCase):
    """Tests para la constante S_N^j."""

    def setUp(self):
        self.domain = wide_domain()

    def test_single_ray_real(self):
        """Test para J = 1: término k = j real y no nulo."""
        family = family_of(self.domain, horizontal_ray())
        value = compute_S(1, 2, family, weights_for(1))
        self.assertEqual(value.imag, 0.0)
        self.assertNotEqual(value.real, 0.0)

    def test_disjoint_tubes(self):
        """Test para tubos disjuntos → término exactamente 0."""
        family = family_of(
            self.domain,
            horizontal_ray(),
            horizontal_ray(index=2, height=0.2, delta=0.24),
        )
        terms = s_terms(1, 2, family, weights_for(2))
        self.assertFalse(terms[0].skipped)
        self.assertTrue(terms[1].skipped)
        self.assertEqual(terms[1].value, 0j)
        alone = compute_S(1, 2, family, weights_for(2), J=1)
        self.assertEqual(compute_S(1, 2, family, weights_for(2)), alone)

    def test_overlap_interval(self):
        """Test para el tramo de solapamiento de tubos que se cruzan."""
        family = family_of(self.domain, horizontal_ray(), reverse_ray())
        first, second = family[1], family[2]
        interval = overlap_interval(first, second, 0.075, 0.0625, self.domain)
        self.assertIsNotNone(interval)
        self.assertLess(interval[0], 0.25)
        self.assertGreater(interval[1], 0.25)
        self.assertEqual(overlap_map(family, 2), [(1, 2)])

    def test_unresolvable_phase(self):
        """Test para ResolutionError con una fase imposible de resolver."""
        family = family_of(self.domain, horizontal_ray(), reverse_ray())
        probe = build_probe(family[1], 2, self.domain)
        quadrature = TubeQuadrature(probe, family[2], math.exp(12))
        with self.assertRaises(ResolutionError):
            quadrature.integrate()


class ExtractionTableTest(SimpleTestCase):
    """Tests para la tabla de estimaciones y su CSV."""

    def result(self, j, N, I):
        return ExtractionResult(
            j=j, N=N, I=I, S=0.5 + 0.1j, c_N=0.1, b_j=0.5, C_chi=0.2, J=2
        )

    def test_estimate(self):
        """Test para la estimación Re(c_N⁻¹I − S)/(b_j C_χ)."""
        result = self.result(1, 2, 0.15 + 0.02j)
        assert_allclose(result.raw, 1.0 + 0.1j)
        assert_allclose(result.estimate, 10.0)
        assert_allclose(result.imag, 1.0)
        self.assertIsNone(result.rel_error)

    def test_trend_and_csv(self):
        """Test para la tendencia entre N y la lectura del CSV."""
        results = [self.result(1, 2, 0.15), self.result(1, 3, 0.16)]
        results[1].oracle_value = 12.0
        table = extract_ray_integrals(results)
        trend = table.trend(1)
        self.assertIsNone(trend[0][2])
        assert_allclose(trend[1][2], 1.0)
        self.assertEqual(table.final(1).N, 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = table.write_csv(Path(tmp) / "extraction.csv", "abc")
            rows = read_extraction_csv(path)
        self.assertEqual([row["N"] for row in rows], [2, 3])
        assert_allclose(rows[1]["estimate"], results[1].estimate)
        assert_allclose(rows[1]["oracle_value"], 12.0)

    def test_single_N_rejected(self):
        """Test para ValueError con un solo N por rayo."""
        with self.assertRaises(ValueError):
            extract_ray_integrals([self.result(1, 2, 0.1)])


class OracleTest(SimpleTestCase):
    """Tests para el modo oráculo y la descomposición en serie."""

    def setUp(self):
        self.domain = wide_domain(T=1.6)
        self.family = family_of(self.domain, horizontal_ray(t0=0.5))
        self.V = PotentialSpec(
            bumps=(Bump(center=(0.8, 0.0, 0.0), radii=(0.3, 0.2), amplitude=2.0),)
        )

    def test_oracle_estimate(self):
        """Test para el error del oráculo ≤ 10% en N = 4 y menor que en N = 3."""
        weights = weights_for(1, L=4)
        expected = ray_integral_oracle(self.V, self.family[1])
        self.assertGreater(expected, 0.0)
        errors = [
            abs(oracle_extract(1, N, self.family, weights, self.V).estimate - expected)
            / expected
            for N in (3, 4)
        ]
        self.assertLess(errors[1], 0.1)
        self.assertLess(errors[1], errors[0])

    def test_leading_packet_identity(self):
        """Test para V ≡ 0 y K = 0 → c_N⁻¹I − S = 0 en modo oráculo."""
        result = oracle_extract(
            1, 2, self.family, weights_for(1), PotentialSpec(), K=0
        )
        assert_allclose(result.raw, 0.0, atol=1e-12 * abs(result.S))

    def test_packet_corrections(self):
        """Test para las amplitudes v¹, v² en I y su ausencia en S."""
        weights = weights_for(1)
        leading = oracle_extract(1, 2, self.family, weights, self.V, K=0)
        full = oracle_extract(1, 2, self.family, weights, self.V, K=2)
        self.assertEqual(full.S, leading.S)
        self.assertNotEqual(full.I, leading.I)
        self.assertEqual(full.diagnostics["K"], 2)

    def test_single_ray_k_part(self):
        """Test para J = 1 → parte K idénticamente nula."""
        report = lemma_diagnostics(1, 2, self.family, weights_for(1), self.V)
        self.assertEqual(report.k_residual, 0j)
        self.assertEqual(report.k_limit, 0j)
        self.assertNotEqual(report.main, 0j)
        self.assertEqual(len(report.terms), 2)

    def test_trend_checks(self):
        """Test para las comprobaciones de tendencia de los residuos."""
        reports = [
            lemma_diagnostics(1, N, self.family, weights_for(1, L=3), self.V)
            for N in (2, 3)
        ]
        checks = lemma_trend(reports)
        self.assertEqual({check.part for check in checks}, {"j", "k"})
        k_check = [check for check in checks if check.part == "k"][0]
        self.assertIsNone(k_check.ratio)
        self.assertTrue(k_check.passed)
        assert_allclose(bound_ratio(3, 4), 4**7 * math.exp(-4) / (3**7 * math.exp(-3)))


class DensityTest(SimpleTestCase):
    """Tests para h_j y su proxy."""

    def setUp(self):
        domain = wide_domain()
        self.family = family_of(
            domain,
            horizontal_ray(),
            horizontal_ray(index=2, height=0.01, delta=0.29),
            reverse_ray(index=3),
        )

    def test_density_index(self):
        """Test para h_j con un rayo casi coincidente."""
        self.assertEqual(density_index(self.family, 1, 2), 2)
        self.assertIsNone(density_index(self.family, 3, 2))

    def test_density_proxy(self):
        """Test para el proxy min-max con direcciones iguales."""
        expected = 0.01 * math.sqrt(2) / 0.59
        assert_allclose(density_proxy(self.family, 1, 2), expected)
