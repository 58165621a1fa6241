import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from core.exceptions import InsufficientRays, ResolutionError, SupportViolation
from geometry.cutoff import build_cutoff
from geometry.domain import DomainConfig
from geometry.rays import RayDescriptor, RayFamily, read_manifest
from optics.packets import solve_transport
from solver.fdtd import SourceSampler
from solver.grid import GridSpec
from solver.potential import Bump, PotentialSpec
from source.assembly import (
    assemble_universal,
    grid_from_header,
    packet_source,
    packet_source_at,
    packet_source_norm,
    packet_stack,
    ray_tail_norm,
    read_assembly,
    single_packet,
    write_assembly,
    zeta_quarter,
)
from source.weights import (
    ZETA_3,
    WeightScheme,
    build_weights,
    frequency_weights,
    kappa_formula,
    measure_kappa,
)


def wide_domain():
    """Anillo exterior ancho para que los tubos queden bien muestreados."""
    return DomainConfig(n=2, r=0.3, r_tilde=1.0, T=0.7)


def left_ray():
    return RayDescriptor(
        index=1,
        t0=0.7,
        p_entry=(-0.3, 0.0),
        p_exit=(0.3, 0.0),
        xi=(1.0, 0.0),
        s_hat=-0.35,
        anchor_x=(-0.65, 0.0),
        delta=0.3,
    )


def right_ray():
    return RayDescriptor(
        index=2,
        t0=0.6,
        p_entry=(0.3, 0.0),
        p_exit=(-0.3, 0.0),
        xi=(-1.0, 0.0),
        s_hat=-0.3,
        anchor_x=(0.6, 0.0),
        delta=0.25,
    )


def two_ray_family(domain):
    return RayFamily(
        domain=domain,
        rays=[left_ray(), right_ray()],
        boundary_samples=np.empty((0, 2)),
        time_samples=np.empty(0),
    )


def source_grid():
    return GridSpec(n=2, dx=2.2 / 150, dt=0.7 / 75, halfwidth=1.1, steps=75, cells=150)


class WeightSchemeTest(SimpleTestCase):
    """Tests para los pesos de la fuente universal."""

    def setUp(self):
        self.domain = wide_domain()
        self.family = two_ray_family(self.domain)

    def test_frequency_weights(self):
        """Test para τ_k = e^k y c_kτ_k = k⁻³."""
        taus, c = frequency_weights(20)
        assert_allclose(taus, np.exp(np.arange(1, 21)), rtol=1e-14)
        products = np.array(c) * np.array(taus)
        assert_allclose(products, np.arange(1, 21, dtype=float) ** -3, rtol=1e-14)
        self.assertLessEqual(float(np.sum(products)), ZETA_3)

    def test_unit_mode(self):
        """Test para el modo c_k = k⁻³ fuera de la construcción teórica."""
        with self.assertLogs("source.weights", level="WARNING"):
            _, c = frequency_weights(3, mode="unit")
        assert_allclose(c, [1.0, 1.0 / 8.0, 1.0 / 27.0])
        with self.assertRaises(ValueError):
            frequency_weights(3, mode="otro")

    def test_ray_sum(self):
        """Test para Σ b_jκ_j = 1 − 2^{−J} ≤ 1."""
        weights = build_weights(self.family, 2, 2, self.domain, kappa_mode="formula")
        self.assertAlmostEqual(weights.ray_sum(), 0.75, places=14)
        self.assertEqual(weights.kappa[0], kappa_formula(self.family[1]))
        self.assertAlmostEqual(weights.kappa[0], 0.3**-9, delta=1e-9 * 0.3**-9)

    def test_positive_weights(self):
        """Test para rechazar pesos no positivos."""
        with self.assertRaises(ValueError):
            WeightScheme(taus=(math.e,), c=(-1.0,), kappa=(1.0,), b=(0.5,))

    def test_header_round_trip(self):
        """Test para reconstruir los pesos desde la cabecera del manifiesto."""
        weights = build_weights(self.family, 2, 3, self.domain, kappa_mode="formula")
        header = {key: str(value) for key, value in weights.as_header().items()}
        self.assertEqual(WeightScheme.from_header(header), weights)

    def test_measure_kappa(self):
        """Test para las seis constantes empíricas y κ_j = max·δ⁻²."""
        ray = self.family[1]
        measurement = measure_kappa(ray, self.domain, (math.e, math.e**2), cells=8)
        self.assertEqual(len(measurement.constants), 6)
        values = list(measurement.constants.values())
        self.assertTrue(all(value > 0.0 and math.isfinite(value) for value in values))
        self.assertAlmostEqual(
            measurement.kappa, max(values) / ray.delta**2, delta=1e-12
        )


class PacketSourceTest(SimpleTestCase):
    """Tests para las fuentes por paquete f_{j,τ}."""

    def setUp(self):
        self.ray = left_ray()
        self.grid = source_grid()
        self.tau = math.e**2
        self.stack = packet_stack(self.ray, self.tau, cells=12)

    def test_zero_before_ramp(self):
        """Test para f = 0 con t < s_j − δ/(4√n)."""
        quarter = zeta_quarter(self.ray)
        t = self.ray.anchor_t - quarter - np.linspace(1e-6, 0.1, 7)
        x = np.broadcast_to(self.ray.anchor_x, (7, 2))
        self.assertTrue(np.all(packet_source_at(self.stack, t, x) == 0.0))

    def test_zero_far_from_anchor(self):
        """Test para f = 0 con |x − x_j| ≥ δ/2."""
        angles = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
        offsets = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        x = self.ray.anchor_x + 0.5 * self.ray.delta * offsets
        t = np.full(16, self.ray.anchor_t)
        self.assertTrue(np.all(packet_source_at(self.stack, t, x) == 0.0))

    def test_support_in_ball(self):
        """Test para el soporte dentro de B_δ(q_j) sobre la malla del solver."""
        block = packet_source(self.ray, self.tau, self.stack, self.grid)
        self.assertGreater(block.maximum(), 0.0)
        t = self.grid.half_times()[block.levels]
        x = self.grid.coordinates[block.window]
        spatial = np.sum((x - self.ray.anchor_x) ** 2, axis=-1)
        distance_sq = (t - self.ray.anchor_t)[:, None, None] ** 2 + spatial[None]
        self.assertTrue(np.all(block.values[distance_sq >= self.ray.delta**2] == 0.0))

    def test_support_violation(self):
        """Test para SupportViolation con un perfil más ancho que la bola."""
        profile = replace(build_cutoff(2), plateau=1.0, support=2.0)
        stack = packet_stack(self.ray, math.e, cells=8, profile=profile)
        with self.assertRaises(SupportViolation):
            packet_source(self.ray, math.e, stack, self.grid)

    def test_rejects_potential_stack(self):
        """Test para exigir la pila construida con V ≡ 0."""
        V = PotentialSpec(
            bumps=(Bump(center=(0.35, 0.0, 0.0), radii=(0.2, 0.2), amplitude=1.0),)
        )
        quarter = zeta_quarter(self.ray)
        stack = solve_transport(
            self.ray, math.e, 1, V, s_range=(-quarter, quarter), cells=8
        )
        with self.assertRaises(ValueError):
            packet_source_at(stack, [self.ray.anchor_t], [self.ray.anchor_x])

    def test_norm_growth(self):
        """Test para ‖f_{j,e⁴}‖ / ‖f_{j,e³}‖ ≤ e·1.5."""
        low = packet_source_norm(self.ray, math.e**3, cells=12)
        high = packet_source_norm(self.ray, math.e**4, cells=12)
        self.assertGreater(high, low)
        self.assertLessEqual(high / low, math.e * 1.5)


class UniversalSourceTest(SimpleTestCase):
    """Tests para el ensamblado de la fuente universal truncada."""

    def setUp(self):
        self.domain = wide_domain()
        self.family = two_ray_family(self.domain)
        self.grid = source_grid()
        self.weights = build_weights(
            self.family, 2, 2, self.domain, kappa_mode="formula"
        )

    def assemble(self, J, L, **kwargs):
        return assemble_universal(
            self.family, J, L, self.grid, weights=self.weights, cells=12, **kwargs
        )

    def test_single_term(self):
        """Test para J = L = 1: ‖f‖ = b_1c_1‖f_{1,e}‖."""
        assembly = self.assemble(1, 1)
        expected = self.weights.coefficient(1, 1) * assembly.blocks[0].norm(self.grid)
        self.assertGreater(expected, 0.0)
        assert_allclose(assembly.l2_norm(), expected, rtol=1e-12)
        sampler = SourceSampler(assembly, self.grid)
        assert_allclose(sampler.l2_norm(), expected, rtol=1e-12)
        packet = single_packet(self.family[1], math.e, self.grid, cells=12)
        assert_allclose(packet.levels, assembly.field.levels)
        assert_allclose(
            self.weights.coefficient(1, 1) * packet.values,
            assembly.field.values,
            rtol=1e-12,
        )

    def test_zero_in_omega(self):
        """Test para f = 0 exacto en los nodos con |x| ≤ r."""
        assembly = self.assemble(2, 2)
        inside = self.grid.radius <= self.domain.r
        self.assertTrue(np.all(assembly.field.values[:, inside] == 0.0))
        self.assertEqual(assembly.interior_maximum(self.domain), 0.0)

    def test_linearity_in_rays(self):
        """Test para f(J) − f(J−1) = b_J Σ_k c_k f_{J,τ_k}."""
        full = self.assemble(2, 2)
        partial = self.assemble(1, 2)
        levels = full.field.levels
        difference = np.zeros_like(full.field.values)
        expected = np.zeros_like(full.field.values)
        for i, level in enumerate(levels):
            row = partial.field.row(level)
            difference[i] = full.field.values[i] - (0.0 if row is None else row)
        position = {int(level): i for i, level in enumerate(levels)}
        for k, block in enumerate(full.blocks[2:], start=1):
            rows = [position[int(level)] for level in block.levels]
            expected[(rows,) + block.window] += (
                self.weights.coefficient(2, k) * block.values
            )
        scale = np.abs(expected).max()
        self.assertGreater(scale, 0.0)
        self.assertLess(np.abs(difference - expected).max(), 1e-12 * scale)

    def test_resolution_error(self):
        """Test para ResolutionError si dx no resuelve τ_L = e⁴."""
        with self.assertRaises(ResolutionError):
            assemble_universal(self.family, 1, 4, self.grid, kappa_mode="formula")

    def test_insufficient_rays(self):
        """Test para InsufficientRays con J mayor que la familia."""
        with self.assertRaises(InsufficientRays):
            self.assemble(3, 1)

    def test_tail_bound(self):
        """Test para la cola ‖c_L f_{j,τ_L}‖ ≤ κ_4 L⁻³."""
        full = self.assemble(1, 2)
        shorter = self.assemble(1, 1)
        norms = [block.norm(self.grid) for block in full.blocks]
        kappa4 = max(norm / tau for norm, tau in zip(norms, self.weights.taus))
        tail = ray_tail_norm(full, 1)
        self.assertLessEqual(tail, kappa4 * 2.0**-3 * (1.0 + 1e-12))

        rows = np.array([shorter.field.row(level) for level in full.field.levels])
        gap = full.field.values - rows
        measured = math.sqrt(
            float(np.sum(np.abs(gap) ** 2)) * self.grid.cell_volume * self.grid.dt
        )
        assert_allclose(measured / self.weights.b[0], tail, rtol=1e-10)

    def test_workers_bitwise(self):
        """Test para el mismo resultado bit a bit con varios hilos."""
        serial = self.assemble(2, 2)
        threaded = self.assemble(2, 2, workers=3)
        self.assertTrue(np.array_equal(serial.field.values, threaded.field.values))
        self.assertTrue(np.array_equal(serial.field.levels, threaded.field.levels))

    def test_persistence_round_trip(self):
        """Test para escribir y releer manifiesto y campo de la fuente."""
        assembly = self.assemble(2, 1)
        with tempfile.TemporaryDirectory() as tmp:
            manifest, _ = write_assembly(assembly, tmp, config_hash="abc123")
            _, header = read_manifest(manifest)
            loaded = read_assembly(Path(tmp))
        self.assertEqual(header["config_hash"], "abc123")
        self.assertEqual(grid_from_header(header), self.grid)
        self.assertEqual(loaded.truncation, (2, 1))
        self.assertEqual(loaded.weights, assembly.weights)
        assert_allclose(loaded.field.values, assembly.field.values, rtol=0, atol=0)
        assert_allclose(loaded.field.levels, assembly.field.levels)
