import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from core.exceptions import ResolutionError
from geometry.domain import DomainConfig
from geometry.rays import RayDescriptor, enumerate_rays
from optics.frames import from_local, to_local
from optics.packets import (
    amplitude0,
    amplitude_norms,
    eval_phase,
    integrate_from_hyperplane,
    packet_envelope,
    packet_eval,
    remainder_identity_defect,
    remainder_norm,
    solve_transport,
    transport_residual,
)
from optics.probes import build_probe, probe_eval
from solver.potential import Bump, PotentialSpec


def demo_domain():
    return DomainConfig(n=2, r=1.0, r_tilde=1.3, T=2.5)


def first_ray(domain):
    return enumerate_rays(domain, 1, (16, 3))[1]


def wide_ray(delta=3.0):
    """Rayo horizontal con δ grande; solo para pruebas de escalas."""
    return RayDescriptor(
        index=1,
        t0=1.0,
        p_entry=(-1.0, 0.0),
        p_exit=(1.0, 0.0),
        xi=(1.0, 0.0),
        s_hat=-0.5,
        anchor_x=(-1.5, 0.0),
        delta=delta,
    )


def bump_on_ray(ray):
    t, x = ray.point(0.5 * ray.chord_length)
    return PotentialSpec(
        bumps=(Bump(center=(float(t), *x.tolist()), radii=(0.4, 0.3), amplitude=2.0),)
    )


def local_points(ray, count, half_s, half_w, half_y, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-half_s, half_s, count)
    w = rng.uniform(-half_w, half_w, count)
    y = rng.uniform(-half_y, half_y, (count, ray.n - 1))
    return from_local(ray, s, w, y)


class PhaseTest(SimpleTestCase):
    """Tests para la fase e^{iτ(−t + ξ·x)}."""

    def setUp(self):
        self.ray = first_ray(demo_domain())

    def test_unit_on_characteristic(self):
        """Test para fase 1 cuando t = ξ·x."""
        x = np.random.default_rng(1).uniform(-1.0, 1.0, (20, 2))
        t = x @ self.ray.xi
        assert_allclose(eval_phase(self.ray, math.e**3, t, x), 1.0, atol=1e-14)

    def test_full_period(self):
        """Test para −t + ξ·x = 2π/τ."""
        tau = math.e**2
        x = self.ray.anchor_x
        t = x @ self.ray.xi - 2.0 * math.pi / tau
        value = eval_phase(self.ray, tau, t, x)
        self.assertAlmostEqual(value.real, 1.0, places=12)
        self.assertAlmostEqual(value.imag, 0.0, places=12)

    def test_probe_phase_is_conjugate(self):
        """Test para 𝒲 con la fase conjugada de 𝒰."""
        probe = build_probe(self.ray, 2, demo_domain())
        t, x = local_points(self.ray, 30, 0.2, 0.01, 0.01)
        expected = np.conj(eval_phase(self.ray, probe.tau, t, x))
        assert_allclose(probe.phase(t, x), expected, rtol=1e-13)


class LeadingAmplitudeTest(SimpleTestCase):
    """Tests para la amplitud principal v^{(0)}."""

    def setUp(self):
        self.domain = demo_domain()
        self.ray = first_ray(self.domain)
        self.tau = math.e**3
        self.scale = 3.0 / self.ray.delta

    def test_value_at_anchor(self):
        """Test para v^{(0)}(q_j) = λ^{n/2}."""
        value = amplitude0(self.ray, self.tau, self.ray.anchor_t, self.ray.anchor_x)
        self.assertAlmostEqual(float(value) / self.scale, 1.0, places=12)

    def test_transport_residual(self):
        """Test para ∂_t v⁰ + ξ·∇v⁰ ≈ 0 dentro del tubo."""
        half = self.ray.delta / (2.0 * math.log(self.tau))
        t, x = local_points(self.ray, 200, 0.5, half / 2.0, half)
        residual = transport_residual(self.ray, self.tau, t, x)
        self.assertLess(np.abs(residual).max(), 1e-10)

    def test_support_in_tube(self):
        """Test para v⁰ = 0 si |(x − x_j)·e| ≥ δ/(2 log τ)."""
        for tau in (math.e**2, math.e**3, math.e**4):
            radius = self.ray.delta / (2.0 * math.log(tau))
            rng = np.random.default_rng(2)
            s = rng.uniform(-0.5, 0.5, 50)
            w = rng.uniform(-radius, radius, 50)
            y = radius * rng.uniform(1.0, 2.0, (50, 1)) * rng.choice([-1, 1], (50, 1))
            t, x = from_local(self.ray, s, w, y)
            self.assertTrue(np.all(amplitude0(self.ray, tau, t, x) == 0.0))

    def test_gradient_matches_differences(self):
        """Test para el gradiente analítico de v⁰ contra diferencias centradas."""
        z = 0.15 / (2.0 * self.scale)
        t, x = from_local(self.ray, 0.1, z, np.array([0.05 / self.scale]))
        grad = amplitude0(self.ray, self.tau, t, x, d=1)
        h = 1e-7
        numeric = np.zeros(3)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            plus = amplitude0(self.ray, self.tau, t + step[0], x + step[1:])
            minus = amplitude0(self.ray, self.tau, t - step[0], x - step[1:])
            numeric[axis] = (plus - minus) / (2.0 * h)
        assert_allclose(grad, numeric, rtol=1e-5, atol=1e-6 * np.abs(grad).max())

    def test_tau_below_e(self):
        """Test para τ < e."""
        with self.assertRaises(ValueError):
            amplitude0(self.ray, 2.0, self.ray.anchor_t, self.ray.anchor_x)


class TransportTest(SimpleTestCase):
    """Tests para las ecuaciones de transporte en la malla local."""

    def setUp(self):
        self.domain = demo_domain()
        self.ray = first_ray(self.domain)
        self.tau = math.e**3

    def solve(self, tau=None, K=2, V=None, cells=12, ray=None, **kwargs):
        return solve_transport(
            ray or self.ray,
            tau or self.tau,
            K,
            V,
            horizon=self.domain.T,
            cells=cells,
            s_step=0.02,
            **kwargs,
        )

    def test_initial_hyperplane(self):
        """Test para v^{(k)} = 0 en s = 0, con y sin potencial."""
        for V in (None, bump_on_ray(self.ray)):
            stack = self.solve(V=V)
            zero = stack.grid.s_zero_index
            self.assertIsNotNone(zero)
            for k in (1, 2):
                self.assertTrue(np.all(stack.amps[k][zero] == 0.0))

    def test_plateau_without_potential(self):
        """Test para v¹ = 0 donde todos los χ(λy) están en la meseta."""
        stack = self.solve(K=1)
        y = stack.grid.y[0]
        inside = np.abs(stack.scale * y) < stack.profile.plateau
        self.assertTrue(inside.any())
        self.assertTrue(np.all(stack.amps[1][:, :, inside] == 0.0))

    def test_support_shrinks(self):
        """Test para el soporte de v^{(k)} en el tubo δ/(2 log τ)."""
        for tau in (math.e**2, math.e**3, math.e**4):
            for V in (None, bump_on_ray(self.ray)):
                stack = self.solve(tau=tau, V=V)
                for amp in stack.amps:
                    radius = stack.grid.tube_radius(amp)
                    self.assertLessEqual(radius, stack.tube_radius)

    def test_norm_growth(self):
        """Test para ‖v^{(k)}‖ con crecimiento ≤ (log τ)^{2k}."""
        low = amplitude_norms(self.solve(tau=math.e**3))
        high = amplitude_norms(self.solve(tau=math.e**4))
        for k in (1, 2):
            self.assertGreater(low[k], 0.0)
            self.assertLessEqual(high[k] / low[k], (4.0 / 3.0) ** (2 * k) * 1.5)

    def test_packet_without_corrections(self):
        """Test para 𝒰 = e^{iτφ}v⁰ con K = 0."""
        stack = self.solve(K=0)
        half = stack.tube_radius
        t, x = local_points(self.ray, 100, 0.5, half / 2.0, half)
        expected = eval_phase(self.ray, self.tau, t, x) * amplitude0(
            self.ray, self.tau, t, x
        )
        assert_allclose(packet_eval(stack, t, x), expected, rtol=1e-14)

    def test_packet_outside_tube(self):
        """Test para 𝒰 = 0 lejos del rayo."""
        stack = self.solve()
        radius = stack.tube_radius
        t, x = from_local(
            self.ray,
            np.linspace(-0.3, 0.3, 20),
            np.zeros(20),
            np.full((20, 1), 1.5 * radius),
        )
        self.assertTrue(np.all(packet_eval(stack, t, x) == 0.0))

    def test_packet_triangle_bound(self):
        """Test para |𝒰| ≤ Σ τ^{−k}|v^{(k)}| en los nodos."""
        stack = self.solve()
        bound = sum(np.abs(amp) / self.tau**k for k, amp in enumerate(stack.amps))
        self.assertTrue(np.all(np.abs(stack.values()) <= bound * (1 + 1e-12)))

    def test_packet_envelope(self):
        """Test para 𝒰 = e^{iτφ}·envolvente y la envolvente en los nodos."""
        stack = self.solve(V=bump_on_ray(self.ray))
        t, x = stack.grid.spacetime()
        inner = (slice(4, -4),) * t.ndim
        t, x = t[inner], x[inner]
        envelope = packet_envelope(stack, t, x)
        scale = np.abs(envelope).max()
        assert_allclose(envelope, stack.envelope()[inner], atol=1e-9 * scale)
        assert_allclose(
            packet_eval(stack, t, x),
            eval_phase(self.ray, self.tau, t, x) * envelope,
            rtol=1e-14,
        )

    def test_remainder_decay(self):
        """Test para ‖(□+V)𝒰‖·τ/(log τ)⁶ acotado en un factor 3."""
        scaled = []
        for k in (3, 4, 5):
            tau = math.exp(k)
            stack = solve_transport(
                wide_ray(delta=48.0),
                tau,
                2,
                s_range=(-0.5, 0.5),
                s_step=0.02,
                cells=24,
            )
            scaled.append(remainder_norm(stack) * tau / k**6)
        self.assertLessEqual(max(scaled) / min(scaled), 3.0)

    def test_remainder_first_order(self):
        """Test para la identidad del resto con una pila de orden K = 1."""
        V = bump_on_ray(self.ray)
        stack = self.solve(K=1, V=V)
        self.assertLess(remainder_identity_defect(stack, V, self.domain), 1e-8)
        self.assertGreater(remainder_norm(stack, V, self.domain), 0.0)

    def test_remainder_refinement(self):
        """Test para el cambio < 5% del resto al duplicar la malla local."""
        norms = [
            remainder_norm(
                solve_transport(
                    wide_ray(), math.e**3, 2, s_range=(-0.25, 0.25), cells=cells
                )
            )
            for cells in (16, 32)
        ]
        self.assertLess(abs(norms[1] - norms[0]) / norms[1], 0.05)

    def test_remainder_with_potential(self):
        """Test para el resto con V ≠ 0."""
        V = bump_on_ray(self.ray)
        stack = self.solve(V=V)
        norm = remainder_norm(stack, V, self.domain)
        self.assertTrue(math.isfinite(norm))
        self.assertGreater(norm, 0.0)
        self.assertLess(remainder_identity_defect(stack, V, self.domain), 1e-8)

    def test_identity_without_potential(self):
        """Test para (□+V)𝒰 = τ^{−K}e^{iτφ}g^{(K)} con V ≡ 0."""
        stack = self.solve()
        self.assertLess(remainder_identity_defect(stack, None, self.domain), 1e-8)

    def test_resolution_error(self):
        """Test para un tubo con menos de 8 celdas."""
        with self.assertRaises(ResolutionError):
            self.solve(cells=6)

    def test_invalid_order(self):
        """Test para K fuera de {0, 1, 2}."""
        with self.assertRaises(ValueError):
            self.solve(K=3)

    def test_hyperplane_integration(self):
        """Test para ∫₀^s exacto en cuadráticas a ambos lados de s = 0."""
        s = 0.05 * np.arange(-7, 12)
        values = (3.0 * s**2 - 1.0).astype(complex)
        result = integrate_from_hyperplane(values, 0.05, 7)
        assert_allclose(result.real, s**3 - s, atol=1e-12)


class LocalFrameTest(SimpleTestCase):
    """Tests para las coordenadas (s, w, y)."""

    def test_round_trip(self):
        """Test para from_local ∘ to_local = identidad."""
        ray = first_ray(demo_domain())
        t, x = local_points(ray, 40, 0.5, 0.1, 0.1)
        s, w, y = to_local(ray, t, x)
        t2, x2 = from_local(ray, s, w, y)
        assert_allclose(t2, t, atol=1e-14)
        assert_allclose(x2, x, atol=1e-14)


class ProbeTest(SimpleTestCase):
    """Tests para las sondas 𝒲_{j,τ_N}."""

    def setUp(self):
        self.domain = demo_domain()
        self.ray = first_ray(self.domain)

    def test_value_at_anchor(self):
        """Test para w_{j,N}(q_j) = (N/δ)^{n/2}."""
        probe = build_probe(self.ray, 3, self.domain)
        value = probe.w(self.ray.anchor_t, self.ray.anchor_x)
        self.assertAlmostEqual(float(value) * self.ray.delta / 3.0, 1.0, places=12)

    def test_matches_leading_amplitude(self):
        """Test para w_{j,N} = v⁰_{j,τ_N} con τ_N = e^N."""
        for N in (2, 3):
            half = self.ray.delta / (2.0 * N)
            t, x = local_points(self.ray, 60, 0.4, half / 2.0, half)
            _, w, _ = probe_eval(self.ray, N, None, t, x, self.domain)
            expected = amplitude0(self.ray, math.exp(N), t, x)
            assert_allclose(w, expected, rtol=1e-10, atol=1e-12)

    def test_w_tilde_outside_tube(self):
        """Test para w̃ = 0 fuera del tubo."""
        probe = build_probe(self.ray, 2, self.domain)
        radius = probe.tube_radius
        s = np.linspace(-0.3, 0.3, 15)
        t, x = from_local(self.ray, s, np.zeros(15), np.full((15, 1), radius))
        self.assertTrue(np.all(probe.w_tilde(bump_on_ray(self.ray), t, x) == 0.0))

    def test_invalid_index(self):
        """Test para N < 1."""
        with self.assertRaises(ValueError):
            build_probe(self.ray, 0, self.domain)
