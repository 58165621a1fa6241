import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from core.exceptions import GeometryError, StabilityError
from geometry.domain import DomainConfig
from solver.fdtd import (
    energy_check,
    energy_drift,
    laplacian,
    solve_forward,
    time_reversal_defect,
)
from solver.grid import FieldSlab, GridSpec
from solver.manufactured import compact_pulse, manufactured_errors
from solver.potential import Bump, PotentialSpec


def small_domain(T=0.8):
    return DomainConfig(n=2, r=0.5, r_tilde=0.7, T=T)


class GridSpecTest(SimpleTestCase):
    """Tests para la malla del solver."""

    def setUp(self):
        self.domain = DomainConfig(n=2, r=1.0, r_tilde=1.3, T=2.5)

    def test_from_domain(self):
        """Test para la malla construida desde τ y puntos por longitud de onda."""
        grid = GridSpec.from_domain(self.domain, tau=math.e**3)
        self.assertLessEqual(grid.cfl, 0.9 + 1e-12)
        self.assertAlmostEqual(grid.T, 2.5, places=12)
        self.assertAlmostEqual(grid.halfwidth, 3.8)
        self.assertTrue(grid.resolves(math.e**3, 10))
        self.assertFalse(grid.resolves(math.e**4, 10))
        grid.validate(self.domain)

    def test_cfl_violation(self):
        """Test para StabilityError con CFL > 0.9."""
        grid = GridSpec.from_domain(self.domain, tau=math.e**2)
        unstable = replace(grid, dt=grid.dx / math.sqrt(2.0))
        with self.assertRaises(StabilityError):
            unstable.validate(self.domain)

    def test_box_too_small(self):
        """Test para una caja que no contiene Ω̃ con margen."""
        grid = GridSpec(n=2, dx=0.1, dt=0.05, halfwidth=1.35, steps=50, cells=27)
        with self.assertRaises(GeometryError):
            grid.validate(self.domain)

    def test_refined(self):
        """Test para el refinamiento conserva caja, T y CFL."""
        grid = GridSpec.from_domain(self.domain, tau=math.e**2)
        fine = grid.refined()
        self.assertAlmostEqual(fine.T, grid.T, places=12)
        self.assertAlmostEqual(fine.cfl, grid.cfl, places=12)
        assert_allclose(fine.axis[::2], grid.axis, atol=1e-12)

    def test_slab_round_trip(self):
        """Test para escribir y leer un corte exterior WAVF."""
        grid = GridSpec(n=2, dx=0.1, dt=0.05, halfwidth=1.0, steps=3, cells=20)
        points = grid.annulus(0.5, 0.7)
        values = np.arange(4 * points.size).reshape(4, -1) * (1.0 + 2.0j)
        slab = FieldSlab(grid=grid, values=values, region="exterior", points=points)
        with tempfile.TemporaryDirectory() as tmp:
            path = slab.write(Path(tmp) / "u.wavf", {"config_hash": "abc"})
            loaded = FieldSlab.read(path)
        assert_allclose(loaded.values, values)
        self.assertEqual(loaded.region, "exterior")
        self.assertEqual(loaded.grid, grid)
        self.assertEqual(loaded.metadata["config_hash"], "abc")
        assert_allclose(loaded.points, points)


class LaplacianTest(SimpleTestCase):
    """Tests para el laplaciano discreto."""

    def setUp(self):
        self.grid = GridSpec(n=2, dx=0.1, dt=0.05, halfwidth=1.0, steps=1, cells=20)
        self.x = self.grid.coordinates

    def test_second_order_quadratic(self):
        """Test para Δ(x² + y²) = 4 en los nodos interiores."""
        u = np.sum(self.x**2, axis=-1)
        result = laplacian(u, self.grid.dx)
        assert_allclose(result[1:-1, 1:-1], 4.0, atol=1e-10)
        self.assertTrue(np.all(result[0] == 0.0))

    def test_fourth_order_quartic(self):
        """Test para Δx⁴ = 12x² con el esquema de cuarto orden."""
        u = self.x[..., 0] ** 4
        result = laplacian(u, self.grid.dx, order=4)
        expected = 12.0 * self.x[2:-2, 2:-2, 0] ** 2
        assert_allclose(result[2:-2, 2:-2], expected, atol=1e-9)


class ForwardSolverTest(SimpleTestCase):
    """Tests para el solver leapfrog."""

    def setUp(self):
        self.domain = small_domain()
        self.grid = GridSpec.from_domain(self.domain, dx=0.03)
        self.pulse = compact_pulse((0.6, 0.0))

    def test_zero_source(self):
        """Test para f ≡ 0 → u ≡ 0."""
        result = solve_forward(None, None, self.grid, self.domain)
        self.assertTrue(np.all(result.exterior.values == 0.0))
        self.assertTrue(energy_check(result).trivial)

    def test_stability_error(self):
        """Test para StabilityError con CFL violada."""
        grid = replace(self.grid, dt=self.grid.dx)
        with self.assertRaises(StabilityError):
            solve_forward(None, self.pulse, grid, self.domain)

    def test_first_slices_vanish(self):
        """Test para los dos primeros niveles nulos si f = 0 antes de t₀ > 2dt."""
        self.assertGreater(0.05, 2 * self.grid.dt)
        result = solve_forward(None, self.pulse, self.grid, self.domain, keep_full=True)
        self.assertTrue(np.all(result.full.values[:2] == 0.0))
        self.assertGreater(np.abs(result.full.values[-1]).max(), 0.0)

    def test_causal_cone(self):
        """Test para u ≈ 0 fuera del cono causal del soporte de f."""
        result = solve_forward(None, self.pulse, self.grid, self.domain, keep_full=True)
        values = result.full.values
        peak = np.abs(values).max()
        distance = np.linalg.norm(self.grid.coordinates - (0.6, 0.0), axis=-1) - 0.25
        for m in range(values.shape[0]):
            elapsed = m * self.grid.dt - 0.05
            outside = distance > max(elapsed, 0.0) + 4 * self.grid.dx
            leak = np.abs(values[m][outside]).max() if outside.any() else 0.0
            self.assertLess(leak, 1e-10 * peak)

    def test_linearity(self):
        """Test para la linealidad en la fuente."""
        first = compact_pulse((0.6, 0.0), phase=(9.0, 2.0))
        second = compact_pulse((-0.3, 0.55), t_center=0.3, phase=(-4.0, 7.0))
        V = PotentialSpec(
            bumps=(Bump(center=(0.4, 0.0, 0.1), radii=(0.3, 0.3), amplitude=3.0),)
        )

        def both(t, x):
            return first(t, x) + second(t, x)

        u1 = solve_forward(V, first, self.grid, self.domain).exterior.values
        u2 = solve_forward(V, second, self.grid, self.domain).exterior.values
        u12 = solve_forward(V, both, self.grid, self.domain).exterior.values
        scale = np.abs(u12).max()
        self.assertLess(np.abs(u12 - u1 - u2).max(), 1e-10 * scale)

    def test_enlarged_box(self):
        """Test para u en Ω̃ sin cambios al ampliar la caja."""
        extra = 10
        wide = self.grid.enlarged(extra)
        base = solve_forward(None, self.pulse, self.grid, self.domain, keep_full=True)
        large = solve_forward(None, self.pulse, wide, self.domain, keep_full=True)
        inside = self.grid.radius < self.domain.r_tilde
        core = large.full.values[:, extra:-extra, extra:-extra]
        difference = np.abs(core[:, inside] - base.full.values[:, inside]).max()
        self.assertLess(difference, 1e-12 * np.abs(base.full.values).max())

    def test_time_reversal(self):
        """Test para recuperar u⁰ integrando hacia atrás."""
        V = PotentialSpec(
            bumps=(Bump(center=(0.4, 0.0, 0.1), radii=(0.3, 0.3), amplitude=3.0),)
        )
        defect = time_reversal_defect(V, self.pulse, self.grid, self.domain)
        self.assertLess(defect, 1e-8)

    def test_manufactured_solution(self):
        """Test para el orden 2 con una solución manufacturada."""
        V = PotentialSpec(
            bumps=(Bump(center=(0.3, 0.0, 0.0), radii=(0.3, 0.4), amplitude=1.0),)
        )
        errors, ratio = manufactured_errors(V, small_domain(T=0.6))
        self.assertLess(errors[1], errors[0])
        self.assertGreaterEqual(ratio, 3.5)
        self.assertLessEqual(ratio, 4.5)


class EnergyTest(SimpleTestCase):
    """Tests para el registro y la comprobación de energía."""

    def setUp(self):
        self.domain = small_domain(T=0.5)
        self.grid = GridSpec.from_domain(self.domain, dx=0.05)
        self.pulse = compact_pulse((0.6, 0.0))

    def test_scaling(self):
        """Test para normas proporcionales a la amplitud de f."""

        def scaled(t, x):
            return 10.0 * self.pulse(t, x)

        base = solve_forward(None, self.pulse, self.grid, self.domain)
        large = solve_forward(None, scaled, self.grid, self.domain)
        assert_allclose(large.energy.total, 10.0 * base.energy.total, rtol=1e-10)
        assert_allclose(large.source_norm, 10.0 * base.source_norm, rtol=1e-10)

    def test_constant_across_resolutions(self):
        """Test para C_emp estable entre dos resoluciones."""
        reports = [
            energy_check(solve_forward(None, self.pulse, grid, self.domain))
            for grid in (self.grid, self.grid.refined())
        ]
        self.assertTrue(all(report.constant > 0 for report in reports))
        self.assertFalse(energy_drift(reports))
