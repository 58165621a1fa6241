"""
Fuentes analíticas para comprobar el solver: pulsos de soporte compacto y
una solución manufacturada con potencial.
"""

import math

import numpy as np

from solver.fdtd import solve_forward
from solver.grid import GridSpec


def compact_pulse(center, rho=0.25, t_center=0.15, t_width=0.1, power=12, phase=None):
    """f(t, x) = ψ(t)(1 − |x − c|²/ρ²)₊^p, opcionalmente por e^{i k·x}."""
    center = np.asarray(center, dtype=float)

    def source(t, x):
        radial = np.maximum(1.0 - np.sum((x - center) ** 2, axis=-1) / rho**2, 0.0)
        temporal = max(1.0 - ((t - t_center) / t_width) ** 2, 0.0)
        values = temporal**power * radial**power
        if phase is not None:
            values = values * np.exp(1j * (x @ np.asarray(phase)))
        return values

    return source


def gaussian_solution(V, sigma_sq=0.08):
    """
    u = t⁴ e^{−|x|²/σ²} y la fuente f = (∂_t² − Δ + V)u que la produce.

    u, ∂_t u y ∂_t² u se anulan en t = 0, así que los datos iniciales nulos
    del esquema son exactos.
    """

    def exact(t, x):
        return t**4 * np.exp(-np.sum(x**2, axis=-1) / sigma_sq)

    def source(t, x):
        r2 = np.sum(x**2, axis=-1)
        g = np.exp(-r2 / sigma_sq)
        lap = g * (4.0 * r2 / sigma_sq**2 - 4.0 / sigma_sq)
        potential = V.evaluate(np.full(r2.shape, t), x)
        return 12.0 * t**2 * g - t**4 * lap + potential * t**4 * g

    return exact, source


def manufactured_errors(V, domain, coarse=None):
    """
    Errores L² en t = T sobre una malla y su refinamiento a la mitad.

    Returns:
        Tupla ``(errores, cociente)``; el cociente ≈ 4 para orden 2.
    """
    coarse = coarse or GridSpec(
        n=2, dx=0.05, dt=0.025, halfwidth=1.3, steps=24, cells=52
    )
    exact, source = gaussian_solution(V)
    errors = []
    for grid in (coarse, coarse.refined()):
        result = solve_forward(V, source, grid, domain, keep_full=True)
        error = result.full.values[-1] - exact(grid.T, grid.coordinates)
        errors.append(math.sqrt(np.sum(error**2) * grid.cell_volume))
    return errors, errors[0] / errors[1]
