"""
Solver en diferencias finitas de (∂_t² − Δ + V)u = f con datos iniciales
nulos en una caja de Dirichlet.

Esquema leapfrog

    u^{m+1} = 2u^m − u^{m−1} + dt² (Δ_h u^m − V(t_m) u^m + f^m),

con f^m la media de las muestras en los seminiveles t_{m±1/2} y
u^{−1} = u^0 = 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from core.exceptions import NaNGuard
from solver.grid import FieldSlab

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 100


def laplacian(u, dx, order=2):
    """
    Laplaciano discreto en los nodos interiores; cero en los nodos de borde.

    El de cuarto orden usa el de segundo orden en la primera capa interior.
    """
    result = np.zeros_like(u)
    for axis in range(u.ndim):
        inner = [slice(None)] * u.ndim
        inner[axis] = slice(1, -1)
        second = np.diff(u, n=2, axis=axis)
        result[tuple(inner)] += second
        if order == 4:
            deep = [slice(None)] * u.ndim
            deep[axis] = slice(2, -2)
            result[tuple(deep)] -= np.diff(u, n=4, axis=axis) / 12.0
    result[_boundary_mask(u.shape)] = 0.0
    return result / dx**2


def _boundary_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        edge = [slice(None)] * len(shape)
        edge[axis] = 0
        mask[tuple(edge)] = True
        edge[axis] = -1
        mask[tuple(edge)] = True
    return mask


def gradient_norm_sq(u, dx):
    """Σ |∇u|² dxⁿ con diferencias hacia adelante."""
    total = 0.0
    for axis in range(u.ndim):
        total += float(np.sum(np.abs(np.diff(u, axis=axis)) ** 2))
    return total * dx ** (u.ndim - 2)


class SourceSampler:
    """
    Acceso uniforme a f en los seminiveles t_{m+1/2}.

    Acepta un ``FieldSlab`` de región ``source``, un objeto con atributo
    ``field`` (``SourceAssembly``), una función f(t, x) o ``None``.
    """

    def __init__(self, source, grid):
        self.grid = grid
        self.slab = None
        self.function: Optional[Callable] = None
        if source is None:
            return
        slab = getattr(source, "field", source)
        if isinstance(slab, FieldSlab):
            if slab.region != "source":
                raise ValueError("El corte de fuente debe tener región 'source'.")
            self.slab = slab
        elif callable(source):
            self.function = source
        else:
            raise TypeError(f"Fuente no soportada: {type(source)!r}")

    @property
    def is_zero(self):
        return self.slab is None and self.function is None

    def half(self, m):
        """f(t_{m+1/2}) o ``None`` si es idénticamente nula."""
        if m < 0 or m >= self.grid.steps or self.is_zero:
            return None
        if self.slab is not None:
            return self.slab.row(m)
        t = self.grid.dt * (m + 0.5)
        return np.asarray(self.function(t, self.grid.coordinates))

    def level(self, m):
        before, after = self.half(m - 1), self.half(m)
        if before is None and after is None:
            return None
        if before is None:
            return 0.5 * after
        if after is None:
            return 0.5 * before
        return 0.5 * (before + after)

    def l2_norm(self):
        """‖f‖ en L²((0,T)×caja) con la regla del punto medio en t."""
        total = 0.0
        for m in range(self.grid.steps):
            values = self.half(m)
            if values is not None:
                total += float(np.sum(np.abs(values) ** 2))
        return math.sqrt(total * self.grid.cell_volume * self.grid.dt)

    def is_complex(self):
        if self.slab is not None:
            return np.iscomplexobj(self.slab.values)
        if self.function is not None:
            probe = self.function(self.grid.dt * 0.5, self.grid.coordinates[:1])
            return np.iscomplexobj(probe)
        return False


@dataclass
class EnergyLog:
    """‖∂_t u‖_{L²} y ‖u‖_{H¹} por nivel de tiempo."""

    times: np.ndarray
    kinetic: np.ndarray
    h1: np.ndarray

    @property
    def total(self):
        return self.kinetic + self.h1

    def maximum(self):
        return float(self.total.max()) if self.total.size else 0.0

    def rows(self):
        return [
            {"t": float(t), "kinetic": float(k), "h1": float(h)}
            for t, k, h in zip(self.times, self.kinetic, self.h1)
        ]


@dataclass
class ForwardResult:
    grid: object
    exterior: FieldSlab
    energy: EnergyLog
    source_norm: float
    full: Optional[FieldSlab] = None


def sample_potential(V, t, grid):
    if V is None or V.is_zero:
        return None
    return V.evaluate(np.full(grid.shape, t), grid.coordinates)


def solve_forward(V, f, grid, domain, keep_full=False, record_energy=True):
    """
    Resuelve el problema directo y devuelve u en el anillo r < |x| < r̃.

    Args:
        V: PotentialSpec o ``None``.
        f: fuente (ver ``SourceSampler``).
        grid: GridSpec validada contra ``domain``.
        keep_full: guarda también u en toda la malla (diagnósticos).
        record_energy: calcula el registro de energía por paso.

    Raises:
        StabilityError: si la CFL supera el límite.
        NaNGuard: si aparece un valor no finito.
    """
    grid.validate(domain)
    sampler = SourceSampler(f, grid)
    dtype = np.complex128 if sampler.is_complex() else np.float64
    points = grid.annulus(domain.r, domain.r_tilde)
    boundary = _boundary_mask(grid.shape)
    dt2 = grid.dt**2

    previous = np.zeros(grid.shape, dtype=dtype)
    current = np.zeros(grid.shape, dtype=dtype)
    history = np.zeros((grid.steps + 1, points.size), dtype=dtype)
    full = np.zeros((grid.steps + 1,) + grid.shape, dtype=dtype) if keep_full else None
    times: List[float] = []
    kinetic: List[float] = []
    h1: List[float] = []

    logger.info(
        "Solver: %d pasos, malla %s, %d nodos exteriores",
        grid.steps,
        grid.shape,
        points.size,
    )
    for m in range(grid.steps):
        t = grid.dt * m
        update = laplacian(current, grid.dx, grid.order)
        potential = sample_potential(V, t, grid)
        if potential is not None:
            update -= potential * current
        forcing = sampler.level(m)
        if forcing is not None:
            update += forcing
        following = 2.0 * current - previous + dt2 * update
        following[boundary] = 0.0
        if not np.all(np.isfinite(following)):
            logger.warning("Valor no finito en el paso %d", m + 1)
            raise NaNGuard(step=m + 1, t=t + grid.dt)
        if record_energy:
            velocity = (following - previous) / (2.0 * grid.dt)
            mass = float(np.sum(np.abs(current) ** 2)) * grid.cell_volume
            times.append(t)
            kinetic.append(
                math.sqrt(float(np.sum(np.abs(velocity) ** 2)) * grid.cell_volume)
            )
            h1.append(math.sqrt(mass + gradient_norm_sq(current, grid.dx)))
        previous, current = current, following
        history[m + 1] = current.reshape(-1)[points]
        if full is not None:
            full[m + 1] = current
        if (m + 1) % PROGRESS_EVERY == 0:
            logger.debug("Paso %d/%d", m + 1, grid.steps)

    exterior = FieldSlab(grid=grid, values=history, region="exterior", points=points)
    energy = EnergyLog(np.array(times), np.array(kinetic), np.array(h1))
    result = ForwardResult(
        grid=grid,
        exterior=exterior,
        energy=energy,
        source_norm=sampler.l2_norm(),
        full=None if full is None else FieldSlab(grid=grid, values=full),
    )
    logger.info("Solver terminado: energía máxima %.4e", energy.maximum())
    return result


@dataclass
class EnergyReport:
    max_norm: float
    source_norm: float
    constant: Optional[float]

    @property
    def trivial(self):
        return self.constant is None

    def as_dict(self):
        return {
            "max_norm": self.max_norm,
            "source_norm": self.source_norm,
            "constant": self.constant,
        }


def energy_check(result):
    """
    C_emp = max_t(‖∂_t u‖ + ‖u‖_{H¹}) / ‖f‖_{L²}; indefinida si f ≡ 0.
    """
    max_norm = result.energy.maximum()
    if result.source_norm == 0.0:
        logger.info("Fuente nula: constante de energía indefinida")
        return EnergyReport(max_norm, 0.0, None)
    return EnergyReport(max_norm, result.source_norm, max_norm / result.source_norm)


def energy_drift(reports, factor=2.0):
    """``True`` si las constantes de varias resoluciones difieren más de ``factor``."""
    constants = [report.constant for report in reports if not report.trivial]
    if len(constants) < 2:
        return False
    return max(constants) > factor * min(constants)


def time_reversal_defect(V, f, grid, domain):
    """
    Integra el esquema hacia atrás desde los dos últimos niveles y devuelve
    max|u⁰_rec − u⁰| / max|u|.

    El leapfrog es reversible en aritmética exacta; el defecto mide el
    redondeo acumulado.
    """
    forward = solve_forward(V, f, grid, domain, keep_full=True, record_energy=False)
    values = forward.full.values
    peak = float(np.abs(values).max())
    if peak == 0.0:
        return 0.0
    sampler = SourceSampler(f, grid)
    boundary = _boundary_mask(grid.shape)
    dt2 = grid.dt**2
    later, current = values[-1], values[-2]
    for m in range(grid.steps - 1, 0, -1):
        update = laplacian(current, grid.dx, grid.order)
        potential = sample_potential(V, grid.dt * m, grid)
        if potential is not None:
            update -= potential * current
        forcing = sampler.level(m)
        if forcing is not None:
            update += forcing
        earlier = 2.0 * current - later + dt2 * update
        earlier[boundary] = 0.0
        later, current = current, earlier
    defect = float(np.abs(current - values[0]).max()) / peak
    logger.info("Defecto de reversibilidad: %.3e", defect)
    return defect
