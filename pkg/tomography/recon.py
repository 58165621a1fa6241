"""
Inversión discreta de la transformada de rayos de luz sobre (0, T) × [−r, r]ⁿ.

V̂ es el interpolante multilineal de coeficientes nodales. Cada fila del
sistema integra exactamente las funciones sombrero a lo largo del tramo del
rayo dentro de (0, T) × Ω, y la solución minimiza

    ‖A c − y‖² + λ ‖G c‖²,

con G el gradiente discreto del espacio-tiempo, por gradiente conjugado sobre
las ecuaciones normales. Las celdas fuera de 𝒟 se informan aparte.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg

from core import wavf
from core.exceptions import ConvergenceError
from geometry.domain import in_D
from geometry.rays import enumerate_rays, spread_selection
from tomography.transform import ARC_FACTOR, chord_interval, oracle_samples

logger = logging.getLogger(__name__)

GAUSS_POINTS = 3
DEFAULT_MAXITER = 5000
DEFAULT_TOL = 1e-8
MIN_RAYS = 10


@dataclass(frozen=True)
class ReconGrid:
    """
    Malla nodal de (0, T) × [−r, r]ⁿ con ``cells`` celdas por eje (t primero).
    """

    domain: object
    cells: Tuple[int, ...]

    def __post_init__(self):
        if len(self.cells) != self.domain.n + 1 or min(self.cells) < 1:
            raise ValueError("Se necesita un número de celdas ≥ 1 por eje.")

    @classmethod
    def build(cls, domain, time_cells, space_cells):
        return cls(domain=domain, cells=(time_cells,) + (space_cells,) * domain.n)

    @property
    def axes(self):
        r = self.domain.r
        axes = [np.linspace(0.0, self.domain.T, self.cells[0] + 1)]
        axes += [np.linspace(-r, r, count + 1) for count in self.cells[1:]]
        return axes

    @property
    def spacing(self):
        return np.array([axis[1] - axis[0] for axis in self.axes])

    @property
    def lower(self):
        return np.array([axis[0] for axis in self.axes])

    @property
    def node_shape(self):
        return tuple(count + 1 for count in self.cells)

    @property
    def size(self):
        return int(np.prod(self.node_shape))

    def refined(self, factor=2):
        return ReconGrid(self.domain, tuple(factor * count for count in self.cells))

    def cell_centers(self):
        """(t, x) de los centros de celda con formas ``cells`` y ``cells + (n,)``."""
        mids = [0.5 * (axis[1:] + axis[:-1]) for axis in self.axes]
        mesh = np.meshgrid(*mids, indexing="ij")
        return mesh[0], np.stack(mesh[1:], axis=-1)

    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return mesh[0], np.stack(mesh[1:], axis=-1)

    @property
    def mask(self):
        """Celdas cuyo centro está en 𝒟."""
        t, x = self.cell_centers()
        return in_D(self.domain, t, x)

    def project(self, V):
        """Coeficientes nodales V(nodos)."""
        t, x = self.nodes()
        return V.evaluate(t, x).ravel()

    def cell_values(self, coeffs):
        """Interpolante en los centros: media de los 2^{n+1} vértices."""
        values = np.asarray(coeffs).reshape(self.node_shape)
        total = np.zeros(self.cells)
        for corner in itertools.product((0, 1), repeat=len(self.cells)):
            index = tuple(
                slice(offset, offset + count)
                for offset, count in zip(corner, self.cells)
            )
            total += values[index]
        return total / 2 ** len(self.cells)

    def interpolate(self, coeffs, t, x):
        points = np.concatenate(
            [np.asarray(t, dtype=float)[..., None], np.asarray(x, dtype=float)],
            axis=-1,
        )
        interpolator = RegularGridInterpolator(
            self.axes,
            np.asarray(coeffs).reshape(self.node_shape),
            method="linear",
            bounds_error=False,
            fill_value=0.0,
        )
        return interpolator(points)


def ray_breakpoints(ray, grid):
    """Parámetros donde el rayo cruza un plano de la malla dentro del tramo."""
    interval = chord_interval(grid.domain, ray)
    if interval is None:
        return None
    start, stop = interval
    crossings = [np.array([start, stop]), grid.axes[0] - ray.t0]
    for axis, component, offset in zip(grid.axes[1:], ray.xi, ray.p_entry):
        if component != 0.0:
            crossings.append((axis - offset) / component)
    sigma = np.unique(np.concatenate(crossings))
    return sigma[(sigma >= start) & (sigma <= stop)]


def ray_row(ray, grid):
    """
    Columnas y pesos de la fila del rayo: ∫ φ_i(γ(s)) √2 ds para cada
    función sombrero φ_i, exacto por Gauss–Legendre en cada celda.
    """
    sigma = ray_breakpoints(ray, grid)
    if sigma is None or sigma.size < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    left, right = sigma[:-1], sigma[1:]
    keep = right - left > 1e-14
    left, right = left[keep], right[keep]
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    nodes, weights = leggauss(GAUSS_POINTS)
    s = mid[:, None] + half[:, None] * nodes
    quad_weights = ARC_FACTOR * half[:, None] * weights

    cells = np.array(grid.cells)
    lower, spacing = grid.lower, grid.spacing
    t_mid, x_mid = ray.point(mid)
    centre = np.concatenate([t_mid[:, None], x_mid], axis=-1)
    index = np.floor((centre - lower) / spacing).astype(np.int64)
    index = np.clip(index, 0, cells - 1)
    t, x = ray.point(s)
    coords = np.concatenate([t[..., None], x], axis=-1)
    local = (coords - lower) / spacing - index[:, None, :]

    columns, values = [], []
    strides = np.array(
        [int(np.prod(grid.node_shape[k + 1 :])) for k in range(len(grid.node_shape))]
    )
    for corner in itertools.product((0, 1), repeat=cells.size):
        corner = np.array(corner)
        factors = np.where(corner == 1, local, 1.0 - local)
        weight = np.sum(quad_weights * np.prod(factors, axis=-1), axis=1)
        columns.append((index + corner) @ strides)
        values.append(weight)
    columns = np.concatenate(columns)
    values = np.concatenate(values)
    unique, inverse = np.unique(columns, return_inverse=True)
    return unique, np.bincount(inverse, weights=values)


@dataclass
class SystemMatrix:
    matrix: sparse.csr_matrix
    empty_rows: List[int] = field(default_factory=list)

    @property
    def shape(self):
        return self.matrix.shape


def build_system(rays, grid, workers=1):
    """
    Matriz dispersa por filas; los rayos que no cortan (0, T) × Ω dan filas
    nulas y se señalan en ``empty_rows``.
    """
    if not rays:
        raise ValueError("Se necesita al menos un rayo.")

    def run(ray):
        return ray_row(ray, grid)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, rays))
    else:
        rows = [run(ray) for ray in rays]
    indptr = np.cumsum([0] + [columns.size for columns, _ in rows])
    indices = np.concatenate([columns for columns, _ in rows])
    data = np.concatenate([values for _, values in rows])
    matrix = sparse.csr_matrix((data, indices, indptr), shape=(len(rays), grid.size))
    empty = [i for i, (columns, _) in enumerate(rows) if columns.size == 0]
    if empty:
        logger.warning("%d rayos no cortan la malla de reconstrucción", len(empty))
    return SystemMatrix(matrix=matrix, empty_rows=empty)


def _difference(count, h):
    ones = np.ones(count)
    return sparse.diags([-ones, ones], [0, 1], shape=(count, count + 1)) / h


def gradient_operator(grid):
    """Diferencias hacia delante por eje, apiladas: G con ‖G c‖² ≈ ∫|∇V̂|²."""
    blocks = []
    shape = grid.node_shape
    for axis, h in enumerate(grid.spacing):
        factors = [sparse.identity(size, format="csr") for size in shape]
        factors[axis] = _difference(shape[axis] - 1, h)
        block = factors[0]
        for factor in factors[1:]:
            block = sparse.kron(block, factor, format="csr")
        blocks.append(block)
    return sparse.vstack(blocks, format="csr")


@dataclass
class Reconstruction:
    grid: ReconGrid
    coeffs: np.ndarray
    lam: float
    data_residual: float
    iterations: int
    residuals: List[float] = field(default_factory=list)
    masked_error: Optional[float] = None

    def cell_values(self):
        return self.grid.cell_values(self.coeffs)

    def unconstrained(self):
        """Valores de celda fuera de 𝒟 (sin garantía de unicidad)."""
        return self.cell_values()[~self.grid.mask]

    def summary(self):
        outside = self.unconstrained()
        return {
            "lambda": self.lam,
            "data_residual": self.data_residual,
            "iterations": self.iterations,
            "masked_error": self.masked_error,
            "unconstrained_cells": int(outside.size),
            "unconstrained_max": float(np.abs(outside).max()) if outside.size else 0.0,
        }


def masked_relative_error(grid, coeffs, V):
    """‖V̂ − V‖/‖V‖ en los centros de las celdas de 𝒟."""
    mask = grid.mask
    t, x = grid.cell_centers()
    truth = V.evaluate(t, x)[mask]
    estimate = grid.cell_values(coeffs)[mask]
    scale = float(np.linalg.norm(truth))
    if scale == 0.0:
        return float(np.linalg.norm(estimate))
    return float(np.linalg.norm(estimate - truth)) / scale


def invert(
    samples,
    grid,
    lam,
    system=None,
    maxiter=DEFAULT_MAXITER,
    tol=DEFAULT_TOL,
    truth=None,
):
    """
    Resuelve (AᵀA + λGᵀG) c = Aᵀy por gradiente conjugado.

    Raises:
        ConvergenceError: si CG agota ``maxiter`` sin alcanzar ``tol``; lleva
            el mejor iterado y la historia de residuos.
    """
    if len(samples) < MIN_RAYS:
        raise ValueError(f"Se necesitan al menos {MIN_RAYS} rayos.")
    if not lam > 0.0:
        raise ValueError("λ debe ser positivo.")
    if system is None:
        system = build_system([sample.ray for sample in samples], grid)
    A = system.matrix
    y = np.array([sample.value for sample in samples], dtype=float)
    G = gradient_operator(grid)
    normal = (A.T @ A + lam * (G.T @ G)).tocsr()
    rhs = A.T @ y
    rhs_norm = float(np.linalg.norm(rhs))

    residuals: List[float] = []
    best = {"residual": math.inf, "iterate": np.zeros(grid.size)}

    def track(iterate):
        residual = float(np.linalg.norm(normal @ iterate - rhs)) / rhs_norm
        residuals.append(residual)
        if residual < best["residual"]:
            best["residual"] = residual
            best["iterate"] = iterate.copy()

    if rhs_norm == 0.0:
        coeffs = np.zeros(grid.size)
    else:
        coeffs, info = cg(
            normal, rhs, rtol=tol, atol=0.0, maxiter=maxiter, callback=track
        )
        if info > 0:
            logger.warning("CG sin converger tras %d iteraciones", maxiter)
            raise ConvergenceError(
                best_iterate=best["iterate"],
                residuals=residuals,
                iterations=maxiter,
                best_residual=best["residual"],
            )
    data_norm = float(np.linalg.norm(y))
    misfit = float(np.linalg.norm(A @ coeffs - y))
    result = Reconstruction(
        grid=grid,
        coeffs=coeffs,
        lam=lam,
        data_residual=misfit / data_norm if data_norm else misfit,
        iterations=len(residuals),
        residuals=residuals,
    )
    if truth is not None:
        result.masked_error = masked_relative_error(grid, coeffs, truth)
    logger.info(
        "Inversión λ=%.3g: residuo de datos %.3e, error %s",
        lam,
        result.data_residual,
        result.masked_error,
    )
    return result


def select_lambda(
    samples,
    grid,
    lambdas: Sequence[float],
    truth=None,
    noise=None,
    system=None,
    maxiter=DEFAULT_MAXITER,
    tol=DEFAULT_TOL,
):
    """
    Barre λ y devuelve ``(mejor, todas)``.

    Con ``truth`` gana el menor error en 𝒟; si no, el mayor λ cuyo residuo
    relativo de datos no supera ``noise`` (principio de discrepancia) y, sin
    ``noise``, el menor residuo.
    """
    if system is None:
        system = build_system([sample.ray for sample in samples], grid)
    results = []
    for lam in sorted(lambdas):
        try:
            results.append(
                invert(
                    samples, grid, lam, system, maxiter=maxiter, tol=tol, truth=truth
                )
            )
        except ConvergenceError as exc:
            logger.warning("λ=%.3g descartado: %s", lam, exc)
    if not results:
        raise ConvergenceError("Ningún λ del barrido convergió.")
    if truth is not None:
        best = min(results, key=lambda item: item.masked_error)
    elif noise is not None:
        admissible = [item for item in results if item.data_residual <= noise]
        best = admissible[-1] if admissible else results[0]
    else:
        best = min(results, key=lambda item: item.data_residual)
    return best, results


@dataclass
class StudyPoint:
    """Mejor reconstrucción con ``count`` rayos oráculo."""

    count: int
    best: Reconstruction

    @property
    def masked_error(self):
        return self.best.masked_error


def ray_count_study(
    V,
    domain,
    grid,
    counts,
    seed_density,
    lambdas,
    workers=1,
    maxiter=DEFAULT_MAXITER,
    tol=DEFAULT_TOL,
):
    """
    Error en 𝒟 con λ ajustado frente al número de rayos oráculo.

    Los rayos salen de una sola enumeración de densidad ``seed_density``;
    cada punto usa ``count`` rayos repartidos sobre ella.

    Raises:
        InsufficientRays: si la enumeración tiene menos rayos que
            ``max(counts)``.
    """
    family = enumerate_rays(domain, None, seed_density)
    points = []
    for count in sorted(counts):
        rays = spread_selection(family, count)
        samples = oracle_samples(V, rays)
        system = build_system(rays, grid, workers)
        best, _ = select_lambda(
            samples,
            grid,
            lambdas,
            truth=V,
            system=system,
            maxiter=maxiter,
            tol=tol,
        )
        logger.info("%d rayos: error en 𝒟 %.4e", count, best.masked_error)
        points.append(StudyPoint(count=count, best=best))
    return points


def write_reconstruction(reconstruction, path, config_hash=None):
    grid = reconstruction.grid
    metadata = {
        "domain": grid.domain.as_dict(),
        "cells": list(grid.cells),
        "region": "reconstruction",
        **reconstruction.summary(),
    }
    if config_hash:
        metadata["config_hash"] = config_hash
    return wavf.write_field(
        path, reconstruction.coeffs.reshape(grid.node_shape), metadata
    )
