"""
Mallas del espacio-tiempo para el solver y cortes de campo sobre ellas.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from core import wavf
from core.exceptions import ArtifactError, GeometryError, StabilityError

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.9
BOX_MARGIN_CELLS = 4
REGIONS = ("full", "exterior", "shell", "source")


@dataclass(frozen=True)
class GridSpec:
    """
    Malla uniforme de la caja [−H, H]ⁿ con ``cells`` intervalos por eje y
    ``steps`` pasos de tiempo de tamaño ``dt``.

    Los nodos de borde llevan la condición de Dirichlet u = 0.
    """

    n: int
    dx: float
    dt: float
    halfwidth: float
    steps: int
    cells: int
    order: int = 2

    @property
    def cfl(self):
        return self.dt * math.sqrt(self.n) / self.dx

    @property
    def cfl_limit(self):
        # el laplaciano de cuarto orden reduce el límite en √3/2
        return CFL_LIMIT if self.order == 2 else CFL_LIMIT * math.sqrt(3.0) / 2.0

    @property
    def T(self):
        return self.steps * self.dt

    @property
    def nodes(self):
        return self.cells + 1

    @property
    def shape(self):
        return (self.nodes,) * self.n

    @property
    def cell_volume(self):
        return self.dx**self.n

    @property
    def axis(self):
        return -self.halfwidth + self.dx * np.arange(self.nodes)

    def times(self):
        return self.dt * np.arange(self.steps + 1)

    def half_times(self):
        """Instantes t_{m+1/2}, m = 0..steps−1, donde se muestrea f."""
        return self.dt * (np.arange(self.steps) + 0.5)

    @cached_property
    def coordinates(self):
        """Coordenadas de los nodos con forma (*shape, n)."""
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def radius(self):
        return np.linalg.norm(self.coordinates, axis=-1)

    def annulus(self, inner, outer):
        """Índices planos de los nodos con inner < |x| < outer."""
        radius = self.radius.ravel()
        return np.flatnonzero((radius > inner) & (radius < outer))

    def resolves(self, tau, points_per_wavelength):
        wavelength = 2.0 * math.pi / tau
        return self.dx <= wavelength / points_per_wavelength * (1.0 + 1e-12)

    def validate(self, domain=None):
        if self.cfl > self.cfl_limit * (1.0 + 1e-12):
            logger.warning("CFL=%.4f supera el límite %.4f", self.cfl, self.cfl_limit)
            raise StabilityError(cfl=round(self.cfl, 6), limit=self.cfl_limit)
        if self.order not in (2, 4):
            raise ValueError("El orden del laplaciano debe ser 2 o 4.")
        if domain is None:
            return self
        if domain.n != self.n:
            raise GeometryError("Dimensión de malla y dominio distintas.")
        if self.halfwidth < domain.r_tilde + BOX_MARGIN_CELLS * self.dx:
            raise GeometryError(
                "La caja no contiene Ω̃ con margen suficiente.",
                halfwidth=self.halfwidth,
                required=domain.r_tilde + BOX_MARGIN_CELLS * self.dx,
            )
        if self.T < domain.T * (1.0 - 1e-12):
            raise GeometryError("La malla no cubre [0, T].", T=self.T)
        return self

    def refined(self, factor=2):
        """La misma caja con dx y dt divididos por ``factor``."""
        return replace(
            self,
            dx=self.dx / factor,
            dt=self.dt / factor,
            steps=self.steps * factor,
            cells=self.cells * factor,
        )

    def enlarged(self, extra_cells):
        """Caja ampliada en ``extra_cells`` celdas por lado con el mismo dx."""
        return replace(
            self,
            halfwidth=self.halfwidth + extra_cells * self.dx,
            cells=self.cells + 2 * extra_cells,
        )

    def as_dict(self):
        return {
            "n": self.n,
            "dx": self.dx,
            "dt": self.dt,
            "halfwidth": self.halfwidth,
            "steps": self.steps,
            "cells": self.cells,
            "order": self.order,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            n=int(data["n"]),
            dx=float(data["dx"]),
            dt=float(data["dt"]),
            halfwidth=float(data["halfwidth"]),
            steps=int(data["steps"]),
            cells=int(data["cells"]),
            order=int(data.get("order", 2)),
        )

    @classmethod
    def from_domain(
        cls, domain, tau=None, points_per_wavelength=10, cfl=CFL_LIMIT, dx=None, order=2
    ):
        """
        Malla para el dominio con dx = 2π/(τ·puntos por longitud de onda) o
        el ``dx`` dado, ajustado para que la caja tenga un número entero de
        celdas; dt = cfl·dx/√n ajustado para terminar exactamente en T.
        """
        if dx is None:
            if tau is None:
                raise ValueError("Se requiere τ o dx.")
            dx = 2.0 * math.pi / (tau * points_per_wavelength)
        halfwidth = domain.box_halfwidth
        cells = int(math.ceil(2.0 * halfwidth / dx))
        dx = 2.0 * halfwidth / cells
        steps = int(math.ceil(domain.T * math.sqrt(domain.n) / (cfl * dx)))
        dt = domain.T / steps
        grid = cls(
            n=domain.n,
            dx=dx,
            dt=dt,
            halfwidth=halfwidth,
            steps=steps,
            cells=cells,
            order=order,
        )
        logger.info(
            "Malla n=%d: %d celdas por eje, %d pasos, CFL=%.3f",
            grid.n,
            cells,
            steps,
            grid.cfl,
        )
        return grid


@dataclass
class FieldSlab:
    """
    Muestras de un campo sobre la malla.

    ``values`` tiene el eje de tiempo primero. En las regiones ``exterior`` y
    ``shell`` el resto es un eje de nodos (``points``, índices planos); en
    ``full`` y ``source`` es la malla espacial completa. ``levels`` da el
    índice temporal de cada fila (seminiveles m + 1/2 en ``source``).
    """

    grid: GridSpec
    values: np.ndarray
    region: str = "full"
    levels: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.region not in REGIONS:
            raise ValueError(f"Región desconocida: {self.region!r}")
        if self.levels is None:
            self.levels = np.arange(self.values.shape[0])
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if self.points is not None:
            self.points = np.asarray(self.points, dtype=np.int64)

    @property
    def is_pointwise(self):
        return self.region in ("exterior", "shell")

    def times(self):
        if self.region == "source":
            return self.grid.dt * (self.levels + 0.5)
        return self.grid.dt * self.levels

    def coordinates(self):
        """Coordenadas espaciales de los nodos de cada fila."""
        flat = self.grid.coordinates.reshape(-1, self.grid.n)
        if self.is_pointwise:
            return flat[self.points]
        return self.grid.coordinates

    def row(self, level):
        """Fila del nivel ``level`` o ``None`` si no está guardada."""
        index = np.searchsorted(self.levels, level)
        if index < self.levels.size and self.levels[index] == level:
            return self.values[index]
        return None

    def dense(self, index):
        """Fila ``index`` sobre la malla completa (NaN fuera de los nodos)."""
        if not self.is_pointwise:
            return self.values[index]
        dtype = np.result_type(self.values.dtype, np.float64)
        full = np.full(int(np.prod(self.grid.shape)), np.nan, dtype=dtype)
        full[self.points] = self.values[index]
        return full.reshape(self.grid.shape)

    def restrict(self, points):
        """Corte ``shell`` sobre un subconjunto de los nodos guardados."""
        if self.is_pointwise:
            available = self.points
            values = self.values
        else:
            available = np.arange(int(np.prod(self.grid.shape)))
            values = self.values.reshape(self.values.shape[0], -1)
        positions = np.searchsorted(available, points)
        inside = positions < available.size
        inside[inside] = available[positions[inside]] == points[inside]
        if not inside.all():
            raise ValueError("Nodos fuera del corte.")
        return FieldSlab(
            grid=self.grid,
            values=values[:, positions],
            region="shell",
            levels=self.levels,
            points=points,
        )

    def to_metadata(self):
        return {
            "grid": self.grid.as_dict(),
            "region": self.region,
            "levels": self.levels.tolist(),
            "points": None if self.points is None else self.points.tolist(),
            **self.metadata,
        }

    def write(self, path, metadata=None):
        payload = self.to_metadata()
        payload.update(metadata or {})
        return wavf.write_field(path, self.values, payload)

    @classmethod
    def read(cls, path):
        values, metadata = wavf.read_field(path)
        if "grid" not in metadata or "region" not in metadata:
            raise ArtifactError("Archivo lateral sin malla o región.", path=str(path))
        extra = {
            key: value
            for key, value in metadata.items()
            if key not in ("grid", "region", "levels", "points", "complex")
        }
        return cls(
            grid=GridSpec.from_dict(metadata["grid"]),
            values=values,
            region=metadata["region"],
            levels=metadata.get("levels"),
            points=metadata.get("points"),
            metadata=extra,
        )
