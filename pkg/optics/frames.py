"""
Mallas locales adaptadas a un rayo.

Coordenadas (s, w, y) alrededor del ancla q_j = (s_j, x_j):

    t = s_j + s − w,    x = x_j + (s + w) ξ_j + Σ_k y_k e_{j,k}

En estas coordenadas □ = −∂_s∂_w − Δ_y, la fase −t + ξ·x es 2w más una
constante, el jacobiano es 2 y Σ_j = {s = 0}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from core.exceptions import ResolutionError

logger = logging.getLogger(__name__)

PAD_CELLS = 4

# Coeficientes centrados de cuarto orden
_FIRST = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_SECOND = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def to_local(ray, t, x):
    """Devuelve (s, w, y) para puntos (t, x); ``y`` tiene forma (..., n−1)."""
    t = np.asarray(t, dtype=float)
    offset = np.asarray(x, dtype=float) - ray.anchor_x
    along = offset @ ray.xi
    dt = t - ray.anchor_t
    return 0.5 * (along + dt), 0.5 * (along - dt), offset @ ray.frame.T


def from_local(ray, s, w, y):
    s = np.asarray(s, dtype=float)
    w = np.asarray(w, dtype=float)
    t = ray.anchor_t + s - w
    x = ray.anchor_x + (s + w)[..., None] * ray.xi + np.asarray(y) @ ray.frame
    return t, x


def difference(values, axis, h, order):
    """
    Derivada centrada de cuarto orden (``order`` 1 o 2) a lo largo de ``axis``.

    Fuera de la malla se supone valor cero.
    """
    stencil = _FIRST if order == 1 else _SECOND
    values = np.asarray(values)
    width = [(0, 0)] * values.ndim
    width[axis] = (2, 2)
    padded = np.pad(values, width)
    size = values.shape[axis]
    result = np.zeros_like(values)
    for offset, weight in enumerate(stencil):
        if weight == 0.0:
            continue
        result = result + weight * np.take(
            padded, np.arange(offset, offset + size), axis=axis
        )
    return result / h**order


@dataclass
class LocalGrid:
    """
    Malla regular en (s, w, y_1, …, y_{n−1}) alrededor del rayo.
    """

    ray: object
    s: np.ndarray
    w: np.ndarray
    y: List[np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def hs(self):
        return float(self.s[1] - self.s[0])

    @property
    def hw(self):
        return float(self.w[1] - self.w[0])

    @property
    def hy(self):
        return [float(axis[1] - axis[0]) for axis in self.y]

    @property
    def axes(self):
        return [self.s, self.w] + list(self.y)

    @property
    def shape(self):
        return tuple(axis.size for axis in self.axes)

    @property
    def cell_volume(self):
        """Elemento de volumen dt dx = 2 ds dw dy."""
        return 2.0 * self.hs * self.hw * math.prod(self.hy)

    @property
    def s_zero_index(self):
        index = int(np.argmin(np.abs(self.s)))
        if self.s[index] != 0.0:
            return None
        return index

    def mesh(self):
        if "mesh" not in self._cache:
            self._cache["mesh"] = np.meshgrid(*self.axes, indexing="ij")
        return self._cache["mesh"]

    def spacetime(self):
        """Coordenadas (t, x) de cada nodo; x con forma (..., n)."""
        if "spacetime" not in self._cache:
            mesh = self.mesh()
            y = np.stack(mesh[2:], axis=-1)
            self._cache["spacetime"] = from_local(self.ray, mesh[0], mesh[1], y)
        return self._cache["spacetime"]

    def phase(self):
        """−t + ξ·x en cada nodo."""
        t, x = self.spacetime()
        return -t + x @ self.ray.xi

    def interpolate(self, values, t, x):
        """
        Interpola ``values`` (definidos en los nodos) en puntos (t, x).

        Fuera de la malla devuelve 0.
        """
        s, w, y = to_local(self.ray, t, x)
        points = np.concatenate([s[..., None], w[..., None], y], axis=-1)
        kwargs = dict(method="linear", bounds_error=False, fill_value=0.0)
        values = np.asarray(values)
        real = RegularGridInterpolator(self.axes, values.real, **kwargs)(points)
        if not np.iscomplexobj(values):
            return real
        imag = RegularGridInterpolator(self.axes, values.imag, **kwargs)(points)
        return real + 1j * imag

    def tube_radius(self, values, tolerance=0.0):
        """
        Distancia espacio-temporal máxima al rayo de los nodos donde
        |values| > tolerance.
        """
        mesh = self.mesh()
        distance_sq = 2.0 * mesh[1] ** 2
        for component in mesh[2:]:
            distance_sq = distance_sq + component**2
        support = np.abs(values) > tolerance
        if not support.any():
            return 0.0
        return float(np.sqrt(distance_sq[support].max()))


def build_local_grid(ray, half_w, half_y, s_start, s_stop, hs, cells, min_cells=8):
    """
    Construye la malla local que cubre |w| ≤ half_w, |y_k| ≤ half_y y
    s ∈ [s_start, s_stop], con ``cells`` celdas por semiancho del tubo y
    PAD_CELLS celdas de relleno en cada borde.

    Los nodos en s son múltiplos enteros de ``hs``, de modo que s = 0 es un
    nodo cuando el intervalo lo contiene.
    """
    if cells < min_cells:
        logger.warning("Tubo con %d celdas (< %d)", cells, min_cells)
        raise ResolutionError(
            "La malla local no resuelve el tubo del paquete.",
            cells=cells,
            min_cells=min_cells,
        )
    hw = half_w / cells
    hy = half_y / cells
    span = np.arange(-cells - PAD_CELLS, cells + PAD_CELLS + 1)
    w = hw * span
    y = [hy * span for _ in range(ray.n - 1)]
    # relleno en s para que las filas extremas queden fuera de (0, T)
    extra = 1.5 * half_w + PAD_CELLS * hs
    first = int(math.floor((s_start - extra) / hs))
    last = int(math.ceil((s_stop + extra) / hs))
    s = hs * np.arange(first, last + 1)
    grid = LocalGrid(ray=ray, s=s, w=w, y=y)
    logger.debug("Malla local del rayo %s: %s nodos", ray.index, grid.shape)
    return grid
