"""
Dominio físico: bolas concéntricas Ω ⊂⊂ Ω̃ en ℝⁿ y horizonte temporal T.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.exceptions import GeometryError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DomainConfig:
    """
    Configuración del dominio.

    ``box_halfwidth`` por defecto es r̃ + T: ninguna onda reflejada en la caja
    alcanza Ω̃ antes de T.
    """

    n: int
    r: float
    r_tilde: float
    T: float
    box_halfwidth: Optional[float] = None

    def __post_init__(self):
        if self.n not in (2, 3):
            raise GeometryError("La dimensión espacial debe ser 2 o 3.", n=self.n)
        if not 0.0 < self.r < self.r_tilde:
            raise GeometryError(
                "Se requiere 0 < r < r̃.", r=self.r, r_tilde=self.r_tilde
            )
        if self.T <= 2.0 * self.r:
            logger.warning("T=%s no supera el diámetro 2r=%s", self.T, 2 * self.r)
            raise GeometryError("Se requiere T > Diam(Ω) = 2r.", T=self.T, r=self.r)
        if self.box_halfwidth is None:
            object.__setattr__(self, "box_halfwidth", self.r_tilde + self.T)
        if self.box_halfwidth < self.r_tilde + self.T:
            raise GeometryError(
                "La caja debe tener semiancho ≥ r̃ + T.",
                box_halfwidth=self.box_halfwidth,
                required=self.r_tilde + self.T,
            )

    def as_dict(self):
        return {
            "n": self.n,
            "r": self.r,
            "r_tilde": self.r_tilde,
            "T": self.T,
            "box_halfwidth": self.box_halfwidth,
        }


def dist_to_boundary(domain, x):
    """Distancia (con signo, positiva dentro de Ω) a ∂Ω."""
    return domain.r - np.linalg.norm(np.asarray(x, dtype=float), axis=-1)


def in_D(domain, t, x):
    """
    Indicador del conjunto óptimo 𝒟.

    Verdadero si x ∈ Ω y dist(x, ∂Ω) < t < T − dist(x, ∂Ω).
    """
    t = np.asarray(t, dtype=float)
    dist = dist_to_boundary(domain, x)
    inside = dist > 0.0
    result = inside & (dist < t) & (t < domain.T - dist)
    if result.ndim == 0:
        return bool(result)
    return result
