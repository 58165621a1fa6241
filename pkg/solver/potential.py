"""
Potenciales dependientes del tiempo como suma de bultos polinómicos

    V(t, x) = Σ_b A_b (1 − q_b)₊^{p_b},
    q_b = ((t − t_b)/ρ_t)² + |x − x_b|²/ρ_x²,

con derivadas exactas hasta orden 2. Para p ≥ 5 cada bulto es C⁴.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from core.exceptions import GeometryError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Bump:
    center: Tuple[float, ...]
    radii: Tuple[float, float]
    amplitude: float
    exponent: int = 5

    def __post_init__(self):
        if self.exponent < 5:
            raise ValueError("El exponente del bulto debe ser ≥ 5 (clase C⁴).")
        if min(self.radii) <= 0.0:
            raise ValueError("Los radios del bulto deben ser positivos.")

    @property
    def t0(self):
        return self.center[0]

    @property
    def x0(self):
        return np.asarray(self.center[1:], dtype=float)

    def quadratic(self, t, x):
        rho_t, rho_x = self.radii
        dt = (np.asarray(t, dtype=float) - self.t0) / rho_t
        dx = np.asarray(x, dtype=float) - self.x0
        return dt**2 + np.sum(dx**2, axis=-1) / rho_x**2

    def evaluate(self, t, x):
        base = np.maximum(1.0 - self.quadratic(t, x), 0.0)
        return self.amplitude * base**self.exponent

    def jet(self, t, x, order=2):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        rho_t, rho_x = self.radii
        p = self.exponent
        base = np.maximum(1.0 - self.quadratic(t, x), 0.0)
        dq = np.concatenate(
            [
                (2.0 * (t - self.t0) / rho_t**2)[..., None],
                2.0 * (x - self.x0) / rho_x**2,
            ],
            axis=-1,
        )
        d2q = np.diag([2.0 / rho_t**2] + [2.0 / rho_x**2] * (x.shape[-1]))
        value = self.amplitude * base**p
        first = self.amplitude * p * base ** (p - 1)
        second = self.amplitude * p * (p - 1) * base ** (p - 2)
        grad = -first[..., None] * dq
        if order < 2:
            return value, grad, None
        hess = second[..., None, None] * (dq[..., :, None] * dq[..., None, :])
        hess = hess - first[..., None, None] * d2q
        return value, grad, hess

    def bounding_box(self):
        """((t_min, t_max), radio espacial)."""
        return (self.t0 - self.radii[0], self.t0 + self.radii[0]), self.radii[1]

    def as_dict(self):
        return {
            "center": list(self.center),
            "radii": list(self.radii),
            "amplitude": self.amplitude,
            "exponent": self.exponent,
        }


@dataclass(frozen=True)
class PotentialSpec:
    """
    Potencial V como lista de bultos; la lista vacía representa V ≡ 0.
    """

    bumps: Tuple[Bump, ...] = field(default_factory=tuple)

    @property
    def is_zero(self):
        return not self.bumps

    def __call__(self, t, x):
        return self.evaluate(t, x)

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros(np.broadcast_shapes(np.shape(t), x.shape[:-1]))
        for bump in self.bumps:
            total = total + bump.evaluate(t, x)
        return total

    def jet(self, t, x, order=2):
        """
        Returns:
            ``(value, grad, hess)`` en (t, x) con el índice 0 temporal;
            ``hess`` es ``None`` si ``order`` < 2.
        """
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), x.shape[:-1])
        m = x.shape[-1] + 1
        value = np.zeros(shape)
        grad = np.zeros(shape + (m,))
        hess = np.zeros(shape + (m, m)) if order >= 2 else None
        for bump in self.bumps:
            v, g, h = bump.jet(t, x, order)
            value = value + v
            grad = grad + g
            if hess is not None:
                hess = hess + h
        return value, grad, hess

    def validate_support(self, domain):
        """
        Comprueba que cada bulto tenga soporte en [0, T] × Ω.
        """
        for index, bump in enumerate(self.bumps):
            (t_lo, t_hi), radius = bump.bounding_box()
            if len(bump.center) != domain.n + 1:
                raise GeometryError(
                    "Centro de bulto con dimensión incorrecta.", bump=index
                )
            reach = float(np.linalg.norm(bump.x0)) + radius
            if t_lo < 0.0 or t_hi > domain.T or reach >= domain.r:
                logger.warning("Bulto %d fuera de [0,T]×Ω", index)
                raise GeometryError(
                    "El soporte del potencial debe estar en [0,T]×Ω.",
                    bump=index,
                    reach=reach,
                    t_range=(t_lo, t_hi),
                )
        return self

    @classmethod
    def from_list(cls, items):
        return cls(
            bumps=tuple(
                Bump(
                    center=tuple(float(c) for c in item["center"]),
                    radii=tuple(float(r) for r in item["radii"]),
                    amplitude=float(item["amplitude"]),
                    exponent=int(item.get("exponent", 5)),
                )
                for item in items
            )
        )
