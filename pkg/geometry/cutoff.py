"""
Funciones de corte con derivadas exactas.

Todas se construyen con los smoothstep S_m, polinomios de grado 2m + 1 que
son C^m en los nudos y coinciden con la beta incompleta regularizada
I_u(m+1, m+1). Los cortes temporales y radiales usan S_4 (grado 9); el
perfil χ de los paquetes usa por defecto S_8, porque el resto H¹ del
paquete de segundo orden deriva χ siete veces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.legendre import leggauss
from scipy import special

RAMP_SMOOTHNESS = 4
PROFILE_SMOOTHNESS = 8


@lru_cache(maxsize=None)
def smoothstep_polynomial(order):
    """
    Coeficientes en la base de potencias de S_m.

    ``order`` 4 da 126u⁵ − 420u⁶ + 540u⁷ − 315u⁸ + 70u⁹.
    """
    if order < 1:
        raise ValueError("El orden del smoothstep debe ser positivo.")
    coef = [0.0] * (order + 1)
    for k in range(order + 1):
        weight = math.comb(order + k, k) * math.comb(2 * order + 1, order - k)
        coef.append(float((-1) ** k * weight))
    return Polynomial(coef)


def _kernel_derivative(u, order, k):
    """k-ésima derivada de u^m (1 − u)^m por la regla de Leibniz."""
    total = np.zeros_like(u)
    for i in range(k + 1):
        if i > order or k - i > order:
            continue
        left = math.perm(order, i) * u ** (order - i)
        right = (-1) ** (k - i) * math.perm(order, k - i)
        right = right * (1.0 - u) ** (order - k + i)
        total = total + math.comb(k, i) * left * right
    return total


def smoothstep(u, d=0, order=RAMP_SMOOTHNESS):
    """
    Evalúa la derivada ``d`` de S_order, extendido por 0 (u ≤ 0) y 1 (u ≥ 1).
    """
    if d < 0 or d > order:
        raise ValueError(f"Orden de derivada no soportado: {d}")
    u = np.asarray(u, dtype=float)
    clipped = np.clip(u, 0.0, 1.0)
    if d == 0:
        return special.betainc(order + 1, order + 1, clipped)
    inside = (u > 0.0) & (u < 1.0)
    norm = special.beta(order + 1, order + 1)
    return np.where(inside, _kernel_derivative(clipped, order, d - 1) / norm, 0.0)


def ramp(t, start, end, d=0):
    """
    Transición suave que vale 0 en ``start`` y 1 en ``end``.

    Si ``start > end`` la función decrece: vale 1 para t ≤ end y 0 para
    t ≥ start. La derivada ``d`` se obtiene por la regla de la cadena.
    """
    width = end - start
    if width == 0:
        raise ValueError("La transición necesita un intervalo no vacío.")
    u = (np.asarray(t, dtype=float) - start) / width
    return smoothstep(u, d) * (1.0 / width) ** d


@dataclass(frozen=True)
class CutoffProfile:
    """
    Perfil χ: 1 en |t| ≤ plateau, 0 en |t| ≥ support, smoothstep en medio.
    """

    n: int
    plateau: float
    support: float
    transition_poly: tuple
    l2_norm_sq: float
    smoothness: int = PROFILE_SMOOTHNESS

    def __call__(self, t, d=0):
        return self.evaluate(t, d)

    @property
    def width(self):
        return self.support - self.plateau

    def evaluate(self, t, d=0):
        t = np.asarray(t, dtype=float)
        u = (self.support - np.abs(t)) / self.width
        factor = (-np.sign(t) / self.width) ** d
        return smoothstep(u, d, self.smoothness) * factor

    def extraction_constant(self, n=None):
        """C_χ = 2^{-1/2} (∫χ²)ⁿ."""
        n = self.n if n is None else n
        return self.l2_norm_sq**n / math.sqrt(2.0)


def build_cutoff(n, smoothness=PROFILE_SMOOTHNESS):
    """
    Construye el perfil χ para la dimensión espacial ``n``.

    Args:
        n: dimensión espacial (n ≥ 2).
        smoothness: clase C^m del polinomio de transición (m ≥ 4).

    Returns:
        CutoffProfile con ``l2_norm_sq`` calculado por Gauss–Legendre, exacta
        para el cuadrado del polinomio de transición.
    """
    if n < 2:
        raise ValueError("La dimensión espacial debe ser al menos 2.")
    if smoothness < 4:
        raise ValueError("El perfil χ debe ser al menos C⁴.")
    plateau = 1.0 / (8.0 * math.sqrt(n))
    support = 1.0 / (4.0 * math.sqrt(n))
    nodes, weights = leggauss(2 * smoothness + 4)
    u = 0.5 * (nodes + 1.0)
    transition_integral = 0.5 * float(
        np.dot(weights, smoothstep(u, 0, smoothness) ** 2)
    )
    l2_norm_sq = 2.0 * plateau + 2.0 * (support - plateau) * transition_integral
    return CutoffProfile(
        n=n,
        plateau=plateau,
        support=support,
        transition_poly=tuple(smoothstep_polynomial(smoothness).coef.tolist()),
        l2_norm_sq=l2_norm_sq,
        smoothness=smoothness,
    )


def eval_zeta(ray, sign, t, d=0):
    """
    Cortes temporales ζ_{j,±} del rayo.

    ζ₋ pasa de 0 (t ≤ s_j − δ/(4√n)) a 1 (t ≥ s_j); ζ₊ vale 1 hasta
    s_j + δ/(8√n) y 0 desde s_j + δ/(4√n).
    """
    n = ray.n
    quarter = ray.delta / (4.0 * math.sqrt(n))
    if sign in ("-", -1):
        return ramp(t, ray.anchor_t - quarter, ray.anchor_t, d)
    if sign in ("+", 1):
        return ramp(t, ray.anchor_t + quarter, ray.anchor_t + 0.5 * quarter, d)
    raise ValueError(f"Signo inválido para ζ: {sign!r}")


def eta_radial(ray, domain, rho, d=0):
    return ramp(rho, domain.r + ray.delta / 4.0, domain.r, d)


def eta_jet(ray, domain, x):
    """
    Valor, gradiente y hessiano de η_j en puntos ``x`` de forma (..., n).

    Returns:
        Tupla ``(value, grad, hess)`` con formas (...), (..., n), (..., n, n).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    rho = np.linalg.norm(x, axis=-1)
    safe = np.where(rho > 0.0, rho, 1.0)
    h0 = eta_radial(ray, domain, rho, 0)
    h1 = eta_radial(ray, domain, rho, 1)
    h2 = eta_radial(ray, domain, rho, 2)
    unit = x / safe[..., None]
    grad = h1[..., None] * unit
    outer = unit[..., :, None] * unit[..., None, :]
    eye = np.eye(n)
    hess = h2[..., None, None] * outer + (h1 / safe)[..., None, None] * (eye - outer)
    return h0, grad, hess


def eval_eta(ray, domain, x, d=None):
    """
    Derivada parcial de η_j indicada por el multi-índice ``d`` (|d| ≤ 2).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    d = tuple(d) if d is not None else (0,) * n
    if len(d) != n or any(k < 0 for k in d):
        raise ValueError(f"Multi-índice inválido: {d}")
    order = sum(d)
    value, grad, hess = eta_jet(ray, domain, x)
    if order == 0:
        return value
    axes = [i for i, k in enumerate(d) for _ in range(k)]
    if order == 1:
        return grad[..., axes[0]]
    if order == 2:
        return hess[..., axes[0], axes[1]]
    raise ValueError("Solo se soportan derivadas de η hasta orden 2.")
