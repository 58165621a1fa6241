"""
Diagnósticos geométricos de la familia truncada: índice de densidad h_j,
su proxy min-max y el mapa de tubos que se cortan.
"""

import logging
import math

import numpy as np

from geometry.rays import line_distance
from measurement.tubes import overlap_interval

logger = logging.getLogger(__name__)


def density_index(family, j, r, J=None):
    """
    h_j(r) = min{k ≠ j : |ξ_k − ξ_j| < τ_r^{−1/2}, θ_{k,j} < (δ_j+δ_k) r^{−1/2}}.

    Returns:
        El índice k o ``None`` si ningún rayo de la truncación cumple ambas
        condiciones.
    """
    ray = family[j]
    J = J or len(family)
    angular = math.exp(-r / 2.0)
    for k in range(1, J + 1):
        if k == j:
            continue
        other = family[k]
        close = np.linalg.norm(other.xi - ray.xi) < angular
        reach = (ray.delta + other.delta) / math.sqrt(r)
        if close and line_distance(other, ray) < reach:
            return k
    return None


def density_proxy(family, j, N, J=None):
    """min_{k≠j} max(|ξ_k − ξ_j| τ_N^{1/2}, θ_{k,j} N^{1/2}/(δ_j + δ_k))."""
    ray = family[j]
    J = J or len(family)
    best = math.inf
    for k in range(1, J + 1):
        if k == j:
            continue
        other = family[k]
        angular = float(np.linalg.norm(other.xi - ray.xi)) * math.exp(N / 2.0)
        spatial = line_distance(other, ray) * math.sqrt(N) / (ray.delta + other.delta)
        best = min(best, max(angular, spatial))
    return best


def overlap_map(family, N, J=None, domain=None):
    """Pares (j, k), j < k, cuyos tubos de sonda se cortan en supp η_j."""
    J = J or len(family)
    domain = domain or family.domain
    pairs = []
    for j in range(1, J + 1):
        for k in range(j + 1, J + 1):
            ray, other = family[j], family[k]
            interval = overlap_interval(
                ray, other, ray.delta / (2.0 * N), other.delta / (2.0 * N), domain
            )
            if interval is not None:
                pairs.append((j, k))
    logger.debug("N=%d: %d pares de tubos solapados", N, len(pairs))
    return pairs


def density_report(family, N_list, J=None):
    """Filas (j, N, h_j(N), proxy) para el informe de verificación."""
    J = J or len(family)
    return [
        {
            "j": j,
            "N": N,
            "h_j": density_index(family, j, N, J),
            "proxy": density_proxy(family, j, N, J),
        }
        for j in range(1, J + 1)
        for N in N_list
    ]
