"""
Modo oráculo y descomposición en serie de c_N⁻¹ I_N^j.

En modo oráculo la medición se sustituye por

    u = c_N Σ_k b_k ζ_{k,−} 𝒰_{k,τ_N}    (sin el término de corrección)

con 𝒰 resuelto hasta el orden K en presencia de V, y la integral se evalúa
con la identidad interior I = ∫ u η_j (□+V)𝒲, que en el tubo de la sonda es
un término de ``TubeQuadrature`` por rayo. S conserva su forma con v⁰. Este
camino sí usa V: sirve para validar la extracción sin error del solver.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from core.numerics import compensated_sum
from geometry.cutoff import build_cutoff
from measurement.extraction import ExtractionResult, _check_indices
from measurement.tubes import TubeQuadrature
from optics.packets import MAX_ORDER, solve_transport
from optics.probes import build_probe

logger = logging.getLogger(__name__)

BOUND_SLACK = 2.0


def _sum(values):
    return complex(compensated_sum(np.array(values, dtype=np.complex128)))


def oracle_extract(
    j,
    N,
    family,
    weights,
    V,
    domain=None,
    profile=None,
    cells=8,
    K=MAX_ORDER,
    tube_cells=24,
):
    """
    ExtractionResult de (j, N) con u oráculo a la frecuencia τ_N.

    I y S se calculan sobre las mismas mallas de solapamiento. I usa la
    envolvente de orden K resuelta con V y el término η_j V w de la
    identidad interior; S usa v⁰.

    Args:
        K: orden de la pila de transporte de cada paquete (0 a 2).
        tube_cells: celdas por semiancho de las mallas de transporte.
    """
    _check_indices(j, N, weights)
    domain = domain or family.domain
    profile = profile or build_cutoff(domain.n)
    probe = build_probe(family[j], N, domain, profile)
    c_N = weights.c[N - 1]
    interior, free, skipped = [], [], []
    for k in range(1, weights.J + 1):
        quadrature = TubeQuadrature(probe, family[k], probe.tau, cells=cells)
        if quadrature.build_grid() is None:
            skipped.append(k)
            continue
        if K > 0:
            quadrature.stack = solve_transport(
                family[k],
                probe.tau,
                K,
                V,
                horizon=domain.T,
                cells=tube_cells,
                profile=profile,
            )
        b_k = weights.b[k - 1]
        interior.append(b_k * quadrature.integrate(V).value)
        free.append(b_k * quadrature.integrate(corrected=False).value)
    I = c_N * _sum(interior)
    S = _sum(free)
    result = ExtractionResult(
        j=j,
        N=N,
        I=I,
        S=S,
        c_N=c_N,
        b_j=weights.b[j - 1],
        C_chi=profile.extraction_constant(domain.n),
        J=weights.J,
        mode="oracle",
        diagnostics={"skipped_terms": skipped, "K": K},
    )
    logger.info("Oráculo rayo %d, N=%d: %.6e", j, N, result.estimate)
    return result


@dataclass
class LemmaReport:
    """
    Partes de c_N⁻¹I para la fuente truncada completa (todas las τ_ℓ):

    - ``main``: b_j ∫ ζ_{j,−} w̃ v^{(0)}_{j,τ_N};
    - ``j_residual``: los términos del rayo j con ℓ ≠ N;
    - ``k_residual``: los términos de k ≠ j menos su límite en S.
    """

    j: int
    N: int
    main: complex
    j_residual: complex
    k_residual: complex
    k_limit: complex
    j_bound_shape: float
    k_bound_shape: float
    terms: List[dict] = field(default_factory=list)

    @property
    def total(self):
        return self.main + self.j_residual + self.k_residual + self.k_limit

    def as_dict(self):
        return {
            "j": self.j,
            "N": self.N,
            "main": [self.main.real, self.main.imag],
            "j_residual": abs(self.j_residual),
            "k_residual": abs(self.k_residual),
            "k_limit": [self.k_limit.real, self.k_limit.imag],
            "j_bound_shape": self.j_bound_shape,
            "k_bound_shape": self.k_bound_shape,
        }


def lemma_diagnostics(j, N, family, weights, V, domain=None, profile=None, cells=8):
    """Descompone c_N⁻¹I término a término para (j, N)."""
    _check_indices(j, N, weights)
    domain = domain or family.domain
    profile = profile or build_cutoff(domain.n)
    probe = build_probe(family[j], N, domain, profile)
    c_N = weights.c[N - 1]
    main = 0j
    j_parts, k_parts, k_limits, terms = [], [], [], []
    for k in range(1, weights.J + 1):
        b_k = weights.b[k - 1]
        for ell in range(1, weights.L + 1):
            tau = weights.taus[ell - 1]
            quadrature = TubeQuadrature(probe, family[k], tau, cells=cells)
            term = quadrature.integrate(V)
            value = b_k * weights.c[ell - 1] / c_N * term.value
            terms.append({"k": k, "ell": ell, "value": value, "skipped": term.skipped})
            if k == j and ell == N:
                main = value
            elif k == j:
                j_parts.append(value)
            else:
                k_parts.append(value)
            if k != j and ell == N and not term.skipped:
                k_limits.append(b_k * quadrature.integrate().value)
    kappa = max(weights.kappa)
    tau_n = weights.taus[N - 1]
    k_limit = _sum(k_limits) if k_limits else 0j
    report = LemmaReport(
        j=j,
        N=N,
        main=main,
        j_residual=_sum(j_parts) if j_parts else 0j,
        k_residual=(_sum(k_parts) - k_limit) if k_parts else 0j,
        k_limit=k_limit,
        j_bound_shape=weights.kappa[j - 1] ** 2 * N**7 / tau_n,
        k_bound_shape=kappa * N**4 / (tau_n**2 * c_N),
        terms=terms,
    )
    logger.info(
        "Lema (j=%d, N=%d): |J res| %.3e, |K res| %.3e",
        j,
        N,
        abs(report.j_residual),
        abs(report.k_residual),
    )
    return report


@dataclass
class TrendCheck:
    part: str
    N_from: int
    N_to: int
    ratio: Optional[float]
    allowed: float

    @property
    def passed(self):
        return self.ratio is None or self.ratio <= self.allowed

    def as_dict(self):
        return {
            "part": self.part,
            "N_from": self.N_from,
            "N_to": self.N_to,
            "ratio": self.ratio,
            "allowed": self.allowed,
            "passed": self.passed,
        }


def lemma_trend(reports, slack=BOUND_SLACK):
    """
    Compara el cociente de residuos entre N consecutivos con el de las
    formas de cota, con holgura ``slack``.
    """
    reports = sorted(reports, key=lambda report: report.N)
    checks = []
    for before, after in zip(reports, reports[1:]):
        for part, shape in (("j", "j_bound_shape"), ("k", "k_bound_shape")):
            old = abs(getattr(before, f"{part}_residual"))
            new = abs(getattr(after, f"{part}_residual"))
            allowed = slack * getattr(after, shape) / getattr(before, shape)
            ratio = None if old == 0.0 else new / old
            checks.append(TrendCheck(part, before.N, after.N, ratio, allowed))
    failed = [check for check in checks if not check.passed]
    if failed:
        logger.warning("%d comprobaciones de tendencia fallan", len(failed))
    return checks


def bound_ratio(N_from, N_to):
    """N⁷ τ_N⁻¹ entre dos sondas, con τ_N = e^N."""
    return (N_to**7 * math.exp(-N_to)) / (N_from**7 * math.exp(-N_from))
