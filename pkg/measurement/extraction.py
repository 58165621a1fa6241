"""
Extracción de integrales de rayo a partir de una sola medición exterior.

Para cada rayo j y sonda N:

    I = ∫∫_{(0,T)×(Ω̃∖Ω̄)} f η_j 𝒲 + ((Δη_j)𝒲 + 2∇η_j·∇𝒲) u dx dt,

    S = Σ_{k≤J} b_k ∫∫ e^{iτ_N(ξ_k−ξ_j)·x} η_j ζ_{k,−} v^{(0)}_{k,τ_N} □w_{j,N},

y c_N⁻¹I − S tiende a b_j C_χ ∫V(γ_j). Ninguna función de este módulo
recibe el potencial.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.exceptions import ArtifactError, CoverageError
from core.numerics import compensated_sum
from geometry.cutoff import build_cutoff, eta_jet
from measurement.tubes import TubeQuadrature
from optics.probes import build_probe
from solver.fdtd import SourceSampler

logger = logging.getLogger(__name__)

CHUNK_LEVELS = 32
CSV_COLUMNS = (
    "j",
    "N",
    "re_I",
    "im_I",
    "re_S",
    "im_S",
    "estimate",
    "imag_raw",
    "oracle_value",
    "rel_error",
)


def shell_points(grid, domain, ray):
    """Nodos de la malla con r < |x| < r + δ_j/4, donde η_j varía."""
    return grid.annulus(domain.r, domain.r + ray.delta / 4.0)


def _shell_slab(u_ext, points, domain, ray):
    grid = u_ext.grid
    if domain.r + ray.delta / 4.0 >= domain.r_tilde:
        raise CoverageError(
            "El soporte de η_j sale del anillo de medición.",
            j=ray.index,
            reach=domain.r + ray.delta / 4.0,
        )
    if u_ext.levels.size != grid.steps + 1 or np.any(
        u_ext.levels != np.arange(grid.steps + 1)
    ):
        raise CoverageError("Faltan niveles de tiempo en u_ext.", j=ray.index)
    try:
        return u_ext.restrict(points)
    except ValueError:
        logger.warning("u_ext no cubre la cáscara del rayo %s", ray.index)
        raise CoverageError(
            "Los nodos de u_ext no cubren la cáscara de η_j.", j=ray.index
        ) from None


def compute_I(
    j,
    N,
    source,
    u_ext,
    family,
    domain=None,
    profile=None,
    conjugate=False,
):
    """
    I_N^j con la regla del trapecio sobre la malla del solver.

    Args:
        source: SourceAssembly, FieldSlab de región ``source``, f(t, x) o ``None``.
        u_ext: FieldSlab exterior producido por el solver.
        conjugate: usa el conjugado de 𝒲 (comprobación de simetría).

    Raises:
        CoverageError: si u_ext no cubre la cáscara r < |x| < r + δ_j/4.
    """
    ray = family[j]
    domain = domain or family.domain
    grid = u_ext.grid
    source_slab = getattr(source, "field", source)
    if getattr(source_slab, "grid", grid) != grid:
        raise ArtifactError("La fuente y u_ext no comparten malla.")
    probe = build_probe(ray, N, domain, profile)
    points = shell_points(grid, domain, ray)
    shell = _shell_slab(u_ext, points, domain, ray)
    x = grid.coordinates.reshape(-1, grid.n)[points]
    eta, grad_eta, hess_eta = eta_jet(ray, domain, x)
    lap_eta = np.trace(hess_eta, axis1=-2, axis2=-1)
    sampler = SourceSampler(source, grid)

    weights = np.full(grid.steps + 1, grid.dt)
    weights[[0, -1]] *= 0.5
    parts = []
    for start in range(0, grid.steps + 1, CHUNK_LEVELS):
        levels = np.arange(start, min(start + CHUNK_LEVELS, grid.steps + 1))
        t = np.broadcast_to(grid.dt * levels[:, None], (levels.size, points.size))
        xx = np.broadcast_to(x, (levels.size,) + x.shape)
        W = probe.W(t, xx)
        grad_W = probe.spatial_gradient_W(t, xx)
        if conjugate:
            W, grad_W = np.conj(W), np.conj(grad_W)
        # −(□(η𝒲) − η□𝒲) = (Δη)𝒲 + 2∇η·∇𝒲
        commutator = lap_eta * W + 2.0 * np.sum(grad_eta * grad_W, axis=-1)
        integrand = commutator * shell.values[levels]
        for row, m in enumerate(levels):
            forcing = sampler.level(int(m))
            if forcing is not None:
                f = np.reshape(forcing, -1)[points]
                integrand[row] = integrand[row] + f * eta * W[row]
        parts.append(np.ravel(integrand * weights[levels, None]))
    values = np.concatenate(parts) if parts else np.zeros(0)
    total = compensated_sum(values) * grid.cell_volume
    logger.debug("I(j=%d, N=%d) = %s sobre %d nodos", j, N, total, points.size)
    return complex(total)


def s_terms(j, N, family, weights, J=None, domain=None, profile=None, cells=8):
    """Términos k = 1..J de S_N^j como ``TubeTerm``."""
    J = J or weights.J
    domain = domain or family.domain
    probe = build_probe(family[j], N, domain, profile)
    terms = []
    for k in range(1, J + 1):
        quadrature = TubeQuadrature(probe, family[k], probe.tau, cells=cells)
        term = quadrature.integrate()
        term.value *= weights.b[k - 1]
        if term.skipped:
            logger.debug("S(j=%d, N=%d): tubos %d y %d disjuntos", j, N, j, k)
        terms.append(term)
    return terms


def compute_S(j, N, family, weights, J=None, domain=None, profile=None, cells=8):
    """
    S_N^j truncada en el J de la fuente; solo usa el manifiesto.

    Raises:
        ResolutionError: si un solapamiento no admite cuadratura con la fase
            resuelta.
    """
    terms = s_terms(j, N, family, weights, J, domain, profile, cells)
    return complex(compensated_sum(np.array([term.value for term in terms])))


@dataclass
class ExtractionResult:
    j: int
    N: int
    I: complex
    S: complex
    c_N: float
    b_j: float
    C_chi: float
    J: int
    mode: str = "pde"
    oracle_value: Optional[float] = None
    diagnostics: Dict[str, object] = field(default_factory=dict)

    @property
    def raw(self):
        """c_N⁻¹ I − S."""
        return self.I / self.c_N - self.S

    @property
    def estimate(self):
        return self.raw.real / (self.b_j * self.C_chi)

    @property
    def imag(self):
        """|Im(raw)| en las unidades de la estimación."""
        return abs(self.raw.imag) / (self.b_j * self.C_chi)

    @property
    def rel_error(self):
        if self.oracle_value is None or self.oracle_value == 0.0:
            return None
        return abs(self.estimate - self.oracle_value) / abs(self.oracle_value)

    def as_row(self):
        return {
            "j": self.j,
            "N": self.N,
            "re_I": repr(self.I.real),
            "im_I": repr(self.I.imag),
            "re_S": repr(self.S.real),
            "im_S": repr(self.S.imag),
            "estimate": repr(self.estimate),
            "imag_raw": repr(self.imag),
            "oracle_value": _optional(self.oracle_value),
            "rel_error": _optional(self.rel_error),
        }


def _optional(value):
    return "" if value is None else repr(value)


def _check_indices(j, N, weights):
    if not 1 <= j <= weights.J:
        raise ValueError(f"Rayo j={j} fuera de la truncación J={weights.J}.")
    if not 1 <= N <= weights.L:
        raise ValueError(f"Sonda N={N} fuera de la truncación L={weights.L}.")


def extract(
    j,
    N,
    source,
    u_ext,
    family,
    weights,
    domain=None,
    profile=None,
    cells=8,
    oracle_value=None,
):
    """ExtractionResult de (j, N) en modo PDE."""
    _check_indices(j, N, weights)
    domain = domain or family.domain
    profile = profile or build_cutoff(domain.n)
    I = compute_I(j, N, source, u_ext, family, domain, profile)
    terms = s_terms(j, N, family, weights, None, domain, profile, cells)
    S = complex(compensated_sum(np.array([term.value for term in terms])))
    result = ExtractionResult(
        j=j,
        N=N,
        I=I,
        S=S,
        c_N=weights.c[N - 1],
        b_j=weights.b[j - 1],
        C_chi=profile.extraction_constant(domain.n),
        J=weights.J,
        oracle_value=oracle_value,
        diagnostics={
            "dx": u_ext.grid.dx,
            "dt": u_ext.grid.dt,
            "skipped_terms": [term.k for term in terms if term.skipped],
            "s_nodes": sum(term.nodes for term in terms),
        },
    )
    logger.info(
        "Rayo %d, N=%d: estimación %.6e (|Im| %.2e)",
        j,
        N,
        result.estimate,
        result.imag,
    )
    return result


def extract_all(tasks, run, workers=1):
    """Ejecuta ``run(j, N)`` para cada par, en paralelo si ``workers`` > 1."""

    def call(task):
        return run(*task)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(call, tasks))
    return [call(task) for task in tasks]


@dataclass
class ExtractionTable:
    """Estimaciones por rayo con la tendencia entre N consecutivos."""

    results: List[ExtractionResult]

    def rays(self):
        return sorted({result.j for result in self.results})

    def for_ray(self, j):
        return sorted(
            (result for result in self.results if result.j == j),
            key=lambda result: result.N,
        )

    def trend(self, j):
        """Lista de (N, estimación, diferencia con el N anterior)."""
        rows = []
        previous = None
        for result in self.for_ray(j):
            change = None if previous is None else result.estimate - previous
            rows.append((result.N, result.estimate, change))
            previous = result.estimate
        return rows

    def final(self, j):
        return self.for_ray(j)[-1]

    def estimates(self):
        return {j: self.final(j).estimate for j in self.rays()}

    def write_csv(self, path, config_hash=None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            if config_hash:
                handle.write(f"# config_hash: {config_hash}\n")
            writer = csv.DictWriter(handle, CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for result in sorted(self.results, key=lambda item: (item.j, item.N)):
                writer.writerow(result.as_row())
        return path


def extract_ray_integrals(results: Sequence[ExtractionResult]):
    """
    Tabla de estimaciones y tendencias por rayo.

    Raises:
        ValueError: si algún rayo tiene menos de dos valores de N.
    """
    table = ExtractionTable(list(results))
    for j in table.rays():
        if len(table.for_ray(j)) < 2:
            raise ValueError(f"El rayo {j} necesita al menos dos valores de N.")
        for N, estimate, change in table.trend(j):
            if change is not None:
                logger.info("Rayo %d, N=%d: %.6e (Δ %.2e)", j, N, estimate, change)
    return table


def read_extraction_csv(path):
    """Filas del CSV de extracción como diccionarios numéricos."""
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    for row in csv.DictReader(lines):
        try:
            rows.append(
                {
                    "j": int(row["j"]),
                    "N": int(row["N"]),
                    "estimate": float(row["estimate"]),
                    "oracle_value": float(row["oracle_value"])
                    if row["oracle_value"]
                    else None,
                }
            )
        except (KeyError, ValueError) as exc:
            raise ArtifactError(
                "CSV de extracción mal formado.", path=str(path)
            ) from exc
    return rows


def final_estimates(rows):
    """Estimación al mayor N disponible para cada rayo."""
    best = {}
    for row in rows:
        current = best.get(row["j"])
        if current is None or row["N"] > current["N"]:
            best[row["j"]] = row
    return {j: row["estimate"] for j, row in sorted(best.items())}

