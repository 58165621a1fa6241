"""
Pesos de la fuente universal

    f = Σ_j b_j Σ_k c_k f_{j,τ_k},   τ_k = e^k,   c_k = k⁻³ τ_k⁻¹,
    b_j = 2^{−j} / κ_j.

κ_j se mide sobre los paquetes del rayo (seis constantes empíricas) o se toma
de la fórmula cerrada δ_j^{−n/2−8}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from geometry.cutoff import build_cutoff
from optics.jets import ChiProduct
from optics.packets import amplitude_norms, remainder_norm, solve_transport

logger = logging.getLogger(__name__)

C_MODES = ("standard", "unit")
KAPPA_MODES = ("measured", "formula")
ZETA_3 = 1.2020569031595942


def frequencies(L):
    """τ_k = e^k, k = 1..L."""
    if L < 1:
        raise ValueError("L debe ser ≥ 1.")
    return tuple(math.exp(k) for k in range(1, L + 1))


def frequency_weights(L, mode="standard"):
    """
    c_k = k⁻³ τ_k⁻¹; el modo ``unit`` (c_k = k⁻³) no corresponde a la
    construcción teórica y solo sirve para estudiar amplificación de ruido.
    """
    if mode not in C_MODES:
        raise ValueError(f"Modo de pesos desconocido: {mode!r}")
    taus = frequencies(L)
    if mode == "standard":
        return taus, tuple(k**-3 / tau for k, tau in enumerate(taus, start=1))
    logger.warning("Pesos c_k = k⁻³ fuera de la construcción teórica")
    return taus, tuple(float(k) ** -3 for k in range(1, L + 1))


def kappa_formula(ray):
    return ray.delta ** (-ray.n / 2.0 - 8.0)


@dataclass
class KappaMeasurement:
    """Las seis constantes empíricas de un rayo y el κ_j resultante."""

    index: int
    constants: Dict[str, float]
    kappa: float

    def as_dict(self):
        return {"index": self.index, "kappa": self.kappa, **self.constants}


def probe_h2_norm(ray, N, cells=12, profile=None):
    """‖w_{j,N}‖_{H²} sobre la malla local del tubo δ_j/(2N)."""
    profile = profile or build_cutoff(ray.n)
    stack = solve_transport(
        ray, math.exp(N), 0, s_range=(-ray.delta, ray.delta), cells=cells
    )
    t, x = stack.grid.spacetime()
    value, grad, hess = ChiProduct(ray, profile, N / ray.delta).jet(t, x)
    density = value**2 + np.sum(grad**2, axis=-1) + np.sum(hess**2, axis=(-2, -1))
    return math.sqrt(float(np.sum(density)) * stack.grid.cell_volume)


def measure_kappa(ray, domain, taus, cells=12, s_step=0.02, profile=None):
    """
    Mide las constantes de cota del rayo sobre las frecuencias ``taus``:
    ‖v^{(k)}‖/(log τ)^{2k} (k = 0, 1, 2), el resto por τ/(log τ)⁶, la fuente
    por paquete entre τ y la norma H² de la sonda entre N².

    Returns:
        KappaMeasurement con κ_j = max · δ_j⁻².
    """
    from source.assembly import packet_source_norm

    profile = profile or build_cutoff(ray.n)
    constants = {
        "amplitude0": 0.0,
        "amplitude1": 0.0,
        "amplitude2": 0.0,
        "remainder": 0.0,
        "source": 0.0,
        "probe": 0.0,
    }
    for N, tau in enumerate(taus, start=1):
        log_tau = math.log(tau)
        stack = solve_transport(
            ray,
            tau,
            2,
            horizon=domain.T,
            s_step=s_step,
            cells=cells,
            profile=profile,
        )
        norms = amplitude_norms(stack, domain)
        for k, norm in enumerate(norms):
            key = f"amplitude{k}"
            constants[key] = max(constants[key], norm / log_tau ** (2 * k))
        remainder = remainder_norm(stack, None, domain) * tau / log_tau**6
        constants["remainder"] = max(constants["remainder"], remainder)
        source = packet_source_norm(ray, tau, cells=cells, profile=profile) / tau
        constants["source"] = max(constants["source"], source)
        probe = probe_h2_norm(ray, N, cells=cells, profile=profile) / N**2
        constants["probe"] = max(constants["probe"], probe)
    kappa = max(constants.values()) / ray.delta**2
    logger.debug("κ del rayo %s: %.4e", ray.index, kappa)
    return KappaMeasurement(index=ray.index, constants=constants, kappa=kappa)


@dataclass(frozen=True)
class WeightScheme:
    taus: Sequence[float]
    c: Sequence[float]
    kappa: Sequence[float]
    b: Sequence[float]
    c_mode: str = "standard"
    kappa_mode: str = "measured"
    measurements: List[KappaMeasurement] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if len(self.taus) != len(self.c) or len(self.kappa) != len(self.b):
            raise ValueError("Longitudes de pesos inconsistentes.")
        weights = list(self.c) + list(self.kappa) + list(self.b)
        if not all(value > 0.0 and math.isfinite(value) for value in weights):
            raise ValueError("Todos los pesos deben ser positivos y finitos.")

    @property
    def L(self):
        return len(self.taus)

    @property
    def J(self):
        return len(self.b)

    def frequency_sum(self):
        """Σ_k c_k τ_k."""
        return math.fsum(c * tau for c, tau in zip(self.c, self.taus))

    def ray_sum(self):
        """Σ_j b_j κ_j."""
        return math.fsum(b * kappa for b, kappa in zip(self.b, self.kappa))

    def coefficient(self, j, k):
        """b_j c_k con índices desde 1."""
        return self.b[j - 1] * self.c[k - 1]

    def as_header(self):
        return {
            "J": self.J,
            "L": self.L,
            "c_mode": self.c_mode,
            "kappa_mode": self.kappa_mode,
            "tau": " ".join(repr(float(value)) for value in self.taus),
            "c": " ".join(repr(float(value)) for value in self.c),
            "kappa": " ".join(repr(float(value)) for value in self.kappa),
            "b": " ".join(repr(float(value)) for value in self.b),
        }

    @classmethod
    def from_header(cls, header):
        def vector(key):
            return tuple(float(value) for value in str(header[key]).split())

        return cls(
            taus=vector("tau"),
            c=vector("c"),
            kappa=vector("kappa"),
            b=vector("b"),
            c_mode=header.get("c_mode", "standard"),
            kappa_mode=header.get("kappa_mode", "measured"),
        )


def build_weights(
    family,
    J,
    L,
    domain,
    c_mode="standard",
    kappa_mode="measured",
    cells=12,
    kappa: Optional[Sequence[float]] = None,
):
    """
    Pesos para los rayos 1..J de ``family`` y las frecuencias τ_1..τ_L.

    Args:
        kappa: constantes κ_j ya conocidas; si se dan no se miden.
    """
    if kappa_mode not in KAPPA_MODES:
        raise ValueError(f"Modo de κ desconocido: {kappa_mode!r}")
    taus, c = frequency_weights(L, c_mode)
    rays = [family[j] for j in range(1, J + 1)]
    measurements = []
    if kappa is None:
        if kappa_mode == "formula":
            kappa = [kappa_formula(ray) for ray in rays]
        else:
            measurements = [
                measure_kappa(ray, domain, taus, cells=cells) for ray in rays
            ]
            kappa = [item.kappa for item in measurements]
    b = [2.0**-j / value for j, value in enumerate(kappa, start=1)]
    scheme = WeightScheme(
        taus=taus,
        c=c,
        kappa=tuple(kappa),
        b=tuple(b),
        c_mode=c_mode,
        kappa_mode=kappa_mode,
        measurements=measurements,
    )
    logger.info(
        "Pesos J=%d L=%d: Σc_kτ_k=%.6f, Σb_jκ_j=%.6f",
        J,
        L,
        scheme.frequency_sum(),
        scheme.ray_sum(),
    )
    return scheme
