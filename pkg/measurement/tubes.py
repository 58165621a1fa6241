"""
Integrales sobre el tubo de la sonda w_{j,N}

    ∫∫ e^{i(τ_ℓ φ_k − τ_N φ_j)} ζ_{k,−} a_{k,τ_ℓ} η_j (□ + V) w_{j,N} dx dt,

con φ = −t + ξ·x y a = v^{(0)}, o la envolvente Σ τ^{−k}v^{(k)} de una pila
de transporte cuando se da una. Se integran en la malla local del rayo j
restringida al tramo de s donde los tubos de radio δ_j/(2N) y δ_k/(2ℓ)
pueden cortarse dentro del soporte de η_j. Los pasos se eligen para
resolver la fase con POINTS_PER_PERIOD puntos por periodo y los cortes χ
del paquete con ``cells`` celdas por semiancho.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.exceptions import ResolutionError
from core.numerics import compensated_sum
from geometry.cutoff import eta_radial, eval_zeta
from optics.frames import LocalGrid, build_local_grid
from optics.jets import ChiProduct
from optics.packets import packet_envelope

logger = logging.getLogger(__name__)

POINTS_PER_PERIOD = 10
MAX_CELLS = 192
MAX_ROWS = 40000
CHUNK_ROWS = 48
DEFAULT_S_STEP = 0.01


@dataclass
class TubeTerm:
    """Un término de la serie: rayo k, frecuencia del paquete y valor."""

    k: int
    tau: float
    value: complex
    skipped: bool = False
    nodes: int = 0


def spacetime_distance(ray, t, x):
    """Distancia euclídea de los puntos (t, x) a la recta γ del rayo."""
    points = np.concatenate(
        [np.asarray(t, dtype=float)[..., None], np.asarray(x, dtype=float)], axis=-1
    )
    direction = ray.direction / math.sqrt(2.0)
    offset = points - ray.origin
    along = offset @ direction
    return np.linalg.norm(offset - along[..., None] * direction, axis=-1)


def eta_chord(ray, domain, extra=0.0):
    """Intervalo de parámetros σ con |x(σ)| ≤ r + δ_j/4 + extra, o ``None``."""
    reach = domain.r + ray.delta / 4.0 + extra
    b = float(np.dot(ray.p_entry, ray.xi))
    c = float(np.dot(ray.p_entry, ray.p_entry)) - reach**2
    disc = b * b - c
    if disc <= 0.0:
        return None
    root = math.sqrt(disc)
    return -b - root, -b + root


def overlap_interval(probe_ray, packet_ray, probe_radius, packet_radius, domain):
    """
    Tramo de σ del rayo de la sonda donde los dos tubos pueden cortarse
    dentro del soporte de η_j, ampliado en la suma de radios; ``None`` si
    son disjuntos.
    """
    chord = eta_chord(probe_ray, domain, probe_radius)
    if chord is None:
        return None
    reach = probe_radius + packet_radius
    if packet_ray is probe_ray:
        return chord[0] - reach, chord[1] + reach
    spacing = min(probe_radius, packet_radius) / 4.0
    count = max(int(math.ceil((chord[1] - chord[0]) / spacing)) + 1, 2)
    sigma = np.linspace(chord[0], chord[1], count)
    h = sigma[1] - sigma[0]
    t, x = probe_ray.point(sigma)
    distance = spacetime_distance(packet_ray, t, x)
    near = distance <= reach + h * math.sqrt(2.0)
    if not near.any():
        return None
    return float(sigma[near].min()) - reach, float(sigma[near].max()) + reach


def _local_axes(ray):
    """Direcciones (t, x) de los ejes locales s, w, y_i."""
    axes = [np.concatenate([[1.0], ray.xi]), np.concatenate([[-1.0], ray.xi])]
    axes += [np.concatenate([[0.0], e]) for e in ray.frame]
    return np.array(axes)


def _step_limits(axes, rows, width):
    """Paso máximo por eje para que ``rows·(t, x)`` cambie a lo sumo ``width``."""
    rates = np.abs(np.asarray(rows) @ axes.T)
    rates = np.max(np.atleast_2d(rates), axis=0)
    with np.errstate(divide="ignore"):
        return np.where(rates > 0.0, width / rates, np.inf)


class TubeQuadrature:
    """
    Cuadratura de un término (rayo k, τ_ℓ) sobre el tubo de la sonda (j, N).

    Args:
        probe: ProbeSpec de (j, N).
        packet_ray: rayo k del paquete.
        tau_packet: frecuencia τ_ℓ del paquete.
        cells: celdas mínimas por semiancho de los tubos.
        s_step: paso máximo a lo largo del rayo.
        stack: PacketStack del rayo k a τ_ℓ; sin ella la amplitud es v⁰.
    """

    def __init__(
        self,
        probe,
        packet_ray,
        tau_packet,
        cells=8,
        s_step=DEFAULT_S_STEP,
        stack=None,
    ):
        self.probe = probe
        self.stack = stack
        self.packet_ray = packet_ray
        self.tau_packet = float(tau_packet)
        self.cells = cells
        self.s_step = s_step
        profile = probe.profile
        self.packet = ChiProduct(
            packet_ray, profile, math.log(self.tau_packet) / packet_ray.delta
        )
        self.probe_radius = probe.ray.delta / (2.0 * probe.N)
        self.packet_radius = packet_ray.delta / (2.0 * math.log(self.tau_packet))
        self.grid: Optional[LocalGrid] = None

    @property
    def phase_gradient(self):
        """Gradiente en (t, x) de τ_ℓ φ_k − τ_N φ_j."""
        tau_n = self.probe.tau
        packet = self.tau_packet * np.concatenate([[-1.0], self.packet_ray.xi])
        probe = tau_n * np.concatenate([[-1.0], self.probe.ray.xi])
        return packet - probe

    def build_grid(self):
        """Malla local del rayo j que resuelve el término, o ``None``."""
        ray = self.probe.ray
        domain = self.probe.domain
        interval = overlap_interval(
            ray, self.packet_ray, self.probe_radius, self.packet_radius, domain
        )
        if interval is None:
            return None
        profile = self.probe.profile
        scale = self.probe.N / ray.delta
        half_w = profile.support / (2.0 * scale)
        half_y = profile.support / scale
        axes = _local_axes(ray)

        period = 2.0 * math.pi / POINTS_PER_PERIOD
        limits = _step_limits(axes, self.phase_gradient, period)
        packet_limits = _step_limits(
            axes, self.packet.forms, profile.support / self.cells
        )
        limits = np.minimum(limits, packet_limits)
        quarter = self.packet_ray.delta / (4.0 * math.sqrt(ray.n))
        ramp = min(ray.delta / 4.0, quarter) / self.cells
        hs = min(self.s_step, ramp, float(limits[0]))
        transverse = [half_w / limits[1]] + [half_y / h for h in limits[2:]]
        cells = max([self.cells] + [int(math.ceil(c)) for c in transverse])
        s_start = interval[0] - ray.s_hat
        s_stop = interval[1] - ray.s_hat
        rows = (s_stop - s_start) / hs
        if cells > MAX_CELLS or rows > MAX_ROWS:
            logger.warning(
                "Término k=%s τ=%.4g irresoluble: %d celdas, %d filas",
                self.packet_ray.index,
                self.tau_packet,
                cells,
                rows,
            )
            raise ResolutionError(
                "La cuadratura del solapamiento no resuelve la fase.",
                k=self.packet_ray.index,
                cells=cells,
                rows=int(rows),
            )
        self.grid = build_local_grid(ray, half_w, half_y, s_start, s_stop, hs, cells)
        return self.grid

    def integrand(self, t, x, V=None, corrected=True):
        probe = self.probe
        domain = probe.domain
        box = probe.box_w(t, x)
        if V is not None and not V.is_zero:
            box = box + V(t, x) * probe.w(t, x)
        radius = np.linalg.norm(x, axis=-1)
        eta = eta_radial(probe.ray, domain, radius)
        zeta = eval_zeta(self.packet_ray, "-", t)
        if corrected and self.stack is not None:
            amplitude = packet_envelope(self.stack, t, x)
        else:
            amplitude = self.packet.value(t, x)
        gradient = self.phase_gradient
        phase = np.exp(1j * (x @ gradient[1:] + t * gradient[0]))
        inside = (t > 0.0) & (t < domain.T)
        return np.where(inside, phase * zeta * amplitude * eta * box, 0.0)

    def integrate(self, V=None, corrected=True):
        """
        Valor del término; exactamente 0 si los tubos no se cortan.

        Con ``corrected=False`` se ignora la pila y se integra con v⁰.
        """
        grid = self.grid or self.build_grid()
        if grid is None:
            return TubeTerm(
                k=self.packet_ray.index, tau=self.tau_packet, value=0j, skipped=True
            )
        chunks = []
        for start in range(0, grid.s.size, CHUNK_ROWS):
            sub = LocalGrid(
                ray=grid.ray, s=grid.s[start : start + CHUNK_ROWS], w=grid.w, y=grid.y
            )
            t, x = sub.spacetime()
            chunks.append(np.ravel(self.integrand(t, x, V, corrected)))
        values = np.concatenate(chunks)
        total = compensated_sum(values) * grid.cell_volume
        return TubeTerm(
            k=self.packet_ray.index,
            tau=self.tau_packet,
            value=complex(total),
            nodes=values.size,
        )
