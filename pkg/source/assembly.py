"""
Fuentes por paquete f_{j,τ} = ζ_{j,+} □(ζ_{j,−} 𝒰_{j,τ}) y la fuente universal
truncada

    f = Σ_{j ≤ J} b_j Σ_{k ≤ L} c_k f_{j,τ_k}.

Como ζ_{j,−} solo depende de t,

    □(ζ₋𝒰) = ζ₋″𝒰 + 2ζ₋′∂_t𝒰 + ζ₋ □𝒰,   □𝒰 = τ^{−K} e^{iτφ} g^{(K)},

y la fuente no depende del potencial.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from core.exceptions import InsufficientRays, ResolutionError, SupportViolation
from core.numerics import NeumaierAccumulator
from geometry.cutoff import build_cutoff, eval_zeta
from geometry.rays import read_manifest, write_manifest
from optics.packets import (
    MAX_ORDER,
    eval_phase,
    leading_amplitude,
    solve_transport,
    transport_residual,
)
from solver.grid import FieldSlab, GridSpec
from source.weights import WeightScheme, build_weights

logger = logging.getLogger(__name__)

SUPPORT_TOLERANCE = 1e-12
MIN_RAMP_LEVELS = 4
MANIFEST_NAME = "manifest.csv"
FIELD_NAME = "source.wavf"


def zeta_quarter(ray):
    """δ_j/(4√n), semiancho temporal del soporte de f_{j,τ}."""
    return ray.delta / (4.0 * math.sqrt(ray.n))


def packet_stack(ray, tau, K=MAX_ORDER, cells=24, profile=None):
    """Pila de amplitudes con V ≡ 0 que cubre el soporte temporal de la fuente."""
    quarter = zeta_quarter(ray)
    return solve_transport(
        ray, tau, K, None, s_range=(-quarter, quarter), cells=cells, profile=profile
    )


def _check_free(stack):
    if stack.potential is not None and not stack.potential.is_zero:
        raise ValueError("La fuente se construye con la pila de V ≡ 0.")


def _dt_amplitude(stack, k):
    # ∂_t = (∂_s − ∂_w)/2 y ∂_s v^{(k)} = g^{(k−1)}/(2i)
    return 0.5 * (stack.forcing[k - 1] / 2j - stack.dw_amplitude(k))


def _combine(ray, tau, t, x, envelope, dt_envelope, box):
    phase = eval_phase(ray, tau, t, x)
    packet = phase * envelope
    dt_packet = phase * (dt_envelope - 1j * tau * envelope)
    lower = [eval_zeta(ray, "-", t, d) for d in range(3)]
    upper = eval_zeta(ray, "+", t)
    return upper * (lower[2] * packet + 2.0 * lower[1] * dt_packet + lower[0] * box)


def packet_source_local(stack):
    """f_{j,τ} en los nodos de la malla local de ``stack``."""
    _check_free(stack)
    ray, tau = stack.ray, stack.tau
    t, x = stack.grid.spacetime()
    residual0 = transport_residual(ray, tau, t, x, stack.profile)
    ds_envelope = residual0 + stack.ds_envelope()
    dt_envelope = 0.5 * (ds_envelope - stack.dw_envelope())
    box = (
        np.exp(1j * tau * stack.grid.phase())
        * stack.forcing[stack.order]
        / tau**stack.order
    )
    return _combine(ray, tau, t, x, stack.envelope(), dt_envelope, box)


def packet_source_at(stack, t, x):
    """
    f_{j,τ}(t, x) en puntos arbitrarios: v⁰ y ∂_t v⁰ exactas, las
    correcciones y g^{(K)} interpoladas de la malla local.
    """
    _check_free(stack)
    ray, tau, grid = stack.ray, stack.tau, stack.grid
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    value, grad, _ = leading_amplitude(ray, tau, stack.profile).jet(t, x)
    envelope = value.astype(complex)
    dt_envelope = grad[..., 0].astype(complex)
    for k in range(1, stack.order + 1):
        envelope = envelope + grid.interpolate(stack.amps[k], t, x) / tau**k
        dt_envelope = (
            dt_envelope + grid.interpolate(_dt_amplitude(stack, k), t, x) / tau**k
        )
    top = grid.interpolate(stack.forcing[stack.order], t, x) / tau**stack.order
    box = eval_phase(ray, tau, t, x) * top
    return _combine(ray, tau, t, x, envelope, dt_envelope, box)


def packet_source_norm(ray, tau, cells=24, profile=None):
    """‖f_{j,τ}‖_{L²} sobre la malla local."""
    stack = packet_stack(ray, tau, cells=cells, profile=profile)
    values = packet_source_local(stack)
    return math.sqrt(float(np.sum(np.abs(values) ** 2)) * stack.grid.cell_volume)


@dataclass
class PacketBlock:
    """
    Muestras de f_{j,τ} sobre la ventana de la malla del solver que contiene
    B_{δ_j}(q_j): filas en los seminiveles ``levels``, nodos en ``window``.
    """

    ray_index: int
    tau: float
    levels: np.ndarray
    window: Tuple[slice, ...]
    values: np.ndarray

    def norm(self, grid):
        """Norma L² con la regla del punto medio en t."""
        total = float(np.sum(np.abs(self.values) ** 2))
        return math.sqrt(total * grid.cell_volume * grid.dt)

    def maximum(self):
        return float(np.abs(self.values).max()) if self.values.size else 0.0


def _ball_window(ray, grid):
    half_times = grid.half_times()
    levels = np.flatnonzero(np.abs(half_times - ray.anchor_t) < ray.delta)
    window = []
    for center in ray.anchor_x:
        inside = np.flatnonzero(np.abs(grid.axis - center) < ray.delta)
        if inside.size == 0:
            window.append(slice(0, 0))
        else:
            window.append(slice(int(inside[0]), int(inside[-1]) + 1))
    return levels, tuple(window)


def packet_source(ray, tau, stack, grid):
    """
    f_{j,τ} muestreada en los seminiveles de ``grid`` dentro de B_{δ_j}(q_j).

    Raises:
        SupportViolation: si algún valor fuera de la bola supera 1e−12·max|f|.
    """
    if stack.ray is not ray or stack.tau != float(tau):
        raise ValueError("La pila no corresponde al rayo y la frecuencia dados.")
    levels, window = _ball_window(ray, grid)
    t_levels = grid.half_times()[levels]
    x = grid.coordinates[window]
    shape = (levels.size,) + x.shape[:-1]
    t = np.broadcast_to(t_levels.reshape((-1,) + (1,) * grid.n), shape)
    x = np.broadcast_to(x, t.shape + (grid.n,))
    values = packet_source_at(stack, t, x)

    distance_sq = (t - ray.anchor_t) ** 2 + np.sum((x - ray.anchor_x) ** 2, axis=-1)
    outside = distance_sq >= ray.delta**2
    peak = float(np.abs(values).max()) if values.size else 0.0
    if outside.any() and peak > 0.0:
        leak = float(np.abs(values[outside]).max())
        if leak > SUPPORT_TOLERANCE * peak:
            logger.warning("Fuga de soporte en el rayo %s: %.3e", ray.index, leak)
            raise SupportViolation(ray=ray.index, tau=tau, leak=leak, peak=peak)
    values = np.where(outside, 0.0, values)

    quarter = zeta_quarter(ray)
    ramp_levels = np.count_nonzero(
        (t_levels > ray.anchor_t - quarter) & (t_levels < ray.anchor_t)
    )
    if ramp_levels < MIN_RAMP_LEVELS:
        logger.warning(
            "El corte ζ₋ del rayo %s se muestrea con %d seminiveles",
            ray.index,
            ramp_levels,
        )
    return PacketBlock(
        ray_index=ray.index,
        tau=float(tau),
        levels=levels,
        window=window,
        values=values,
    )


def packet_contribution(ray, tau, grid, cells=24, profile=None, K=MAX_ORDER):
    """Pila y muestras de f_{j,τ} sobre ``grid`` en un solo paso."""
    stack = packet_stack(ray, tau, K=K, cells=cells, profile=profile)
    return packet_source(ray, tau, stack, grid)


@dataclass
class SourceAssembly:
    """Fuente universal truncada con su manifiesto público."""

    truncation: Tuple[int, int]
    field: FieldSlab
    weights: WeightScheme
    family: object
    supports: List[Tuple[np.ndarray, float]] = field(default_factory=list)
    blocks: List[PacketBlock] = field(default_factory=list, repr=False)
    order: int = MAX_ORDER
    cells: int = 24

    @property
    def grid(self):
        return self.field.grid

    def manifest_header(self, config_hash=None):
        header = dict(self.weights.as_header())
        header["J"], header["L"] = self.truncation
        header["K"] = self.order
        header["tube_cells"] = self.cells
        header["grid"] = " ".join(
            f"{key}={value!r}" for key, value in self.grid.as_dict().items()
        )
        if config_hash:
            header["config_hash"] = config_hash
        return header

    def l2_norm(self):
        total = float(np.sum(np.abs(self.field.values) ** 2))
        return math.sqrt(total * self.grid.cell_volume * self.grid.dt)

    def interior_maximum(self, domain):
        """max |f| sobre los nodos con |x| ≤ r."""
        if self.field.values.size == 0:
            return 0.0
        inside = self.grid.radius <= domain.r
        return float(np.abs(self.field.values[:, inside]).max())


def _accumulate(blocks, coefficients, grid):
    levels = sorted({int(level) for block in blocks for level in block.levels})
    position = {level: i for i, level in enumerate(levels)}
    accumulator = NeumaierAccumulator((len(levels),) + grid.shape)
    for block, coefficient in zip(blocks, coefficients):
        term = np.zeros((len(levels),) + grid.shape, dtype=np.complex128)
        rows = [position[int(level)] for level in block.levels]
        term[(rows,) + block.window] = coefficient * block.values
        accumulator.add(term)
    return np.asarray(levels, dtype=np.int64), accumulator.result()


def assemble_universal(
    family,
    J,
    L,
    grid,
    domain=None,
    weights: Optional[WeightScheme] = None,
    points_per_wavelength=10,
    cells=24,
    workers=1,
    c_mode="standard",
    kappa_mode="measured",
    K=MAX_ORDER,
):
    """
    Ensambla f = Σ_{j ≤ J} b_j Σ_{k ≤ L} c_k f_{j,τ_k} sobre ``grid``.

    Los paquetes se generan en paralelo con ``workers`` hilos; la reducción
    recorre j por fuera y k por dentro con compensación de Neumaier.

    Raises:
        InsufficientRays: si la familia tiene menos de J rayos.
        ResolutionError: si la malla no resuelve 2π/τ_L.
    """
    if L < 1:
        raise ValueError("L debe ser ≥ 1.")
    if J < 1 or J > len(family):
        raise InsufficientRays(requested=J, available=len(family))
    domain = domain or family.domain
    tau_top = math.exp(L)
    if not grid.resolves(tau_top, points_per_wavelength):
        logger.warning("dx=%.4g no resuelve τ_L=%.4g", grid.dx, tau_top)
        raise ResolutionError(
            dx=grid.dx, tau=tau_top, points_per_wavelength=points_per_wavelength
        )
    grid.validate(domain)
    if weights is None:
        weights = build_weights(
            family, J, L, domain, c_mode=c_mode, kappa_mode=kappa_mode
        )
    if weights.J < J or weights.L < L:
        raise ValueError("El esquema de pesos no cubre la truncación pedida.")

    profile = build_cutoff(grid.n)
    tasks = [
        (family[j], weights.taus[k - 1])
        for j in range(1, J + 1)
        for k in range(1, L + 1)
    ]

    def run(task):
        ray, tau = task
        return packet_contribution(
            ray, tau, grid, cells=cells, profile=profile, K=K
        )

    logger.info("Ensamblando %d paquetes con %d hilos", len(tasks), workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, tasks))
    else:
        blocks = [run(task) for task in tasks]

    coefficients = [
        weights.coefficient(j, k) for j in range(1, J + 1) for k in range(1, L + 1)
    ]
    levels, values = _accumulate(blocks, coefficients, grid)
    slab = FieldSlab(grid=grid, values=values, region="source", levels=levels)
    assembly = SourceAssembly(
        truncation=(J, L),
        field=slab,
        weights=weights,
        family=family.truncated(J),
        supports=[(family[j].anchor, family[j].delta) for j in range(1, J + 1)],
        blocks=blocks,
        order=K,
        cells=cells,
    )
    leak = assembly.interior_maximum(domain)
    if leak != 0.0:
        raise SupportViolation("La fuente no se anula en Ω.", leak=leak)
    logger.info("Fuente ensamblada: ‖f‖ = %.6e", assembly.l2_norm())
    return assembly


def single_packet(ray, tau, grid, cells=24):
    """Corte de fuente con un solo paquete f_{j,τ} (sin pesos)."""
    block = packet_contribution(ray, tau, grid, cells=cells)
    levels, values = _accumulate([block], [1.0], grid)
    return FieldSlab(grid=grid, values=values, region="source", levels=levels)


def ray_tail_norm(assembly, j):
    """‖c_L f_{j,τ_L}‖ = ‖Σ_{k≤L} c_k f_{j,τ_k} − Σ_{k≤L−1} c_k f_{j,τ_k}‖."""
    _, L = assembly.truncation
    block = assembly.blocks[(j - 1) * L + (L - 1)]
    return assembly.weights.c[L - 1] * block.norm(assembly.grid)


def write_assembly(assembly, directory, config_hash=None):
    """Escribe ``manifest.csv`` y ``source.wavf`` en ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = assembly.manifest_header(config_hash)
    manifest = write_manifest(assembly.family, directory / MANIFEST_NAME, header)
    extra = {"J": assembly.truncation[0], "L": assembly.truncation[1]}
    if config_hash:
        extra["config_hash"] = config_hash
    data = assembly.field.write(directory / FIELD_NAME, extra)
    logger.info("Fuente escrita en %s", directory)
    return manifest, data


def read_assembly(directory):
    directory = Path(directory)
    family, header = read_manifest(directory / MANIFEST_NAME)
    slab = FieldSlab.read(directory / FIELD_NAME)
    weights = WeightScheme.from_header(header)
    J, L = int(header["J"]), int(header["L"])
    return SourceAssembly(
        truncation=(J, L),
        field=slab,
        weights=weights,
        family=family,
        supports=[(ray.anchor, ray.delta) for ray in family.rays],
        order=int(header.get("K", MAX_ORDER)),
        cells=int(header.get("tube_cells", 24)),
    )


def grid_from_header(header):
    """GridSpec a partir de la línea ``grid`` del manifiesto."""
    pairs = dict(item.split("=", 1) for item in header["grid"].split())
    return GridSpec.from_dict(pairs)
