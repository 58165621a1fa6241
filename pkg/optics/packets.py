"""
Paquetes de ondas de óptica geométrica

    𝒰_{j,τ} = e^{iτ(−t + ξ_j·x)} Σ_{k ≤ K} τ^{−k} v^{(k)}_{j,τ}

con amplitudes resueltas por ecuaciones de transporte sobre una malla local
adaptada al rayo (ver ``optics.frames``).

Con g^{(k)} = (□+V)v^{(k)} se cumple ∂_s v^{(k)} = g^{(k−1)}/(2i),
v^{(k)}|_{s=0} = 0 y (□+V)𝒰 = τ^{−K} e^{iτφ} g^{(K)}.

Cada amplitud se separa en una parte libre (la de V ≡ 0), que es un
polinomio en s por productos de derivadas de χ y se evalúa en forma cerrada,
y una parte debida al potencial, que se integra con Simpson compuesto a lo
largo de s y se deriva con diferencias centradas de cuarto orden.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from core.numerics import compensated_sum
from geometry.cutoff import build_cutoff
from optics.frames import PAD_CELLS, build_local_grid, difference
from optics.jets import ChiProduct

logger = logging.getLogger(__name__)

MAX_ORDER = 2

# Términos (coeficiente, potencia de s, derivadas en w, potencia de Δ_y) de
# las partes libres: v⁰ = A·L_0·T_0 con L_a = ∂_w^a χ(2λw), T_m = Δ_y^m Πχ(λy).
FREE_AMPLITUDES = {
    0: [(1.0, 0, 0, 0)],
    1: [(-1.0 / 2j, 1, 0, 1)],
    2: [(-0.25, 1, 1, 1), (-0.125, 2, 0, 2)],
}
FREE_FORCING = {
    0: [(-1.0, 0, 0, 1)],
    1: [(1.0 / 2j, 0, 1, 1), (1.0 / 2j, 1, 0, 2)],
    2: [(0.25, 0, 2, 1), (0.5, 1, 1, 2), (0.125, 2, 0, 3)],
}


def _check_tau(tau):
    if tau < math.e * (1.0 - 1e-12):
        raise ValueError(f"Se requiere τ ≥ e (τ={tau}).")


def eval_phase(ray, tau, t, x):
    """e^{iτ(−t + ξ_j·x)}."""
    phase = -np.asarray(t, dtype=float) + np.asarray(x, dtype=float) @ ray.xi
    return np.exp(1j * tau * phase)


def amplitude_scale(ray, tau):
    """λ = log τ / δ_j."""
    return math.log(tau) / ray.delta


def leading_amplitude(ray, tau, profile=None):
    _check_tau(tau)
    profile = profile or build_cutoff(ray.n)
    return ChiProduct(ray, profile, amplitude_scale(ray, tau))


def amplitude0(ray, tau, t, x, d=0, profile=None):
    """
    Amplitud principal v^{(0)}_{j,τ} y sus derivadas exactas.

    Args:
        d: 0 (valor), 1 (gradiente en (t, x)) o 2 (hessiano).
    """
    return leading_amplitude(ray, tau, profile).derivative(t, x, d)


def transport_residual(ray, tau, t, x, profile=None):
    """∂_t v^{(0)} + ξ_j·∇v^{(0)} con derivadas analíticas."""
    return leading_amplitude(ray, tau, profile).transport(t, x)


class ClosedForm:
    """
    Evaluador en la malla local de sumas A·Σ c·s^p·L_a·T_m y sus derivadas.
    """

    def __init__(self, grid, profile, scale):
        self.grid = grid
        self.profile = profile
        self.scale = scale
        self.amplitude = scale ** (grid.ray.n / 2.0)
        self._long: Dict[int, np.ndarray] = {}
        self._trans: Dict[tuple, np.ndarray] = {}

    def longitudinal(self, a):
        if a not in self._long:
            w = self.grid.mesh()[1]
            scale = 2.0 * self.scale
            self._long[a] = scale**a * self.profile(scale * w, a)
        return self._long[a]

    def transverse(self, m, extra=None):
        """Δ_y^m Π_k χ(λy_k), con una derivada adicional en y_extra."""
        key = (m, extra)
        if key not in self._trans:
            ys = self.grid.mesh()[2:]
            total = np.zeros(self.grid.shape)
            for alpha in _compositions(m, len(ys)):
                weight = math.factorial(m)
                term = np.ones(self.grid.shape)
                for k, (order, y) in enumerate(zip(alpha, ys)):
                    weight //= math.factorial(order)
                    d = 2 * order + (1 if k == extra else 0)
                    term = term * self.scale**d * self.profile(self.scale * y, d)
                total = total + weight * term
            self._trans[key] = total
        return self._trans[key]

    def evaluate(self, terms, ds=0, dw=0, dy=None):
        """
        Suma de ``terms`` con ``ds`` derivadas en s (0 o 1), ``dw`` en w y
        una derivada opcional en y_dy.
        """
        s = self.grid.mesh()[0]
        total = np.zeros(self.grid.shape, dtype=complex)
        for coeff, p, a, m in terms:
            if ds and p == 0:
                continue
            power = p * s ** (p - 1) if ds else s**p
            longitudinal = self.longitudinal(a + dw)
            total = total + coeff * power * longitudinal * self.transverse(m, dy)
        return self.amplitude * total


def _compositions(total, parts):
    for combo in itertools.product(range(total + 1), repeat=parts):
        if sum(combo) == total:
            yield combo


@dataclass
class PacketStack:
    """
    Amplitudes v^{(0..K)} y fuerzas g^{(0..K)} sobre la malla local.

    ``potential_amps`` y ``potential_forcing`` guardan la parte debida a V;
    la parte libre se reevalúa con ``closed_form``.
    """

    ray: object
    tau: float
    order: int
    grid: object
    profile: object
    amps: List[np.ndarray]
    forcing: List[np.ndarray]
    potential_amps: List[np.ndarray]
    potential_forcing: List[np.ndarray]
    closed_form: object
    potential: Optional[object] = None
    settings: dict = field(default_factory=dict, repr=False)

    @property
    def scale(self):
        return amplitude_scale(self.ray, self.tau)

    @property
    def tube_radius(self):
        """δ_j / (2 log τ)."""
        return self.ray.delta / (2.0 * math.log(self.tau))

    def envelope(self):
        """Σ_k τ^{−k} v^{(k)} en los nodos."""
        total = np.zeros(self.grid.shape, dtype=complex)
        for k, amp in enumerate(self.amps):
            total = total + amp / self.tau**k
        return total

    def dw_amplitude(self, k):
        free = self.closed_form.evaluate(FREE_AMPLITUDES[k], dw=1)
        return free + difference(self.potential_amps[k], 1, self.grid.hw, 1)

    def dw_envelope(self):
        total = np.zeros(self.grid.shape, dtype=complex)
        for k in range(self.order + 1):
            total = total + self.dw_amplitude(k) / self.tau**k
        return total

    def ds_envelope(self):
        """∂_s de la envolvente con el transporte discreto consistente."""
        total = np.zeros(self.grid.shape, dtype=complex)
        for k in range(1, self.order + 1):
            total = total + self.forcing[k - 1] / (2j * self.tau**k)
        return total

    def values(self):
        """𝒰 en los nodos de la malla local."""
        return np.exp(1j * self.tau * self.grid.phase()) * self.envelope()

    def forcing_derivatives(self, k):
        """(∂_s g, ∂_w g, [∂_{y_l} g]) de g^{(k)}."""
        grid = self.grid
        terms = FREE_FORCING[k]
        part = self.potential_forcing[k]
        ds = self.closed_form.evaluate(terms, ds=1) + difference(part, 0, grid.hs, 1)
        dw = self.closed_form.evaluate(terms, dw=1) + difference(part, 1, grid.hw, 1)
        dy = [
            self.closed_form.evaluate(terms, dy=i) + difference(part, i + 2, h, 1)
            for i, h in enumerate(grid.hy)
        ]
        return ds, dw, dy


def _potential_fields(grid, V):
    if V is None or V.is_zero:
        return None, None
    t, x = grid.spacetime()
    value, grad, _ = V.jet(t, x, order=1)
    # ∂_w = −∂_t + ξ·∇
    dw = -grad[..., 0] + grad[..., 1:] @ grid.ray.xi
    return value, dw


def integrate_from_hyperplane(values, hs, zero_index):
    """
    ∫₀^s values ds̃ por Simpson compuesto acumulado en ambos sentidos.
    """
    result = np.zeros_like(values)
    forward = values[zero_index:]
    backward = values[: zero_index + 1][::-1]
    for part, step, target in (
        (forward, hs, slice(zero_index, None)),
        (backward, -hs, slice(None, zero_index + 1)),
    ):
        if part.shape[0] < 2:
            continue
        real = cumulative_simpson(part.real, dx=step, axis=0, initial=0.0)
        imag = cumulative_simpson(part.imag, dx=step, axis=0, initial=0.0)
        accumulated = real + 1j * imag
        if step < 0:
            accumulated = accumulated[::-1]
        result[target] = accumulated
    result[zero_index] = 0.0
    return result


def _laplacian_y(grid, values):
    total = np.zeros_like(values)
    for axis, h in enumerate(grid.hy, start=2):
        total = total + difference(values, axis, h, 2)
    return total


def _potential_parts(grid, closed, V, K, free_amps):
    """
    Partes debidas a V de v^{(k)} y g^{(k)}; ``None`` si V ≡ 0.
    """
    V_value, V_dw = _potential_fields(grid, V)
    if V_value is None:
        return None
    zero = grid.s_zero_index
    v0 = free_amps[0]
    amps = [np.zeros(grid.shape, dtype=complex)]
    forcing = [V_value * v0]
    # ∂_w(V v⁰) es analítica; las siguientes se derivan en la malla
    dw_previous = V_dw * v0 + V_value * closed.evaluate(FREE_AMPLITUDES[0], dw=1)
    for k in range(1, K + 1):
        if dw_previous is None:
            dw_previous = difference(forcing[-1], 1, grid.hw, 1)
        amp = integrate_from_hyperplane(forcing[-1], grid.hs, zero) / 2j
        full = free_amps[k] + amp
        forcing.append(-dw_previous / 2j - _laplacian_y(grid, amp) + V_value * full)
        amps.append(amp)
        dw_previous = None
    return amps, forcing


def solve_transport(
    ray,
    tau,
    K,
    V=None,
    horizon=None,
    s_range=None,
    s_step=0.01,
    cells=24,
    min_cells=8,
    profile=None,
):
    """
    Resuelve las ecuaciones de transporte hasta el orden K.

    Args:
        ray: RayDescriptor.
        tau: frecuencia τ ≥ e.
        K: orden 0, 1 o 2.
        V: PotentialSpec (``None`` equivale a V ≡ 0).
        horizon: tiempo final T; por defecto la salida del rayo más δ_j.
        s_range: intervalo de s a cubrir; por defecto el que corresponde a
            t ∈ (0, horizon).
        s_step: paso a lo largo del rayo.
        cells: celdas por semiancho del tubo en w e y.

    Returns:
        PacketStack con v^{(k)} = 0 en s = 0 para k ≥ 1.
    """
    if not 0 <= K <= MAX_ORDER:
        raise ValueError(f"El orden K debe estar entre 0 y {MAX_ORDER}.")
    _check_tau(tau)
    profile = profile or build_cutoff(ray.n)
    settings = dict(
        horizon=horizon,
        s_range=s_range,
        s_step=s_step,
        cells=cells,
        min_cells=min_cells,
    )
    scale = amplitude_scale(ray, tau)
    half_w = profile.support / (2.0 * scale)
    half_y = profile.support / scale
    if s_range is None:
        end = ray.exit_time() + ray.delta if horizon is None else horizon
        s_range = (-ray.anchor_t, end - ray.anchor_t)
    s_start, s_stop = min(s_range[0], 0.0), max(s_range[1], 0.0)
    hs = min(s_step, (s_stop - s_start) / 16.0)
    grid = build_local_grid(
        ray, half_w, half_y, s_start, s_stop, hs, cells, min_cells
    )
    closed = ClosedForm(grid, profile, scale)

    amps = [closed.evaluate(FREE_AMPLITUDES[k]) for k in range(K + 1)]
    forcing = [closed.evaluate(FREE_FORCING[k]) for k in range(K + 1)]
    parts = _potential_parts(grid, closed, V, K, amps)
    if parts is None:
        zeros = np.zeros(grid.shape, dtype=complex)
        parts = ([zeros] * (K + 1), [zeros] * (K + 1))
    else:
        amps = [free + part for free, part in zip(amps, parts[0])]
        forcing = [free + part for free, part in zip(forcing, parts[1])]
    logger.debug(
        "Paquete j=%s τ=%.4g K=%d en malla %s", ray.index, tau, K, grid.shape
    )
    return PacketStack(
        ray=ray,
        tau=float(tau),
        order=K,
        grid=grid,
        profile=profile,
        amps=amps,
        forcing=forcing,
        potential_amps=parts[0],
        potential_forcing=parts[1],
        closed_form=closed,
        potential=V,
        settings=settings,
    )


def packet_envelope(stack, t, x):
    """
    Σ_k τ^{−k} v^{(k)}(t, x): v⁰ analítica, v^{(k≥1)} interpoladas de la
    malla local.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    envelope = leading_amplitude(stack.ray, stack.tau, stack.profile).value(t, x)
    envelope = envelope.astype(complex)
    for k in range(1, stack.order + 1):
        correction = stack.grid.interpolate(stack.amps[k], t, x)
        envelope = envelope + correction / stack.tau**k
    return envelope


def packet_eval(stack, t, x):
    """𝒰_{j,τ}(t, x)."""
    return eval_phase(stack.ray, stack.tau, t, x) * packet_envelope(stack, t, x)


def _same_potential(first, second):
    if first is second:
        return True
    first_zero = first is None or first.is_zero
    second_zero = second is None or second.is_zero
    if first_zero or second_zero:
        return first_zero and second_zero
    return first == second


def with_potential(stack, V):
    """La misma pila recalculada con otro potencial, o ella misma."""
    if _same_potential(V, stack.potential):
        return stack
    logger.info("Pila del rayo %s recalculada con otro potencial", stack.ray.index)
    return solve_transport(
        stack.ray, stack.tau, stack.order, V, profile=stack.profile, **stack.settings
    )


def _region_mask(grid, domain):
    # las filas de relleno en s no tienen vecinos para las diferencias
    mask = np.zeros(grid.shape, dtype=bool)
    mask[PAD_CELLS:-PAD_CELLS] = True
    if domain is None:
        return mask
    t, x = grid.spacetime()
    radius = np.linalg.norm(x, axis=-1)
    return mask & (t > 0.0) & (t < domain.T) & (radius < domain.r_tilde)


def remainder_norm(stack, V=None, domain=None):
    """
    ‖(□+V)𝒰_{j,τ}‖_{H¹((0,T)×Ω̃)} con (□+V)𝒰 = τ^{−K} e^{iτφ} g^{(K)}.

    La identidad vale para cualquier orden K de la pila; la cota de
    decaimiento τ^{−1}(log τ)⁶ corresponde a K = 2. La derivada de la fase
    en w se aplica analíticamente: ∂_w(e^{iτφ}g) = e^{iτφ}(2iτ g + ∂_w g).
    Sin ``domain`` se integra sobre toda la malla local.
    """
    stack = with_potential(stack, V)
    grid = stack.grid
    k = stack.order
    g = stack.forcing[k]
    ds, dw, dy = stack.forcing_derivatives(k)
    dw = dw + 2j * stack.tau * g
    density = np.abs(g) ** 2 + 0.5 * (np.abs(ds) ** 2 + np.abs(dw) ** 2)
    for component in dy:
        density = density + np.abs(component) ** 2
    density = np.where(_region_mask(grid, domain), density, 0.0)
    total = compensated_sum(density) * grid.cell_volume
    return stack.tau ** (-k) * math.sqrt(total)


def remainder_identity_defect(stack, V=None, domain=None):
    """
    Defecto relativo ‖(□+V)𝒰 − τ^{−K}e^{iτφ}g^{(K)}‖ / ‖(□+V)𝒰‖ en L².

    (□+V)𝒰 se arma término a término como e^{iτφ}[(□+V)a − 2iτ ∂_s a], con
    ∂_s v^{(0)} por el residuo analítico de transporte y ∂_s v^{(k)} por el
    transporte discreto.
    """
    stack = with_potential(stack, V)
    grid = stack.grid
    tau = stack.tau
    t, x = grid.spacetime()
    residual0 = transport_residual(stack.ray, tau, t, x, stack.profile)
    applied = np.zeros(grid.shape, dtype=complex)
    for k in range(stack.order + 1):
        applied = applied + stack.forcing[k] / tau**k
    applied = applied - 2j * tau * (residual0 + stack.ds_envelope())
    expected = stack.forcing[stack.order] / tau**stack.order
    mask = _region_mask(grid, domain)
    defect = compensated_sum(np.where(mask, np.abs(applied - expected) ** 2, 0.0))
    reference = compensated_sum(np.where(mask, np.abs(applied) ** 2, 0.0))
    if reference == 0.0:
        return 0.0
    return math.sqrt(defect / reference)


def amplitude_norms(stack, domain=None):
    """‖v^{(k)}‖_{L²} sobre la malla local, k = 0..K."""
    grid = stack.grid
    mask = _region_mask(grid, domain)
    return [
        math.sqrt(
            compensated_sum(np.where(mask, np.abs(amp) ** 2, 0.0)) * grid.cell_volume
        )
        for amp in stack.amps
    ]
