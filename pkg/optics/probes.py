"""
Sondas de extracción 𝒲_{j,τ_N} = e^{−iτ_N(−t + ξ_j·x)} w_{j,N}.

w_{j,N} es el producto de χ con escala N/δ_j; como log τ_N = N coincide con
v^{(0)}_{j,τ_N}. La parte w̃ = η_j(□+V)w se separa en η_j□w, que no depende
de V, y η_jVw, que solo usan los diagnósticos internos.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from geometry.cutoff import build_cutoff, eta_jet
from optics.jets import ChiProduct


@dataclass
class ProbeSpec:
    ray: object
    N: int
    domain: object
    profile: object

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("El índice de sonda N debe ser ≥ 1.")
        self.product = ChiProduct(self.ray, self.profile, self.N / self.ray.delta)

    @property
    def tau(self):
        return math.exp(self.N)

    @property
    def tube_radius(self):
        return self.ray.delta / (2.0 * self.N)

    def phase(self, t, x):
        """e^{−iτ_N(−t + ξ_j·x)}."""
        phase = -np.asarray(t, dtype=float) + np.asarray(x, dtype=float) @ self.ray.xi
        return np.exp(-1j * self.tau * phase)

    def w(self, t, x):
        return self.product.value(t, x)

    def W(self, t, x):
        return self.phase(t, x) * self.w(t, x)

    def box_w(self, t, x):
        """□w_{j,N} con derivadas analíticas de χ."""
        return self.product.wave_operator(t, x)

    def spatial_gradient_W(self, t, x):
        """∇_x 𝒲 = e^{−iτφ}(∇w − iτ ξ w)."""
        value, grad, _ = self.product.jet(t, x)
        inner = grad[..., 1:] - 1j * self.tau * value[..., None] * self.ray.xi
        return self.phase(t, x)[..., None] * inner

    def eta(self, x):
        return eta_jet(self.ray, self.domain, x)

    def w_tilde_free(self, t, x):
        """η_j□w: la parte de w̃ independiente del potencial."""
        return self.eta(x)[0] * self.box_w(t, x)

    def w_tilde_potential(self, V, t, x):
        """η_jVw: solo para diagnósticos."""
        if V is None or V.is_zero:
            return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))
        return self.eta(x)[0] * V(t, x) * self.w(t, x)

    def w_tilde(self, V, t, x):
        return self.w_tilde_free(t, x) + self.w_tilde_potential(V, t, x)


def build_probe(ray, N, domain, profile=None):
    profile = profile or build_cutoff(ray.n)
    return ProbeSpec(ray=ray, N=N, domain=domain, profile=profile)


def probe_eval(ray, N, V, t, x, domain, profile=None):
    """
    Returns:
        Tupla ``(W, w, w̃)`` en los puntos (t, x).
    """
    probe = build_probe(ray, N, domain, profile)
    return probe.W(t, x), probe.w(t, x), probe.w_tilde(V, t, x)
