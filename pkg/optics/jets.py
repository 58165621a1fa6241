"""
Jets (valor, gradiente, hessiano) de productos de cortes χ sobre formas
afines del espacio-tiempo.

Tanto v^{(0)}_{j,τ} como w_{j,N} son de la forma

    A · χ(λ(s_j − t + (x − x_j)·ξ)) · Π_k χ(λ (x − x_j)·e_k)

con λ = log τ / δ_j o λ = N / δ_j respectivamente.
"""

from __future__ import annotations

import numpy as np


class ChiProduct:
    """
    Producto de χ evaluado con derivadas exactas en (t, x).

    Args:
        ray: RayDescriptor que fija ancla y marco.
        profile: CutoffProfile χ.
        scale: factor λ de las formas afines.
    """

    def __init__(self, ray, profile, scale):
        self.ray = ray
        self.profile = profile
        self.scale = float(scale)
        self.amplitude = self.scale ** (ray.n / 2.0)
        rows = [np.concatenate([[-1.0], ray.xi])]
        rows += [np.concatenate([[0.0], e]) for e in ray.frame]
        # gradientes constantes de las formas afines en (t, x)
        self.forms = self.scale * np.array(rows)
        self.offsets = -self.forms @ ray.anchor

    def arguments(self, t, x):
        points = np.concatenate(
            [np.asarray(t, dtype=float)[..., None], np.asarray(x, dtype=float)],
            axis=-1,
        )
        return points @ self.forms.T + self.offsets

    def value(self, t, x):
        z = self.arguments(t, x)
        return self.amplitude * np.prod(self.profile(z), axis=-1)

    def jet(self, t, x):
        """
        Returns:
            ``(value, grad, hess)`` con formas (...), (..., n+1), (..., n+1, n+1);
            el índice 0 es el tiempo.
        """
        z = self.arguments(t, x)
        f0 = self.profile(z, 0)
        f1 = self.profile(z, 1)
        f2 = self.profile(z, 2)
        m = z.shape[-1]
        a = self.forms
        value = np.prod(f0, axis=-1)
        grad = np.zeros(z.shape[:-1] + (a.shape[1],))
        hess = np.zeros(z.shape[:-1] + (a.shape[1], a.shape[1]))
        for i in range(m):
            others = _product_except(f0, (i,))
            grad += (f1[..., i] * others)[..., None] * a[i]
            hess += (f2[..., i] * others)[..., None, None] * np.outer(a[i], a[i])
            for k in range(m):
                if k == i:
                    continue
                rest = _product_except(f0, (i, k))
                coeff = f1[..., i] * f1[..., k] * rest
                hess += coeff[..., None, None] * np.outer(a[i], a[k])
        return self.amplitude * value, self.amplitude * grad, self.amplitude * hess

    def derivative(self, t, x, d=0):
        """Valor (d=0), gradiente (d=1) o hessiano (d=2)."""
        if d == 0:
            return self.value(t, x)
        if d not in (1, 2):
            raise ValueError("Solo se soportan derivadas hasta orden 2.")
        return self.jet(t, x)[d]

    def wave_operator(self, t, x):
        """□ = ∂_t² − Δ_x aplicado al producto."""
        _, _, hess = self.jet(t, x)
        return wave_from_hessian(hess)

    def transport(self, t, x):
        """∂_t + ξ·∇ aplicado al producto, sumando contribuciones por factor."""
        z = self.arguments(t, x)
        f0 = self.profile(z, 0)
        f1 = self.profile(z, 1)
        direction = self.ray.direction
        slopes = self.forms @ direction
        total = np.zeros(z.shape[:-1])
        for i in range(z.shape[-1]):
            total += slopes[i] * f1[..., i] * _product_except(f0, (i,))
        return self.amplitude * total


def wave_from_hessian(hess):
    return hess[..., 0, 0] - np.trace(hess[..., 1:, 1:], axis1=-2, axis2=-1)


def _product_except(factors, skip):
    keep = [i for i in range(factors.shape[-1]) if i not in skip]
    if not keep:
        return np.ones(factors.shape[:-1])
    return np.prod(factors[..., keep], axis=-1)
