"""
Transformada de rayos de luz: integrales de V a lo largo de γ(s) = γ(0) + s(1, ξ)
respecto de la longitud de arco, ∫ V(γ(s)) √2 ds.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import quad, simpson

from core.exceptions import ArtifactError
from geometry.rays import enumerate_rays, spread_selection

logger = logging.getLogger(__name__)

ARC_FACTOR = math.sqrt(2.0)
STEP_FRACTION = 1.0 / 32.0
MIN_PANELS = 2048
PROVENANCES = ("extraction", "oracle")


@dataclass(frozen=True, eq=False)
class FreeRay:
    """Rayo de luz dado por tiempo de entrada, punto de entrada y dirección."""

    t0: float
    p_entry: np.ndarray
    xi: np.ndarray
    index: Optional[int] = None

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        norm = float(np.linalg.norm(xi))
        if not math.isclose(norm, 1.0, rel_tol=1e-9):
            raise ValueError("La dirección ξ debe ser unitaria.")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "p_entry", np.asarray(self.p_entry, dtype=float))

    @property
    def n(self):
        return self.xi.size

    @property
    def origin(self):
        return np.concatenate([[self.t0], self.p_entry])

    @property
    def direction(self):
        return np.concatenate([[1.0], self.xi])

    def point(self, s):
        s = np.asarray(s, dtype=float)
        return self.t0 + s, self.p_entry + s[..., None] * self.xi


def as_free_ray(ray):
    if isinstance(ray, FreeRay):
        return ray
    return FreeRay(t0=ray.t0, p_entry=ray.p_entry, xi=ray.xi, index=ray.index)


@dataclass
class RaySample:
    ray: object
    value: float
    provenance: str = "oracle"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"Procedencia desconocida: {self.provenance!r}")
        if not math.isfinite(self.value):
            raise ValueError("El valor de la muestra debe ser finito.")


def bump_interval(bump, ray):
    """Intervalo de s donde γ(s) está en el soporte del bulto, o ``None``."""
    rho_t, rho_x = bump.radii
    dt0 = ray.t0 - bump.t0
    dx0 = ray.p_entry - bump.x0
    a = 1.0 / rho_t**2 + float(np.dot(ray.xi, ray.xi)) / rho_x**2
    b = 2.0 * (dt0 / rho_t**2 + float(np.dot(dx0, ray.xi)) / rho_x**2)
    c = dt0**2 / rho_t**2 + float(np.dot(dx0, dx0)) / rho_x**2 - 1.0
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        return None
    root = math.sqrt(disc)
    return (-b - root) / (2.0 * a), (-b + root) / (2.0 * a)


def _along(bump, ray):
    def integrand(s):
        t, x = ray.point(s)
        return bump.evaluate(t, x)

    return integrand


def ray_integral_oracle(V, ray, step_fraction=STEP_FRACTION):
    """
    ∫ V(γ(s)) √2 ds por Simpson compuesto, bulto a bulto, sobre el tramo de
    la recta que corta su soporte; paso ≤ radio mínimo · ``step_fraction``.
    """
    if V is None or V.is_zero:
        return 0.0
    parts = []
    for bump in V.bumps:
        interval = bump_interval(bump, ray)
        if interval is None:
            continue
        length = interval[1] - interval[0]
        step = min(bump.radii) * step_fraction
        panels = max(int(math.ceil(length / step)), MIN_PANELS)
        panels += panels % 2
        s = np.linspace(interval[0], interval[1], panels + 1)
        parts.append(float(simpson(_along(bump, ray)(s), x=s)))
    return ARC_FACTOR * math.fsum(parts)


def ray_integral_adaptive(V, ray, epsrel=1e-12):
    """Segundo oráculo: Gauss–Kronrod adaptativo de ``scipy.integrate.quad``."""
    if V is None or V.is_zero:
        return 0.0
    parts = []
    for bump in V.bumps:
        interval = bump_interval(bump, ray)
        if interval is None:
            continue
        value, _ = quad(
            lambda s, b=bump: float(_along(b, ray)(s)),
            interval[0],
            interval[1],
            epsabs=0.0,
            epsrel=epsrel,
            limit=200,
        )
        parts.append(value)
    return ARC_FACTOR * math.fsum(parts)


def chord_interval(domain, ray):
    """Parámetros s con |x(s)| < r y 0 < t(s) < T, o ``None``."""
    b = float(np.dot(ray.p_entry, ray.xi))
    c = float(np.dot(ray.p_entry, ray.p_entry)) - domain.r**2
    disc = b * b - c
    if disc <= 0.0:
        return None
    root = math.sqrt(disc)
    start = max(-b - root, -ray.t0)
    stop = min(-b + root, domain.T - ray.t0)
    if stop <= start:
        return None
    return start, stop


def inversion_rays(domain, count, seed_density):
    """``count`` rayos admisibles repartidos sobre la enumeración completa."""
    family = enumerate_rays(domain, None, seed_density)
    rays = spread_selection(family, count)
    logger.info("%d rayos para la inversión de %d admisibles", len(rays), len(family))
    return rays


def oracle_samples(V, rays):
    return [RaySample(ray, ray_integral_oracle(V, ray), "oracle") for ray in rays]


def sample_columns(n):
    coords = range(1, n + 1)
    return (
        ["index", "t0"]
        + [f"p_entry_{k}" for k in coords]
        + [f"xi_{k}" for k in coords]
        + ["value", "provenance"]
    )


def write_samples(samples, path, config_hash=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = samples[0].ray.n if samples else 2
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if config_hash:
            handle.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(sample_columns(n))
        for sample in samples:
            ray = sample.ray
            writer.writerow(
                [ray.index if ray.index is not None else "", repr(float(ray.t0))]
                + [repr(float(v)) for v in ray.p_entry]
                + [repr(float(v)) for v in ray.xi]
                + [repr(float(sample.value)), sample.provenance]
            )
    return path


def read_samples(path):
    samples = []
    with open(path, newline="", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
        reader = csv.DictReader(lines)
        n = sum(1 for name in reader.fieldnames or () if name.startswith("xi_"))
        for row in reader:
            try:
                ray = FreeRay(
                    t0=float(row["t0"]),
                    p_entry=[float(row[f"p_entry_{k}"]) for k in range(1, n + 1)],
                    xi=[float(row[f"xi_{k}"]) for k in range(1, n + 1)],
                    index=int(row["index"]) if row["index"] else None,
                )
                samples.append(
                    RaySample(ray, float(row["value"]), row["provenance"])
                )
            except (KeyError, ValueError) as exc:
                raise ArtifactError(
                    "CSV de muestras mal formado.", path=str(path)
                ) from exc
    return samples
