"""
Familia densa de rayos de luz admisibles, anclas exteriores y radios δ_j.

Un rayo es la recta γ(s) = (t0 + s, p_entry + s ξ) con |ξ| = 1. Se recorren
los candidatos de 𝒯 × 𝒫 × 𝒫 en orden lexicográfico (tiempo, entrada, salida)
y se conservan los que cumplen las propiedades de admisibilidad.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from core.exceptions import GeometryError, InsufficientRays
from geometry.domain import DomainConfig

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


def orthonormal_frame(xi):
    """
    Completa ξ a una base ortonormal; devuelve los n−1 vectores e_{j,k}.

    En n = 2 el vector es la rotación de ξ por +90°; en general se usa
    Gram–Schmidt sobre la base canónica en orden fijo.
    """
    xi = np.asarray(xi, dtype=float)
    n = xi.size
    if n == 2:
        return np.array([[-xi[1], xi[0]]])
    basis = [xi]
    for axis in np.argsort(np.abs(xi), kind="stable"):
        candidate = np.zeros(n)
        candidate[axis] = 1.0
        for vector in basis:
            candidate = candidate - np.dot(candidate, vector) * vector
        norm = np.linalg.norm(candidate)
        if norm > 1e-8:
            candidate = candidate / norm
            # segunda pasada de Gram–Schmidt para llegar a 1e-16
            for vector in basis:
                candidate = candidate - np.dot(candidate, vector) * vector
            basis.append(candidate / np.linalg.norm(candidate))
        if len(basis) == n:
            break
    return np.array(basis[1:])


@dataclass(eq=False)
class RayDescriptor:
    """
    Rayo admisible γ_j con su ancla q_j = (s_j, x_j) = γ_j(ŝ_j), ŝ_j < 0.
    """

    index: int
    t0: float
    p_entry: np.ndarray
    p_exit: np.ndarray
    xi: np.ndarray
    s_hat: float
    anchor_x: np.ndarray
    delta: float
    frame: np.ndarray = field(default=None)
    chord_length: float = 0.0

    def __post_init__(self):
        self.p_entry = np.asarray(self.p_entry, dtype=float)
        self.p_exit = np.asarray(self.p_exit, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        self.anchor_x = np.asarray(self.anchor_x, dtype=float)
        if self.frame is None:
            self.frame = orthonormal_frame(self.xi)
        if not self.chord_length:
            self.chord_length = float(np.linalg.norm(self.p_exit - self.p_entry))

    @property
    def n(self):
        return self.xi.size

    @property
    def anchor_t(self):
        """s_j, tiempo del ancla."""
        return self.t0 + self.s_hat

    @property
    def anchor(self):
        return np.concatenate([[self.anchor_t], self.anchor_x])

    @property
    def origin(self):
        """γ(0) como punto del espacio-tiempo."""
        return np.concatenate([[self.t0], self.p_entry])

    @property
    def direction(self):
        """Dirección (1, ξ) del rayo en el espacio-tiempo."""
        return np.concatenate([[1.0], self.xi])

    def point(self, s):
        """Devuelve (t, x) de γ(s) para un arreglo de parámetros ``s``."""
        s = np.asarray(s, dtype=float)
        return self.t0 + s, self.p_entry + s[..., None] * self.xi

    def exit_time(self):
        return self.t0 + self.chord_length


@dataclass
class RayFamily:
    domain: DomainConfig
    rays: List[RayDescriptor]
    boundary_samples: np.ndarray
    time_samples: np.ndarray
    seed_density: Tuple[int, int] = (0, 0)

    def __len__(self):
        return len(self.rays)

    def __getitem__(self, j):
        """Acceso por índice del rayo (desde 1)."""
        return self.rays[j - 1]

    def truncated(self, count):
        if count > len(self.rays):
            raise InsufficientRays(requested=count, available=len(self.rays))
        return RayFamily(
            domain=self.domain,
            rays=self.rays[:count],
            boundary_samples=self.boundary_samples,
            time_samples=self.time_samples,
            seed_density=self.seed_density,
        )


def boundary_points(domain, count):
    """𝒫: ángulos equiespaciados (n = 2) o puntos de Fibonacci (n = 3)."""
    if count < 2:
        raise GeometryError("Se necesitan al menos dos puntos de frontera.")
    if domain.n == 2:
        angles = 2.0 * math.pi * np.arange(count) / count
        return domain.r * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    k = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / count)
    azimuth = math.pi * (1.0 + math.sqrt(5.0)) * k
    return domain.r * np.stack(
        [
            np.cos(azimuth) * np.sin(polar),
            np.sin(azimuth) * np.sin(polar),
            np.cos(polar),
        ],
        axis=-1,
    )


def time_points(domain, count):
    """𝒯: malla uniforme de tiempos en (0, T)."""
    if count < 1:
        raise GeometryError("Se necesita al menos un tiempo semilla.")
    return domain.T * np.arange(1, count + 1) / (count + 1)


def admissibility_margin(domain, t0, p_entry, xi, samples):
    """
    Margen de admisibilidad de un rayo candidato.

    Evalúa φ₊ = min(t − d₊, T − d₊ − t), d₊ = max(r − |x|, 0), en ``samples``
    parámetros que cubren todos los puntos con |x| ≤ r + δ_cap. φ₊ es
    √2-Lipschitz, por lo que el tubo de radio (min φ₊ − h)/√2 dentro de Ω
    queda en 𝒟.
    """
    delta_cap = 0.5 * (domain.r_tilde - domain.r)
    reach = domain.r + delta_cap
    b = float(np.dot(p_entry, xi))
    disc = b * b - (float(np.dot(p_entry, p_entry)) - reach * reach)
    root = math.sqrt(max(disc, 0.0))
    s = np.linspace(-b - root, -b + root, samples)
    h = s[1] - s[0]
    t = t0 + s
    x = p_entry + s[:, None] * xi
    depth = np.maximum(domain.r - np.linalg.norm(x, axis=-1), 0.0)
    phi = np.minimum(t - depth, domain.T - depth - t)
    return (float(phi.min()) - h) / SQRT2


def find_anchor(domain, t0, p_entry, xi, delta, step_fraction=0.25):
    """
    Busca hacia atrás (ŝ = −m·δ·step) el primer ancla cuya bola de radio δ
    cabe en (0,T) × (Ω̃ ∖ Ω̄). Devuelve ŝ o ``None``.
    """
    step = step_fraction * delta
    # t_q − δ ≤ 0 termina la búsqueda
    last = int(math.floor((t0 - delta) / step)) + 1
    if last < 1:
        return None
    s_hat = -step * np.arange(1, last + 1)
    t_q = t0 + s_hat
    radius = np.linalg.norm(p_entry + s_hat[:, None] * xi, axis=-1)
    stop = (t_q - delta <= 0.0) | (radius + delta >= domain.r_tilde)
    ok = (t_q + delta < domain.T) & (radius - delta > domain.r) & ~stop
    first_ok = int(np.argmax(ok)) if ok.any() else None
    if first_ok is None:
        return None
    if stop.any() and int(np.argmax(stop)) < first_ok:
        return None
    return float(s_hat[first_ok])


def enumerate_rays(
    domain,
    count,
    seed_density,
    chord_samples=256,
    anchor_step=0.25,
    delta_min=1e-6,
    delta_shrink=0.8,
):
    """
    Enumera los primeros ``count`` rayos admisibles.

    Args:
        domain: DomainConfig.
        count: número J de rayos; ``None`` devuelve todos los admisibles.
        seed_density: tupla (#puntos de frontera, #tiempos).
        chord_samples: muestras del parámetro para el margen (≥ 64).
        anchor_step: fracción de δ_j usada como paso de búsqueda del ancla.
        delta_min: radio mínimo aceptado; rayos con δ menor se descartan.

    Returns:
        RayFamily con δ_1 > δ_2 > … estrictamente.
    """
    if domain.T <= 2.0 * domain.r:
        raise GeometryError("Se requiere T > 2r.", T=domain.T, r=domain.r)
    if count is not None and count < 1:
        raise ValueError("J debe ser al menos 1.")
    if chord_samples < 64:
        raise ValueError("Se requieren al menos 64 muestras de cuerda.")
    n_boundary, n_times = seed_density
    points = boundary_points(domain, n_boundary)
    times = time_points(domain, n_times)
    delta_cap = 0.5 * (domain.r_tilde - domain.r)

    rays = []
    rejected = 0
    for t0 in times:
        for entry_index, p_entry in enumerate(points):
            for exit_index, p_exit in enumerate(points):
                if exit_index == entry_index:
                    continue
                chord = p_exit - p_entry
                length = float(np.linalg.norm(chord))
                if length <= 1e-12:
                    continue
                xi = chord / length
                j = len(rays) + 1
                ray = _admit(
                    domain,
                    j,
                    float(t0),
                    p_entry,
                    p_exit,
                    xi,
                    previous=rays[-1].delta if rays else None,
                    delta_cap=delta_cap,
                    samples=chord_samples,
                    anchor_step=anchor_step,
                    delta_min=delta_min,
                    delta_shrink=delta_shrink,
                )
                if ray is None:
                    rejected += 1
                    continue
                rays.append(ray)
                if count is not None and len(rays) == count:
                    logger.info(
                        "Familia de %d rayos construida (%d candidatos descartados)",
                        len(rays),
                        rejected,
                    )
                    return RayFamily(domain, rays, points, times, tuple(seed_density))
    if count is not None:
        logger.warning(
            "Solo %d rayos admisibles para densidad %s", len(rays), seed_density
        )
        raise InsufficientRays(
            requested=count, available=len(rays), seed_density=tuple(seed_density)
        )
    logger.info("Familia completa de %d rayos admisibles", len(rays))
    return RayFamily(domain, rays, points, times, tuple(seed_density))


def _admit(
    domain,
    j,
    t0,
    p_entry,
    p_exit,
    xi,
    previous,
    delta_cap,
    samples,
    anchor_step,
    delta_min,
    delta_shrink,
):
    margin = admissibility_margin(domain, t0, p_entry, xi, samples)
    if margin <= delta_min:
        return None
    delta = min(margin, delta_cap)
    if previous is not None:
        delta = min(delta, previous * (1.0 - 1.0 / (j + 1)))
    while delta >= delta_min:
        s_hat = find_anchor(domain, t0, p_entry, xi, delta, anchor_step)
        if s_hat is not None:
            return RayDescriptor(
                index=j,
                t0=t0,
                p_entry=p_entry.copy(),
                p_exit=p_exit.copy(),
                xi=xi,
                s_hat=s_hat,
                anchor_x=p_entry + s_hat * xi,
                delta=delta,
            )
        delta *= delta_shrink
    return None


def spread_selection(family, count):
    """
    Selecciona ``count`` rayos equiespaciados en el orden de la familia.
    """
    total = len(family)
    if count > total:
        raise InsufficientRays(requested=count, available=total)
    indices = np.unique(np.round(np.linspace(0, total - 1, count)).astype(int))
    return [family.rays[i] for i in indices]


def random_ray(domain, rng, chord_samples=256, anchor_step=0.25, attempts=1000):
    """
    Rayo admisible con t0 y extremos de cuerda aleatorios, fuera de cualquier
    enumeración.

    Raises:
        GeometryError: si ningún candidato de ``attempts`` es admisible.
    """
    delta_cap = 0.5 * (domain.r_tilde - domain.r)
    for _ in range(attempts):
        ends = rng.normal(size=(2, domain.n))
        ends = domain.r * ends / np.linalg.norm(ends, axis=1)[:, None]
        chord = ends[1] - ends[0]
        length = float(np.linalg.norm(chord))
        if length <= 1e-12:
            continue
        ray = _admit(
            domain,
            0,
            float(rng.uniform(0.0, domain.T)),
            ends[0],
            ends[1],
            chord / length,
            previous=None,
            delta_cap=delta_cap,
            samples=chord_samples,
            anchor_step=anchor_step,
            delta_min=1e-6,
            delta_shrink=0.8,
        )
        if ray is not None:
            return ray
    raise GeometryError(
        "No se encontró un rayo admisible aleatorio.", attempts=attempts
    )


def line_distance(ray_a, ray_b):
    """θ: distancia ínfima entre las rectas espaciales de dos rayos."""
    return _line_distance(ray_a.p_entry, ray_a.xi, ray_b.p_entry, ray_b.xi)


def _line_distance(origin_a, dir_a, origin_b, dir_b):
    system = np.stack([dir_a, -dir_b], axis=1)
    rhs = origin_b - origin_a
    coeffs, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    gap = origin_a + coeffs[0] * dir_a - origin_b - coeffs[1] * dir_b
    return float(np.linalg.norm(gap))


def density_proxy(family, ray):
    """
    min_j (|ξ_j − ξ| + |γ_j(0) − γ(0)|) para un rayo externo a la familia.
    """
    best = math.inf
    for member in family.rays:
        gap = np.linalg.norm(member.xi - ray.xi) + np.linalg.norm(
            member.origin - ray.origin
        )
        best = min(best, float(gap))
    return best


MANIFEST_PREFIX = "# "


def manifest_columns(n):
    coords = range(1, n + 1)
    return (
        ["j", "t0"]
        + [f"p_entry_{k}" for k in coords]
        + [f"p_exit_{k}" for k in coords]
        + [f"xi_{k}" for k in coords]
        + ["s_j"]
        + [f"x_j_{k}" for k in coords]
        + ["delta_j"]
    )


def write_manifest(family, path, header=None):
    """
    Escribe el manifiesto CSV de la familia con cabecera de comentarios.

    Args:
        family: RayFamily.
        path: ruta del CSV.
        header: pares clave/valor adicionales (hash de configuración, pesos).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(family.domain.as_dict())
    meta["seed_density"] = "x".join(str(v) for v in family.seed_density)
    meta.update(header or {})
    with open(path, "w", newline="", encoding="utf-8") as handle:
        for key in sorted(meta):
            handle.write(f"{MANIFEST_PREFIX}{key}: {meta[key]}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(manifest_columns(family.domain.n))
        for ray in family.rays:
            writer.writerow(
                [ray.index, repr(float(ray.t0))]
                + [repr(float(v)) for v in ray.p_entry]
                + [repr(float(v)) for v in ray.p_exit]
                + [repr(float(v)) for v in ray.xi]
                + [repr(float(ray.anchor_t))]
                + [repr(float(v)) for v in ray.anchor_x]
                + [repr(float(ray.delta))]
            )
    return path


def read_manifest(path):
    """
    Lee un manifiesto escrito por :func:`write_manifest`.

    Returns:
        Tupla ``(family, header)`` con la familia reconstruida y el diccionario
        de comentarios de cabecera (valores como texto).
    """
    path = Path(path)
    header = {}
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        lines = []
        for line in handle:
            if line.startswith(MANIFEST_PREFIX):
                key, _, value = line[len(MANIFEST_PREFIX) :].partition(":")
                header[key.strip()] = value.strip()
            else:
                lines.append(line)
        rows = list(csv.DictReader(lines))
    domain = DomainConfig(
        n=int(header["n"]),
        r=float(header["r"]),
        r_tilde=float(header["r_tilde"]),
        T=float(header["T"]),
        box_halfwidth=float(header["box_halfwidth"]),
    )
    n = domain.n
    rays = []
    for row in rows:
        t0 = float(row["t0"])
        rays.append(
            RayDescriptor(
                index=int(row["j"]),
                t0=t0,
                p_entry=_row_vector(row, "p_entry", n),
                p_exit=_row_vector(row, "p_exit", n),
                xi=_row_vector(row, "xi", n),
                s_hat=float(row["s_j"]) - t0,
                anchor_x=_row_vector(row, "x_j", n),
                delta=float(row["delta_j"]),
            )
        )
    density = tuple(int(v) for v in header.get("seed_density", "0x0").split("x"))
    family = RayFamily(
        domain=domain,
        rays=rays,
        boundary_samples=np.empty((0, n)),
        time_samples=np.empty(0),
        seed_density=density,
    )
    return family, header


def _row_vector(row, name, n):
    return np.array([float(row[f"{name}_{k}"]) for k in range(1, n + 1)])


def tube_points(ray, domain, count, rng):
    """
    Puntos aleatorios del tubo de radio δ_j con t ∈ (0,T) y x ∈ Ω.

    Se muestrean desplazamientos ortogonales a (1, ξ) de longitud ≤ δ_j.
    """
    n = ray.n
    direction = ray.direction / SQRT2
    found: List[np.ndarray] = []
    while sum(len(chunk) for chunk in found) < count:
        s = rng.uniform(-ray.delta, ray.chord_length + ray.delta, size=4 * count)
        offsets = rng.normal(size=(4 * count, n + 1))
        offsets -= (offsets @ direction)[:, None] * direction
        offsets /= np.linalg.norm(offsets, axis=1)[:, None]
        radii = ray.delta * rng.uniform(0.0, 1.0, size=4 * count) ** (1.0 / n)
        base_t, base_x = ray.point(s)
        points = np.concatenate([base_t[:, None], base_x], axis=1)
        points = points + radii[:, None] * 0.999 * offsets
        keep = (
            (points[:, 0] > 0.0)
            & (points[:, 0] < domain.T)
            & (np.linalg.norm(points[:, 1:], axis=1) < domain.r)
        )
        found.append(points[keep])
    return np.concatenate(found)[:count]

