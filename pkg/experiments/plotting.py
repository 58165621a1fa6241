"""
Gráficos PNG de los artefactos, dibujados con Pillow.
"""

import logging
import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

logger = logging.getLogger(__name__)

PLOT_SIZE = (480, 320)
MARGIN = 40
MIN_PIXELS = 256
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _save(image, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")
    logger.debug("Gráfico escrito en %s", path)
    return path


def field_image(values, path, size=MIN_PIXELS):
    """
    PNG en escala de grises de |values| (malla 2D, eje 0 = x₁), normalizado a
    su máximo; más oscuro es mayor amplitud. Los NaN se pintan como cero.
    """
    magnitude = np.nan_to_num(np.abs(np.asarray(values)), nan=0.0)
    peak = float(magnitude.max()) if magnitude.size else 0.0
    if peak > 0.0:
        magnitude = magnitude / peak
    pixels = np.uint8(np.round(255.0 * (1.0 - magnitude)))
    image = Image.fromarray(np.ascontiguousarray(pixels.T[::-1]))
    factor = max(1, math.ceil(size / max(image.size)))
    if factor > 1:
        width, height = image.size
        image = image.resize(
            (width * factor, height * factor), Image.Resampling.NEAREST
        )
    return _save(image, path)


def field_snapshot(slab, path, index=None):
    """
    Un nivel temporal de un FieldSlab; por defecto el de mayor amplitud.
    En n = 3 se dibuja el plano central del último eje.
    """
    if index is None:
        rows = np.abs(slab.values).reshape(slab.values.shape[0], -1)
        index = int(np.argmax(rows.max(axis=1))) if rows.size else -1
    frame = slab.dense(index)
    if frame.ndim == 3:
        frame = frame[:, :, frame.shape[2] // 2]
    return field_image(frame, path)


def _series(table):
    series = {}
    for j in table.rays():
        points = []
        for result in table.for_ray(j):
            error = result.rel_error
            value = abs(result.estimate) if error is None else error
            if value > 0.0 and math.isfinite(value):
                points.append((result.N, math.log10(value)))
        if points:
            series[j] = points
    return series


def error_curve(table, path, size=PLOT_SIZE):
    """
    log₁₀ del error relativo frente a N, una curva por rayo. Sin valor
    oráculo se dibuja |estimación|.
    """
    width, height = size
    image = Image.new("RGB", size, "white")
    draw = ImageDraw.Draw(image)
    bottom = height - MARGIN
    draw.line(
        [(MARGIN, MARGIN // 2), (MARGIN, bottom), (width - MARGIN // 2, bottom)],
        fill="black",
    )
    draw.text((width // 2, height - 16), "N", fill="black")
    series = _series(table)
    if series:
        Ns = [N for points in series.values() for N, _ in points]
        logs = [value for points in series.values() for _, value in points]
        n_lo, n_hi = min(Ns), max(Ns)
        if n_hi == n_lo:
            n_hi = n_lo + 1
        y_lo, y_hi = math.floor(min(logs)), math.ceil(max(logs))
        if y_hi == y_lo:
            y_hi = y_lo + 1
        span_x = width - 1.5 * MARGIN
        span_y = height - 1.5 * MARGIN

        def to_pixel(N, value):
            x = MARGIN + (N - n_lo) / (n_hi - n_lo) * span_x
            y = bottom - (value - y_lo) / (y_hi - y_lo) * span_y
            return x, y

        for position, (j, points) in enumerate(sorted(series.items())):
            color = COLORS[position % len(COLORS)]
            pixels = [to_pixel(N, value) for N, value in points]
            if len(pixels) > 1:
                draw.line(pixels, fill=color, width=2)
            for x, y in pixels:
                draw.ellipse([x - 3, y - 3, x + 3, y + 3], fill=color)
            label = (width - 2 * MARGIN, MARGIN // 2 + 12 * position)
            draw.text(label, f"j={j}", fill=color)
        for N in sorted(set(Ns)):
            x, _ = to_pixel(N, y_lo)
            draw.text((x - 3, bottom + 6), str(N), fill="black")
        draw.text((4, MARGIN // 2), f"1e{y_hi}", fill="black")
        draw.text((4, bottom - 10), f"1e{y_lo}", fill="black")
    return _save(image, path)
