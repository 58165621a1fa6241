"""
Binary field format ``WAVF``.

Layout (all little-endian)::

    b"WAVF" | version u32 = 1 | ndim u8 | dims u64 * ndim | float64 samples

Samples are written in row-major order, time axis first. Complex arrays are
stored with an extra trailing axis of length 2 (real, imaginary); the JSON
sidecar written next to the file records that flag together with the grid
metadata and the config hash.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from core.exceptions import ArtifactError

logger = logging.getLogger(__name__)

MAGIC = b"WAVF"
VERSION = 1
_HEADER = struct.Struct("<4sIB")


def encode(array):
    """Serializa un arreglo real de float64 al formato WAVF."""
    data = np.ascontiguousarray(array, dtype="<f8")
    if data.ndim > 255:
        raise ArtifactError("Demasiadas dimensiones para WAVF.", ndim=data.ndim)
    header = _HEADER.pack(MAGIC, VERSION, data.ndim)
    dims = struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + dims + data.tobytes(order="C")


def decode(payload):
    if len(payload) < _HEADER.size:
        raise ArtifactError("Archivo WAVF truncado en la cabecera.")
    magic, version, ndim = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise ArtifactError("Firma WAVF inválida.", magic=magic)
    if version != VERSION:
        raise ArtifactError("Versión WAVF no soportada.", version=version)
    offset = _HEADER.size
    shape = struct.unpack_from(f"<{ndim}Q", payload, offset)
    offset += 8 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = offset + 8 * count
    if len(payload) != expected:
        raise ArtifactError(
            "Tamaño de datos WAVF inconsistente.", expected=expected, found=len(payload)
        )
    samples = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    return samples.reshape(shape).astype(np.float64)


def write_field(path, values, metadata=None):
    """
    Escribe un campo (real o complejo) y su archivo lateral JSON.

    Args:
        path: ruta del archivo ``.wavf``.
        values: arreglo de muestras, eje de tiempo primero.
        metadata: diccionario serializable (malla, hash de configuración).

    Returns:
        La ruta escrita.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    is_complex = np.iscomplexobj(values)
    if is_complex:
        values = np.stack([values.real, values.imag], axis=-1)
    path.write_bytes(encode(values))
    sidecar = dict(metadata or {})
    sidecar["complex"] = is_complex
    sidecar_path(path).write_text(
        json.dumps(sidecar, sort_keys=True, indent=2, default=_json_default) + "\n",
        encoding="utf-8",
    )
    logger.debug("Campo WAVF escrito en %s con forma %s", path, values.shape)
    return path


def read_field(path):
    """
    Lee un campo WAVF y su archivo lateral.

    Returns:
        Tupla ``(values, metadata)``; ``values`` es complejo si así se escribió.
    """
    path = Path(path)
    if not path.exists():
        raise ArtifactError("No existe el archivo WAVF.", path=str(path))
    values = decode(path.read_bytes())
    meta_path = sidecar_path(path)
    metadata = (
        json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    )
    if metadata.get("complex"):
        if values.shape[-1] != 2:
            raise ArtifactError("Campo complejo sin eje final de longitud 2.")
        values = values[..., 0] + 1j * values[..., 1]
    return values, metadata


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Tipo no serializable: {type(value)!r}")
