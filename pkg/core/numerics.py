"""
Deterministic summation helpers and provenance hashing.
"""

import hashlib
import json
import math

import numpy as np


def compensated_sum(values):
    """
    Suma exacta (redondeo único) de un arreglo real o complejo.

    Usa ``math.fsum`` sobre las partes real e imaginaria por separado, de modo
    que el resultado no depende del orden de los elementos.
    """
    array = np.asarray(values).ravel()
    if np.iscomplexobj(array):
        return complex(math.fsum(array.real.tolist()), math.fsum(array.imag.tolist()))
    return math.fsum(array.tolist())


class NeumaierAccumulator:
    """
    Acumulador elemento a elemento con compensación de Neumaier.

    Se usa para sumar campos completos (fuentes por paquete) en un orden fijo
    sin perder los términos pequeños frente a los grandes.
    """

    def __init__(self, shape, dtype=np.complex128):
        self.total = np.zeros(shape, dtype=dtype)
        self.compensation = np.zeros(shape, dtype=dtype)
        self.terms = 0

    def add(self, values):
        values = np.asarray(values, dtype=self.total.dtype)
        candidate = self.total + values
        if np.iscomplexobj(candidate):
            self.compensation += _neumaier_correction(
                self.total.real, values.real, candidate.real
            ) + 1j * _neumaier_correction(self.total.imag, values.imag, candidate.imag)
        else:
            self.compensation += _neumaier_correction(self.total, values, candidate)
        self.total = candidate
        self.terms += 1
        return self

    def result(self):
        return self.total + self.compensation


def _neumaier_correction(total, values, candidate):
    big = np.abs(total) >= np.abs(values)
    return np.where(big, (total - candidate) + values, (values - candidate) + total)


def canonical_json(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(payload):
    """SHA-256 del JSON canónico de una configuración."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def file_digest(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()
