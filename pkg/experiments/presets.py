"""
Configuraciones de referencia del laboratorio.
"""

import copy

DEMO = {
    "domain": {"n": 2, "r": 1.0, "r_tilde": 1.3, "T": 2.5},
    "grid": {"points_per_wavelength": 10, "cfl": 0.9, "order": 2},
    "truncation": {"J": 2, "L": 3, "N_list": [2, 3]},
    "potential": [
        {
            "center": [1.25, 0.2, 0.0],
            "radii": [0.35, 0.3],
            "amplitude": 2.0,
            "exponent": 5,
        }
    ],
    "rays": {"seed_density": [16, 3]},
    "weights": {"c_mode": "standard", "kappa_mode": "formula"},
    "extraction": {"K": 2, "cells": 8, "diagnostics": True},
    "inversion": {
        "ray_count": 100,
        "seed_density": [16, 7],
        "time_cells": 8,
        "space_cells": 8,
        "lambdas": [1e-4, 1e-3, 1e-2],
    },
    "mode": "pde",
}

NULL = copy.deepcopy(DEMO)
NULL["potential"] = []

PRESETS = {
    "demo": DEMO,
    "null": NULL,
}


def preset(name):
    """Copia independiente del preset ``name``."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ValueError(f"Preset desconocido: {name!r}") from None
