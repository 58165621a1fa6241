"""
Validación estricta de las configuraciones de experimentos.

Cada bloque del JSON tiene su serializador; las claves desconocidas se
rechazan en todos los niveles y las restricciones cruzadas de los módulos
numéricos se vuelven a comprobar al cargar.
"""

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from core.exceptions import GeometryError
from core.numerics import config_hash
from geometry.domain import DomainConfig
from optics.packets import MAX_ORDER
from solver.potential import PotentialSpec

logger = logging.getLogger(__name__)


def lab_default(key):
    return settings.LAB_DEFAULTS[key]


class StrictSerializer(serializers.Serializer):
    """
    Serializador base que rechaza claves no declaradas.
    """

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError(
                    {key: ["Clave desconocida."] for key in unknown}
                )
        return super().to_internal_value(data)


class DomainSerializer(StrictSerializer):
    n = serializers.ChoiceField(choices=[2, 3])
    r = serializers.FloatField(min_value=0.0)
    r_tilde = serializers.FloatField(min_value=0.0)
    T = serializers.FloatField(min_value=0.0)
    box_halfwidth = serializers.FloatField(required=False, allow_null=True)

    def validate(self, data):
        """Valida las relaciones entre radios y horizonte."""
        try:
            DomainConfig(**data)
        except GeometryError as exc:
            raise serializers.ValidationError(exc.message)
        return data


class GridSerializer(StrictSerializer):
    points_per_wavelength = serializers.IntegerField(min_value=2, required=False)
    cfl = serializers.FloatField(min_value=0.0, required=False)
    dx = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    order = serializers.ChoiceField(choices=[2, 4], default=2)

    def validate_cfl(self, value):
        """Valida que la CFL sea positiva."""
        if value <= 0.0:
            raise serializers.ValidationError("La CFL debe ser positiva.")
        return value

    def validate(self, data):
        data.setdefault("points_per_wavelength", lab_default("points_per_wavelength"))
        data.setdefault("cfl", lab_default("cfl"))
        return data


class TruncationSerializer(StrictSerializer):
    J = serializers.IntegerField(min_value=1)
    L = serializers.IntegerField(min_value=1)
    N_list = serializers.ListField(
        child=serializers.IntegerField(min_value=1), allow_empty=False
    )

    def validate(self, data):
        """Valida que las sondas estén dentro de la truncación."""
        N_list = data["N_list"]
        if any(N > data["L"] for N in N_list):
            raise serializers.ValidationError(
                "Cada N de N_list debe cumplir N ≤ L (la sonda usa τ_N = e^N)."
            )
        if list(N_list) != sorted(set(N_list)):
            raise serializers.ValidationError(
                "N_list debe ser estrictamente creciente."
            )
        return data


class BumpSerializer(StrictSerializer):
    center = serializers.ListField(child=serializers.FloatField(), min_length=3)
    radii = serializers.ListField(
        child=serializers.FloatField(), min_length=2, max_length=2
    )
    amplitude = serializers.FloatField()
    exponent = serializers.IntegerField(min_value=5, default=5)

    def validate_radii(self, value):
        """Valida que los radios sean positivos."""
        if min(value) <= 0.0:
            raise serializers.ValidationError("Los radios deben ser positivos.")
        return value


class RaysSerializer(StrictSerializer):
    seed_density = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2
    )
    chord_samples = serializers.IntegerField(min_value=64, required=False)
    anchor_step_fraction = serializers.FloatField(min_value=0.0, required=False)
    delta_min = serializers.FloatField(min_value=0.0, required=False)

    def validate(self, data):
        data.setdefault("chord_samples", lab_default("chord_samples"))
        data.setdefault("anchor_step_fraction", lab_default("anchor_step_fraction"))
        data.setdefault("delta_min", lab_default("delta_min"))
        return data


class WeightsSerializer(StrictSerializer):
    c_mode = serializers.ChoiceField(choices=["standard", "unit"], default="standard")
    kappa_mode = serializers.ChoiceField(
        choices=["measured", "formula"], default="measured"
    )


class ExtractionSerializer(StrictSerializer):
    K = serializers.IntegerField(min_value=0, max_value=MAX_ORDER, default=MAX_ORDER)
    cells = serializers.IntegerField(min_value=4, default=8)
    tube_cells = serializers.IntegerField(min_value=8, required=False)
    diagnostics = serializers.BooleanField(default=False)

    def validate(self, data):
        data.setdefault("tube_cells", lab_default("tube_cells"))
        return data


class InversionSerializer(StrictSerializer):
    ray_count = serializers.IntegerField(min_value=10)
    seed_density = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=2, max_length=2
    )
    time_cells = serializers.IntegerField(min_value=1)
    space_cells = serializers.IntegerField(min_value=1)
    lambdas = serializers.ListField(
        child=serializers.FloatField(min_value=0.0), allow_empty=False
    )
    selection = serializers.ChoiceField(
        choices=["truth", "discrepancy"], default="truth"
    )
    noise = serializers.FloatField(min_value=0.0, default=1e-3)
    maxiter = serializers.IntegerField(min_value=1, required=False)
    tol = serializers.FloatField(min_value=0.0, required=False)

    def validate_lambdas(self, value):
        """Valida que todos los λ sean positivos."""
        if min(value) <= 0.0:
            raise serializers.ValidationError("Cada λ debe ser positivo.")
        return value

    def validate(self, data):
        data.setdefault("maxiter", lab_default("cg_maxiter"))
        data.setdefault("tol", lab_default("cg_tol"))
        return data


class ExperimentConfigSerializer(StrictSerializer):
    """
    Serializador de la configuración completa de un experimento.
    """

    domain = DomainSerializer()
    grid = GridSerializer(required=False)
    truncation = TruncationSerializer()
    potential = BumpSerializer(many=True, required=False)
    rays = RaysSerializer()
    weights = WeightsSerializer(required=False)
    extraction = ExtractionSerializer(required=False)
    inversion = InversionSerializer(required=False)
    mode = serializers.ChoiceField(choices=["pde", "oracle"], default="pde")
    output = serializers.CharField(required=False, allow_null=True)

    def validate(self, data):
        """Validaciones a nivel de configuración."""
        domain = DomainConfig(**data["domain"])
        for key in ("grid", "weights", "extraction"):
            data.setdefault(key, self.fields[key].run_validation({}))
        data.setdefault("potential", [])
        for index, bump in enumerate(data["potential"]):
            if len(bump["center"]) != domain.n + 1:
                message = f"El centro del bulto {index} necesita n + 1 coordenadas."
                raise serializers.ValidationError({"potential": message})
        try:
            PotentialSpec.from_list(data["potential"]).validate_support(domain)
        except GeometryError as exc:
            raise serializers.ValidationError({"potential": str(exc)})
        return data

    def create(self, validated_data):
        return ExperimentConfig(plain(validated_data))


def plain(data):
    """Copia con ``dict`` y ``list`` nativos (para el hash canónico)."""
    return json.loads(json.dumps(data))


@dataclass
class ExperimentConfig:
    """Configuración validada con accesos a los objetos numéricos."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def hash(self):
        # la salida no influye en los artefactos
        payload = {key: value for key, value in self.data.items() if key != "output"}
        return config_hash(payload)

    @property
    def domain(self):
        return DomainConfig(**self.data["domain"])

    @property
    def potential(self):
        return PotentialSpec.from_list(self.data["potential"])

    @property
    def J(self):
        return self.data["truncation"]["J"]

    @property
    def L(self):
        return self.data["truncation"]["L"]

    @property
    def N_list(self):
        return list(self.data["truncation"]["N_list"])

    def with_overrides(self, **changes):
        """Nueva configuración validada con cambios de primer nivel."""
        data = dict(self.data)
        data.update(changes)
        return load_config(data=data)


def load_config(path=None, data=None):
    """
    Carga y valida una configuración desde ``path`` o desde ``data``.

    Raises:
        rest_framework.serializers.ValidationError: con los errores por campo.
    """
    if data is None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise serializers.ValidationError(
                f"No se pudo leer la configuración {path}: {exc}"
            )
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        logger.warning("Configuración rechazada: %s", serializer.errors)
        raise serializers.ValidationError(serializer.errors)
    return serializer.save()
