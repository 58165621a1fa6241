from pathlib import Path

from django.db import models

from core.models import BaseModel, TimeStampedModel
from core.numerics import file_digest


class ExperimentRun(BaseModel):
    """
    Modelo para cada invocación de una etapa del laboratorio.
    """

    STAGES = [
        ("rays", "Rayos"),
        ("source", "Fuente"),
        ("solve", "Solver"),
        ("extract", "Extracción"),
        ("invert", "Inversión"),
        ("verify", "Verificación"),
        ("demo", "Demostración"),
    ]

    MODES = [
        ("pde", "EDP"),
        ("oracle", "Oráculo"),
    ]

    STATUSES = [
        ("running", "En curso"),
        ("ok", "Correcta"),
        ("failed", "Fallida"),
    ]

    stage = models.CharField(
        max_length=20,
        choices=STAGES,
        verbose_name="Etapa",
        help_text="Subcomando ejecutado",
    )
    mode = models.CharField(
        max_length=10,
        choices=MODES,
        default="pde",
        verbose_name="Modo",
        help_text="Datos medidos por el solver o sustituidos por el oráculo",
    )
    status = models.CharField(
        max_length=10,
        choices=STATUSES,
        default="running",
        verbose_name="Estado",
    )
    exit_code = models.PositiveSmallIntegerField(
        null=True,
        blank=True,
        verbose_name="Código de salida",
    )
    output_dir = models.CharField(
        max_length=500,
        verbose_name="Directorio de salida",
    )
    workers = models.PositiveSmallIntegerField(
        default=1,
        verbose_name="Hilos",
    )
    summary = models.JSONField(
        default=dict,
        blank=True,
        verbose_name="Resumen",
        help_text="Números principales devueltos por la etapa",
    )
    error = models.TextField(
        blank=True,
        verbose_name="Error",
    )

    class Meta:
        verbose_name = "Corrida"
        verbose_name_plural = "Corridas"
        ordering = ["-created_at"]
        indexes = [
            models.Index(
                fields=["stage", "status"], name="experiments_stage_status_idx"
            ),
        ]

    def __str__(self):
        return f"{self.get_stage_display()} {self.short_hash} ({self.status})"

    def mark_ok(self, summary=None):
        self.status = "ok"
        self.exit_code = 0
        self.summary = summary or {}
        self.save(update_fields=["status", "exit_code", "summary", "updated_at"])

    def mark_failed(self, error, exit_code=1):
        self.status = "failed"
        self.exit_code = exit_code
        self.error = str(error)
        self.save(update_fields=["status", "exit_code", "error", "updated_at"])

    @property
    def artifacts_count(self):
        return self.artifacts.count()


class RunArtifact(TimeStampedModel):
    """
    Modelo para los archivos escritos por una corrida.
    """

    KINDS = [
        ("manifest", "Manifiesto de rayos"),
        ("field", "Campo WAVF"),
        ("sidecar", "Archivo lateral JSON"),
        ("table", "Tabla CSV"),
        ("plot", "Gráfico"),
    ]

    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name="artifacts",
        verbose_name="Corrida",
    )
    kind = models.CharField(
        max_length=20,
        choices=KINDS,
        verbose_name="Tipo",
    )
    path = models.CharField(
        max_length=500,
        verbose_name="Ruta",
    )
    digest = models.CharField(
        max_length=64,
        verbose_name="SHA-256",
    )
    size = models.PositiveBigIntegerField(
        default=0,
        verbose_name="Tamaño (bytes)",
    )

    class Meta:
        verbose_name = "Artefacto"
        verbose_name_plural = "Artefactos"
        ordering = ["run", "path"]
        unique_together = ["run", "path"]

    def __str__(self):
        return self.path

    @staticmethod
    def kind_for(path):
        path = Path(path)
        if path.name.endswith(".wavf.json"):
            return "sidecar"
        return {
            ".wavf": "field",
            ".png": "plot",
        }.get(path.suffix, "manifest" if path.name == "manifest.csv" else "table")

    @classmethod
    def record(cls, run, path):
        path = Path(path)
        return cls.objects.create(
            run=run,
            kind=cls.kind_for(path),
            path=str(path),
            digest=file_digest(path),
            size=path.stat().st_size,
        )

    def is_intact(self):
        """``True`` si el archivo existe y conserva su hash."""
        path = Path(self.path)
        return path.exists() and file_digest(path) == self.digest
