"""
Base común de los subcomandos del laboratorio.
"""

import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from rest_framework import serializers

from core.exceptions import LabError
from experiments.models import ExperimentRun, RunArtifact
from experiments.pipeline import RunContext, run_stage
from experiments.serializers import load_config

logger = logging.getLogger(__name__)

CONFIG_EXIT_CODE = 2


class LabCommand(BaseCommand):
    """
    Carga la configuración, ejecuta la etapa ``stage`` y registra la corrida.

    Los ``LabError`` y los errores de validación se convierten en
    ``CommandError`` con el código de salida de la excepción.
    """

    stage = None

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Ruta del JSON de configuración.")
        parser.add_argument(
            "--out",
            help="Directorio de salida; por defecto LAB_OUTPUT_ROOT/<hash>.",
        )
        parser.add_argument(
            "--workers",
            type=int,
            default=settings.LAB_WORKERS,
            help="Hilos para el ensamblado, la extracción y la matriz.",
        )
        parser.add_argument(
            "--mode",
            choices=["pde", "oracle"],
            help="Sustituye el modo de la configuración.",
        )
        parser.add_argument(
            "--seed-density",
            type=int,
            nargs=2,
            metavar=("PUNTOS", "TIEMPOS"),
            help="Sustituye la densidad de semillas de la familia de rayos.",
        )

    def raw_config(self, options):
        if not options.get("config"):
            raise CommandError("Se requiere --config.", returncode=CONFIG_EXIT_CODE)
        return load_config(options["config"])

    def build_config(self, options):
        config = self.raw_config(options)
        overrides = {}
        if options.get("mode"):
            overrides["mode"] = options["mode"]
        if options.get("seed_density"):
            rays = dict(config["rays"])
            rays["seed_density"] = list(options["seed_density"])
            overrides["rays"] = rays
        if overrides:
            config = config.with_overrides(**overrides)
        return config

    def output_dir(self, config, options):
        out = options.get("out") or config.get("output")
        if out:
            return Path(out)
        return Path(settings.LAB_OUTPUT_ROOT) / config.hash[:12]

    def stage_options(self, options):
        return {}

    def handle(self, *args, **options):
        try:
            config = self.build_config(options)
        except serializers.ValidationError as exc:
            raise CommandError(
                f"Configuración inválida: {exc.detail}", returncode=CONFIG_EXIT_CODE
            ) from exc
        ctx = RunContext(
            config, self.output_dir(config, options), workers=options["workers"]
        )
        run = self.open_run(ctx)
        try:
            summary = run_stage(self.stage, ctx, **self.stage_options(options))
        except LabError as exc:
            self.close_run(run, ctx, error=exc, exit_code=exc.exit_code)
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except serializers.ValidationError as exc:
            self.close_run(run, ctx, error=exc.detail, exit_code=CONFIG_EXIT_CODE)
            raise CommandError(
                f"Configuración inválida: {exc.detail}", returncode=CONFIG_EXIT_CODE
            ) from exc
        self.close_run(run, ctx, summary=summary)
        self.stdout.write(json.dumps(summary, indent=2, sort_keys=True, default=str))
        self.stdout.write(
            self.style.SUCCESS(f"Etapa {self.stage} completada en {ctx.out}")
        )

    def open_run(self, ctx):
        if not settings.LAB_RECORD_RUNS:
            return None
        try:
            return ExperimentRun.objects.create(
                config_hash=ctx.hash,
                stage=self.stage,
                mode=ctx.mode,
                output_dir=str(ctx.out),
                workers=ctx.workers,
            )
        except DatabaseError as exc:
            logger.warning("No se pudo registrar la corrida: %s", exc)
            return None

    def close_run(self, run, ctx, summary=None, error=None, exit_code=1):
        if run is None:
            return
        try:
            for path in dict.fromkeys(ctx.artifacts):
                if path.exists():
                    RunArtifact.record(run, path)
            if error is None:
                run.mark_ok(json.loads(json.dumps(summary or {}, default=str)))
            else:
                run.mark_failed(error, exit_code)
        except DatabaseError as exc:
            logger.warning("No se pudo cerrar el registro de la corrida: %s", exc)
