import csv
import json
import math
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase
from rest_framework import serializers

from core import wavf
from experiments.models import ExperimentRun, RunArtifact
from experiments.presets import preset
from experiments.serializers import load_config
from experiments.verification import CHECKS, CheckResult, Suite, bump_on
from geometry.rays import read_manifest
from measurement.extraction import read_extraction_csv
from tomography.transform import ray_integral_oracle, read_samples


def small_config(**changes):
    """Preset de demostración con una inversión pequeña."""
    data = preset("demo")
    data["extraction"] = {"K": 2, "cells": 8, "diagnostics": False}
    data["inversion"] = {
        "ray_count": 12,
        "seed_density": [16, 3],
        "time_cells": 3,
        "space_cells": 3,
        "lambdas": [1e-3, 1e-2],
    }
    data.update(changes)
    return data


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


class ConfigSerializerTest(SimpleTestCase):
    """Tests para la validación estricta de configuraciones."""

    def test_demo_preset(self):
        """Test para el preset de demostración con valores por defecto."""
        config = load_config(data=preset("demo"))
        self.assertEqual(config.J, 2)
        self.assertEqual(config.N_list, [2, 3])
        self.assertEqual(config["rays"]["chord_samples"], 256)
        self.assertEqual(
            config["extraction"]["tube_cells"], settings.LAB_DEFAULTS["tube_cells"]
        )
        self.assertEqual(config["inversion"]["selection"], "truth")
        self.assertEqual(len(config.potential.bumps), 1)

    def test_defaults_for_missing_blocks(self):
        """Test para los bloques opcionales ausentes."""
        data = preset("demo")
        for key in ("grid", "weights", "extraction", "potential"):
            del data[key]
        config = load_config(data=data)
        self.assertEqual(config["grid"]["cfl"], settings.LAB_DEFAULTS["cfl"])
        self.assertEqual(config["weights"]["kappa_mode"], "measured")
        self.assertEqual(config["extraction"]["K"], 2)
        self.assertTrue(config.potential.is_zero)

    def test_unknown_top_level_key(self):
        """Test para el rechazo de claves desconocidas en la raíz."""
        data = preset("demo")
        data["seed"] = 3
        with self.assertRaises(serializers.ValidationError) as context:
            load_config(data=data)
        self.assertIn("seed", context.exception.detail)

    def test_unknown_nested_key(self):
        """Test para el rechazo de claves desconocidas en bloques anidados."""
        data = preset("demo")
        data["domain"]["radius"] = 1.0
        with self.assertRaises(serializers.ValidationError) as context:
            load_config(data=data)
        self.assertIn("domain", context.exception.detail)

    def test_probe_beyond_truncation(self):
        """Test para N > L en la lista de sondas."""
        data = preset("demo")
        data["truncation"]["N_list"] = [2, 4]
        with self.assertRaises(serializers.ValidationError) as context:
            load_config(data=data)
        self.assertIn("truncation", context.exception.detail)

    def test_invalid_domain(self):
        """Test para T ≤ 2r."""
        data = preset("demo")
        data["domain"]["T"] = 1.5
        with self.assertRaises(serializers.ValidationError):
            load_config(data=data)

    def test_support_violation(self):
        """Test para un bulto cuyo soporte sale de Ω."""
        data = preset("demo")
        data["potential"][0]["center"] = [1.25, 0.9, 0.0]
        with self.assertRaises(serializers.ValidationError) as context:
            load_config(data=data)
        self.assertIn("potential", context.exception.detail)

    def test_hash_ignores_output(self):
        """Test para el hash independiente del directorio de salida."""
        first = load_config(data=dict(preset("demo"), output="a"))
        second = load_config(data=dict(preset("demo"), output="b"))
        self.assertEqual(first.hash, second.hash)
        self.assertEqual(len(first.hash), 64)
        changed = preset("demo")
        changed["potential"][0]["amplitude"] = 2.5
        self.assertNotEqual(load_config(data=changed).hash, first.hash)

    def test_overrides(self):
        """Test para las sustituciones de primer nivel."""
        config = load_config(data=preset("demo"))
        oracle = config.with_overrides(mode="oracle")
        self.assertEqual(oracle["mode"], "oracle")
        self.assertNotEqual(oracle.hash, config.hash)
        with self.assertRaises(serializers.ValidationError):
            config.with_overrides(mode="exact")

    def test_unreadable_file(self):
        """Test para un archivo de configuración inexistente."""
        with self.assertRaises(serializers.ValidationError):
            load_config("/nonexistent/config.json")


class RunArtifactTest(SimpleTestCase):
    """Tests para la clasificación de artefactos."""

    def test_kind_for(self):
        """Test para el tipo según el nombre del archivo."""
        self.assertEqual(RunArtifact.kind_for("rays/manifest.csv"), "manifest")
        self.assertEqual(RunArtifact.kind_for("solve/exterior.wavf"), "field")
        self.assertEqual(RunArtifact.kind_for("solve/exterior.wavf.json"), "sidecar")
        self.assertEqual(RunArtifact.kind_for("extract/extraction.csv"), "table")
        self.assertEqual(RunArtifact.kind_for("plots/exterior.png"), "plot")


class LabCommandTestCase(TestCase):
    """Base con un directorio temporal y una configuración en disco."""

    def setUp(self):
        folder = tempfile.TemporaryDirectory()
        self.addCleanup(folder.cleanup)
        self.root = Path(folder.name)
        self.out = self.root / "run"

    def write_config(self, data):
        path = self.root / "config.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    def call(self, name, data, out=None, **options):
        stdout = StringIO()
        call_command(
            name,
            config=self.write_config(data),
            out=str(out or self.out),
            stdout=stdout,
            **options,
        )
        return stdout.getvalue()


class CommandErrorTest(LabCommandTestCase):
    """Tests para los códigos de salida de los subcomandos."""

    def test_missing_config(self):
        """Test para un subcomando sin --config."""
        with self.assertRaises(CommandError) as context:
            call_command("rays", out=str(self.out), stdout=StringIO())
        self.assertEqual(context.exception.returncode, 2)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_invalid_config(self):
        """Test para una configuración rechazada por el serializador."""
        data = preset("demo")
        data["grid"]["unknown"] = 1
        with self.assertRaises(CommandError) as context:
            self.call("rays", data)
        self.assertEqual(context.exception.returncode, 2)

    def test_cfl_violation(self):
        """Test para StabilityError antes de leer la fuente."""
        data = preset("demo")
        data["grid"]["cfl"] = 1.5
        with self.assertRaises(CommandError) as context:
            self.call("solve", data)
        self.assertEqual(context.exception.returncode, 6)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.stage, "solve")
        self.assertEqual(run.status, "failed")
        self.assertEqual(run.exit_code, 6)
        self.assertIn("CFL", run.error)

    def test_missing_upstream_artifact(self):
        """Test para extract sin el manifiesto de rayos."""
        data = small_config(mode="oracle")
        with self.assertRaises(CommandError) as context:
            self.call("extract", data)
        self.assertEqual(context.exception.returncode, 10)

    def test_insufficient_rays(self):
        """Test para una densidad de semillas demasiado baja."""
        data = preset("demo")
        data["truncation"]["J"] = 50
        with self.assertRaises(CommandError) as context:
            self.call("rays", data, seed_density=[4, 1])
        self.assertEqual(context.exception.returncode, 3)


class RaysCommandTest(LabCommandTestCase):
    """Tests para el subcomando rays."""

    def test_manifest_with_hash(self):
        """Test para el manifiesto con el hash de la configuración."""
        data = preset("demo")
        output = self.call("rays", data)
        config = load_config(data=data)
        manifest = self.out / "rays" / "manifest.csv"
        family, header = read_manifest(manifest)
        self.assertEqual(len(family), 2)
        self.assertEqual(header["config_hash"], config.hash)
        self.assertGreater(family[1].delta, family[2].delta)
        self.assertIn("completada", output)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, "ok")
        self.assertEqual(run.config_hash, config.hash)
        self.assertEqual(run.summary["rays"], 2)
        artifact = run.artifacts.get()
        self.assertEqual(artifact.kind, "manifest")
        self.assertTrue(artifact.is_intact())

    def test_reproducible(self):
        """Test para manifiestos idénticos en dos corridas."""
        data = preset("demo")
        self.call("rays", data)
        first = (self.out / "rays" / "manifest.csv").read_bytes()
        self.call("rays", data)
        second = (self.out / "rays" / "manifest.csv").read_bytes()
        self.assertEqual(first, second)

    def test_record_disabled(self):
        """Test para LAB_RECORD_RUNS desactivado."""
        with self.settings(LAB_RECORD_RUNS=False):
            self.call("rays", preset("demo"))
        self.assertFalse(ExperimentRun.objects.exists())


class OracleExtractionCommandTest(LabCommandTestCase):
    """Tests para extract e invert en modo oráculo."""

    def test_diagnostics(self):
        """Test para las tablas de diagnóstico de la extracción."""
        data = small_config(mode="oracle")
        data["extraction"]["diagnostics"] = True
        self.call("rays", data)
        self.call("extract", data)
        lemma = read_rows(self.out / "extract" / "lemma.csv")
        density = read_rows(self.out / "extract" / "density.csv")
        self.assertEqual(len(lemma), 4)
        self.assertEqual(len(density), 4)
        self.assertIn("k_residual", lemma[0])
        self.assertTrue((self.out / "plots" / "extraction_error.png").exists())
        run = ExperimentRun.objects.filter(stage="extract").get()
        self.assertIn("trend_failures", run.summary)

    def test_invert_with_extraction_samples(self):
        """Test para la inversión con muestras de extracción y de oráculo."""
        data = small_config(mode="oracle")
        self.call("rays", data)
        self.call("extract", data)
        self.call("invert", data)
        samples = read_samples(self.out / "invert" / "samples.csv")
        provenance = [sample.provenance for sample in samples]
        self.assertEqual(provenance.count("extraction"), 2)
        self.assertEqual(provenance.count("oracle"), 12)
        sweep = read_rows(self.out / "invert" / "lambda_sweep.csv")
        self.assertGreaterEqual(len(sweep), 1)
        values, metadata = wavf.read_field(self.out / "invert" / "reconstruction.wavf")
        self.assertEqual(values.shape, (4, 4, 4))
        self.assertEqual(metadata["config_hash"], load_config(data=data).hash)
        self.assertTrue(math.isfinite(metadata["masked_error"]))
        run = ExperimentRun.objects.filter(stage="invert").get()
        kinds = set(run.artifacts.values_list("kind", flat=True))
        self.assertEqual(kinds, {"table", "field", "sidecar"})

    def test_invert_requires_block(self):
        """Test para invert sin bloque de inversión."""
        data = small_config(mode="oracle")
        del data["inversion"]
        with self.assertRaises(CommandError) as context:
            self.call("invert", data)
        self.assertEqual(context.exception.returncode, 2)


class PdeChainCommandTest(LabCommandTestCase):
    """Tests para la cadena source → solve → extract en modo EDP."""

    def test_chain(self):
        """Test para los artefactos de la cadena con una malla gruesa."""
        data = small_config(mode="pde")
        data["truncation"] = {"J": 1, "L": 2, "N_list": [2]}
        data["grid"] = {"dx": 0.04, "cfl": 0.9, "order": 2}
        for stage in ("rays", "source", "solve", "extract"):
            self.call(stage, data)
        self.assertTrue((self.out / "source" / "manifest.csv").exists())
        self.assertTrue((self.out / "source" / "source.wavf").exists())
        exterior = self.out / "solve" / "exterior.wavf"
        _, metadata = wavf.read_field(exterior)
        self.assertEqual(metadata["region"], "exterior")
        self.assertGreater(metadata["energy"]["max_norm"], 0.0)
        rows = read_extraction_csv(self.out / "extract" / "extraction.csv")
        self.assertEqual(len(rows), 1)
        self.assertTrue(math.isfinite(rows[0]["estimate"]))
        statuses = set(ExperimentRun.objects.values_list("status", flat=True))
        self.assertEqual(statuses, {"ok"})

    def test_grid_mismatch(self):
        """Test para solve con una malla distinta de la de la fuente."""
        data = small_config(mode="pde")
        data["truncation"] = {"J": 1, "L": 2, "N_list": [2]}
        data["grid"] = {"dx": 0.04, "cfl": 0.9, "order": 2}
        self.call("rays", data)
        self.call("source", data)
        data["grid"]["dx"] = 0.05
        with self.assertRaises(CommandError) as context:
            self.call("solve", data)
        self.assertEqual(context.exception.returncode, 10)

    def test_null_potential(self):
        """Test para V ≡ 0 en la cadena EDP: |estimación| < 5% de la escala."""
        data = small_config(mode="pde", potential=[])
        data["truncation"] = {"J": 1, "L": 4, "N_list": [4]}
        data["grid"] = {"points_per_wavelength": 10, "cfl": 0.9, "order": 4}
        for stage in ("rays", "source", "solve", "extract"):
            self.call(stage, data)
        family, _ = read_manifest(self.out / "rays" / "manifest.csv")
        rows = read_extraction_csv(self.out / "extract" / "extraction.csv")
        self.assertEqual(len(rows), 1)
        row = rows[0]
        self.assertEqual(row["N"], 4)
        ray = family[row["j"]]
        scale = ray_integral_oracle(bump_on(ray), ray)
        self.assertGreater(scale, 0.0)
        self.assertLess(abs(row["estimate"]), 0.05 * scale)
        self.assertEqual(row["oracle_value"], 0.0)


class VerifyCommandTest(LabCommandTestCase):
    """Tests para la batería de verificación."""

    def test_subset(self):
        """Test para un subconjunto de comprobaciones con su informe."""
        checks = ["adjoint", "row_sums", "two_oracles", "density"]
        output = self.call("verify", preset("demo"), only=checks)
        rows = read_rows(self.out / "verify" / "report.csv")
        self.assertEqual([row["check"] for row in rows], checks)
        self.assertTrue(all(row["passed"] == "True" for row in rows))
        self.assertIn("[OK] adjoint", output)

    def test_pde_trend_table(self):
        """Test para la tabla de tendencia en N de la cadena EDP."""

        def chain(suite, potential=None, N_list=None, J=None):
            expected = ray_integral_oracle(suite.reference, suite.ray)
            return [
                {
                    "j": 1,
                    "N": N,
                    "estimate": expected * (1.0 + 0.1 / N),
                    "oracle_value": expected,
                }
                for N in N_list
            ]

        with mock.patch.object(Suite, "pde_chain", chain):
            self.call("verify", preset("demo"), only=["pde_extraction"])
        trend = read_rows(self.out / "verify" / "pde_trend.csv")
        self.assertEqual([int(row["N"]) for row in trend], [2, 3, 4])
        self.assertAlmostEqual(float(trend[-1]["error"]), 0.025)
        report = read_rows(self.out / "verify" / "report.csv")
        self.assertEqual(report[0]["passed"], "True")

    def test_density_detail(self):
        """Test para la distancia de cobertura al refinar las semillas."""
        self.call("verify", preset("demo"), only=["density"])
        row = read_rows(self.out / "verify" / "report.csv")[0]
        self.assertEqual(row["passed"], "True")
        self.assertLessEqual(float(row["value"]), float(row["threshold"]))
        self.assertIn("→", row["detail"])

    def test_failure_exit_code(self):
        """Test para VerificationFailed cuando una comprobación falla."""

        def failing(suite):
            return CheckResult("adjoint", False, 1.0, 0.0)

        with mock.patch.dict(CHECKS, {"adjoint": failing}):
            with self.assertRaises(CommandError) as context:
                self.call("verify", preset("demo"), only=["adjoint"])
        self.assertEqual(context.exception.returncode, 11)
        rows = read_rows(self.out / "verify" / "report.csv")
        self.assertEqual(rows[0]["passed"], "False")
        self.assertEqual(ExperimentRun.objects.get().exit_code, 11)


class DemoCommandTest(LabCommandTestCase):
    """Tests para el subcomando demo."""

    def test_oracle_demo(self):
        """Test para la cadena completa en modo oráculo."""
        self.call("demo", small_config(), mode="oracle")
        for parts in (
            ("rays", "manifest.csv"),
            ("extract", "extraction.csv"),
            ("invert", "reconstruction.wavf"),
        ):
            self.assertTrue(self.out.joinpath(*parts).exists())
        self.assertFalse((self.out / "solve").exists())
        run = ExperimentRun.objects.get()
        self.assertEqual(run.stage, "demo")
        self.assertEqual(run.mode, "oracle")
        self.assertEqual(set(run.summary), {"rays", "extract", "invert"})
        rows = read_extraction_csv(self.out / "extract" / "extraction.csv")
        self.assertTrue(all(row["oracle_value"] is not None for row in rows))

    def test_reproducible_demo(self):
        """Test para artefactos idénticos byte a byte en dos demos oráculo."""
        data = small_config()
        outputs = []
        for name in ("first", "second"):
            out = self.out / name
            self.call("demo", data, out=out, mode="oracle")
            outputs.append(
                [
                    out.joinpath(*parts).read_bytes()
                    for parts in (
                        ("extract", "extraction.csv"),
                        ("invert", "reconstruction.wavf"),
                    )
                ]
            )
        self.assertEqual(outputs[0], outputs[1])
