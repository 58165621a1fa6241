import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, TestCase
from numpy.testing import assert_allclose

from core import wavf
from core.exceptions import (
    ArtifactError,
    ConvergenceError,
    LabError,
    NaNGuard,
    StabilityError,
    VerificationFailed,
)
from core.numerics import (
    NeumaierAccumulator,
    canonical_json,
    compensated_sum,
    config_hash,
    file_digest,
)
from experiments.models import ExperimentRun


class LabErrorTest(SimpleTestCase):
    """Tests para la jerarquía de errores."""

    def test_default_message_and_context(self):
        """Test para el mensaje por defecto con su contexto."""
        error = StabilityError(dt=0.1, limit=0.05)
        self.assertEqual(error.exit_code, 6)
        self.assertIn("CFL", str(error))
        self.assertIn("dt=0.1", str(error))
        self.assertEqual(error.context, {"dt": 0.1, "limit": 0.05})

    def test_custom_message_without_context(self):
        """Test para un mensaje explícito sin contexto."""
        error = LabError("algo falló")
        self.assertEqual(str(error), "algo falló")
        self.assertEqual(error.exit_code, 1)

    def test_exit_codes_are_distinct(self):
        """Test para verificar que cada subclase tiene su propio código."""
        codes = [cls.exit_code for cls in LabError.__subclasses__()]
        self.assertEqual(len(codes), len(set(codes)))
        self.assertEqual(VerificationFailed.exit_code, 11)
        self.assertEqual(ArtifactError.exit_code, 10)

    def test_extra_attributes(self):
        """Test para los atributos de NaNGuard y ConvergenceError."""
        guard = NaNGuard(step=7)
        self.assertEqual(guard.step, 7)
        self.assertEqual(guard.context["step"], 7)
        best = np.ones(3)
        error = ConvergenceError(best_iterate=best, residuals=[1.0, 0.5])
        self.assertIs(error.best_iterate, best)
        self.assertEqual(error.residuals, [1.0, 0.5])


class NumericsTest(SimpleTestCase):
    """Tests para las sumas compensadas y el hash de configuración."""

    def test_compensated_sum_is_order_independent(self):
        """Test para una suma que pierde términos en orden ingenuo."""
        values = np.array([1e16, 1.0, -1e16, 1.0])
        self.assertEqual(compensated_sum(values), 2.0)
        self.assertEqual(compensated_sum(values[::-1]), 2.0)

    def test_compensated_sum_complex(self):
        """Test para la suma de valores complejos."""
        values = np.array([1e16 + 1j, 1.0 - 1e16j, -1e16 + 1e16j])
        self.assertEqual(compensated_sum(values), complex(1.0, 1.0))

    def test_neumaier_accumulator(self):
        """Test para el acumulador de campos completos."""
        accumulator = NeumaierAccumulator((2,), dtype=np.float64)
        for term in ([1e16, 1.0], [1.0, 1.0], [-1e16, 1.0]):
            accumulator.add(np.array(term))
        assert_allclose(accumulator.result(), [1.0, 3.0])
        self.assertEqual(accumulator.terms, 3)

    def test_config_hash_ignores_key_order(self):
        """Test para verificar que el hash usa el JSON canónico."""
        first = {"b": 1, "a": [1, 2]}
        second = {"a": [1, 2], "b": 1}
        self.assertEqual(canonical_json(first), '{"a":[1,2],"b":1}')
        self.assertEqual(config_hash(first), config_hash(second))
        self.assertEqual(len(config_hash(first)), 64)
        self.assertNotEqual(config_hash(first), config_hash({"a": [2, 1], "b": 1}))

    def test_file_digest(self):
        """Test para el SHA-256 de un archivo leído por bloques."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "datos.bin"
            path.write_bytes(b"abc")
            self.assertEqual(
                file_digest(path, chunk_size=2),
                "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
            )


class WavfTest(SimpleTestCase):
    """Tests para el formato binario de campos."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "campo.wavf"

    def test_header_layout(self):
        """Test para la cabecera: firma, versión, dimensiones."""
        payload = wavf.encode(np.zeros((2, 3)))
        self.assertEqual(payload[:4], b"WAVF")
        self.assertEqual(int.from_bytes(payload[4:8], "little"), 1)
        self.assertEqual(payload[8], 2)
        self.assertEqual(int.from_bytes(payload[9:17], "little"), 2)
        self.assertEqual(len(payload), 9 + 16 + 6 * 8)

    def test_complex_field_with_sidecar(self):
        """Test para un campo complejo y sus metadatos."""
        values = np.arange(6, dtype=float).reshape(3, 2) * (1 - 2j)
        written = wavf.write_field(self.path, values, {"config_hash": "abc", "dx": 0.1})
        self.assertEqual(written, self.path)
        sidecar = json.loads(wavf.sidecar_path(self.path).read_text())
        self.assertTrue(sidecar["complex"])
        read, metadata = wavf.read_field(self.path)
        assert_allclose(read, values)
        self.assertEqual(metadata["config_hash"], "abc")

    def test_rejects_bad_magic(self):
        """Test para una firma inválida."""
        payload = bytearray(wavf.encode(np.ones(3)))
        payload[:4] = b"NOPE"
        with self.assertRaises(ArtifactError):
            wavf.decode(bytes(payload))

    def test_rejects_truncated_payload(self):
        """Test para datos truncados."""
        payload = wavf.encode(np.ones(4))
        with self.assertRaises(ArtifactError):
            wavf.decode(payload[:-8])
        with self.assertRaises(ArtifactError):
            wavf.decode(payload[:5])

    def test_missing_file(self):
        """Test para la lectura de un archivo inexistente."""
        with self.assertRaises(ArtifactError):
            wavf.read_field(self.path)


class ProvenanceModelTest(TestCase):
    """Tests para los modelos base con procedencia."""

    def test_stamp_sets_hash(self):
        """Test para el sellado del hash de configuración."""
        run = ExperimentRun(stage="rays", mode="oracle", output_dir="/tmp/x")
        digest = run.stamp({"mode": "oracle"})
        self.assertEqual(digest, config_hash({"mode": "oracle"}))
        self.assertEqual(run.short_hash, digest[:12])
