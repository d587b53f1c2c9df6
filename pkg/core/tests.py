# Tests pour l'application Core

import io
import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase
from PIL import Image

from core.cli import command_name, dispatch, routes_to_harness
from core.exceptions import ArgumentError, ConfigurationError
from core.services.config import load_run_config, parse_run_config
from core.services.plans import resolve_schedules
from core.services.provenance import RUN_MANIFEST_FILE, RunClock, build_run_manifest
from core.services.runtime import derive_seed
from ingestion.services.synthetic import generate_synthetic_dataset

SMALL_ARCHITECTURE = {"input_height": 16, "input_width": 16, "depth": 2, "base_filters": 4}


class RunConfigTest(SimpleTestCase):
    """Tests pour la lecture et la validation des fichiers de configuration"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.base = Path(self._tmp.name)
        (self.base / "data").mkdir()

    def tearDown(self):
        self._tmp.cleanup()

    def assertField(self, data, field, **kwargs):
        with self.assertRaises(ConfigurationError) as ctx:
            parse_run_config(data, self.base, **kwargs)
        self.assertEqual(ctx.exception.field, field)

    def test_seed_required(self):
        """Test la graine maîtresse obligatoire"""
        self.assertField({"architecture": SMALL_ARCHITECTURE}, "seed")
        self.assertField({"seed": "1"}, "seed")

    def test_seed_override(self):
        """Test --seed remplace et complète la graine du fichier"""
        self.assertEqual(parse_run_config({}, self.base, seed=9).seed, 9)
        self.assertEqual(parse_run_config({"seed": 1}, self.base, seed=9).seed, 9)

    def test_invalid_fields_named(self):
        """Test le champ fautif est nommé avec sa section"""
        cases = [
            ({"seed": 1, "extra": True}, "extra"),
            ({"seed": 1, "architecture": {"depth": 0}}, "architecture.depth"),
            ({"seed": 1, "architecture": {"input_height": 20, "depth": 3}}, "architecture.input_height"),
            ({"seed": 1, "finetune": {"epochs": 0}}, "finetune.epochs"),
            ({"seed": 1, "pretrain": {"momentum": 0.9}}, "pretrain.momentum"),
            ({"seed": 1, "augmentation": {"flip_probability": 2}}, "augmentation.flip_probability"),
            ({"seed": 1, "experiment": {"fold_count": 1}}, "experiment.fold_count"),
            ({"seed": 1, "experiment": {"schedules": []}}, "experiment.schedules"),
            ({"seed": 1, "visualization": {"units": [[1]]}}, "visualization.units"),
            ({"seed": 1, "datasets": {"finetune": "absent"}}, "datasets.finetune.path"),
            ({"seed": 1, "datasets": {"finetune": {"path": "data", "modality": "irm"}}}, "datasets.finetune.modality"),
        ]
        for data, field in cases:
            with self.subTest(field=field):
                self.assertField(data, field)

    def test_wrong_types_named(self):
        """Test une valeur du mauvais type donne une ConfigurationError nommant le champ"""
        cases = [
            ({"seed": 1, "run_id": 7}, "run_id"),
            ({"seed": 1, "architecture": {"dropout_rate": "half"}}, "architecture.dropout_rate"),
            ({"seed": 1, "architecture": {"dropout_rate": None}}, "architecture.dropout_rate"),
            ({"seed": 1, "architecture": {"upsample_mode": ["nearest"]}}, "architecture.upsample_mode"),
            ({"seed": 1, "pretrain": {"learning_rate": "fast"}}, "pretrain.learning_rate"),
            ({"seed": 1, "finetune": {"validation_fraction": None}}, "finetune.validation_fraction"),
            ({"seed": 1, "finetune": {"loss": ["bce"]}}, "finetune.loss"),
            ({"seed": 1, "augmentation": {"zoom_range": None}}, "augmentation.zoom_range"),
            ({"seed": 1, "augmentation": {"rotation_max": "10"}}, "augmentation.rotation_max"),
            ({"seed": 1, "augmentation": {"flip_probability": "0.5"}}, "augmentation.flip_probability"),
            ({"seed": 1, "augmentation": {"allow_horizontal_flip": "yes"}}, "augmentation.allow_horizontal_flip"),
            ({"seed": 1, "augmentation": {"target_total": True}}, "augmentation.target_total"),
            ({"seed": 1, "visualization": {"step_size": "0.1"}}, "visualization.step_size"),
            ({"seed": 1, "visualization": {"regularization_weight": None}}, "visualization.regularization_weight"),
            ({"seed": 1, "visualization": {"steps": 1.5}}, "visualization.steps"),
        ]
        for data, field in cases:
            with self.subTest(field=field, value=data):
                self.assertField(data, field)

    def test_non_finite_numbers(self):
        """Test NaN et infini refusés pour les champs numériques"""
        self.assertField({"seed": 1, "finetune": {"learning_rate": float("nan")}}, "finetune.learning_rate")
        self.assertField({"seed": 1, "augmentation": {"shift_max": float("inf")}}, "augmentation.shift_max")

    def test_defaults(self):
        """Test les valeurs par défaut des entraînements et de l'augmentation"""
        config = parse_run_config({"seed": 4, "architecture": SMALL_ARCHITECTURE}, self.base)
        self.assertEqual(config.pretrain.epochs, 40)
        self.assertEqual(config.pretrain.validation_fraction, 0.1)
        self.assertEqual(config.finetune.epochs, 20)
        self.assertEqual((config.pretrain.seed, config.finetune.seed, config.augmentation.seed), (4, 4, 4))
        self.assertEqual(config.experiment.fold_count, 5)
        self.assertEqual(config.experiment.schedules, ("contracting_tuned", "expanding_tuned"))
        self.assertIsNone(config.output_dir)

    def test_relative_paths(self):
        """Test les chemins relatifs au fichier de configuration"""
        path = self.base / "run.json"
        path.write_text(json.dumps({"seed": 1, "datasets": {"finetune": "data"}, "output_dir": "out"}), encoding="utf-8")
        config = load_run_config(path)
        self.assertEqual(config.dataset("finetune").path, (self.base / "data").resolve())
        self.assertEqual(config.output_dir, (self.base / "out").resolve())
        self.assertEqual(config.run_id, "run")
        with self.assertRaises(ConfigurationError) as ctx:
            config.dataset("pretrain")
        self.assertEqual(ctx.exception.field, "datasets.pretrain")

    def test_unreadable_file(self):
        """Test fichier absent ou JSON invalide"""
        path = self.base / "bad.json"
        path.write_text("{seed: 1", encoding="utf-8")
        for target in (path, self.base / "absent.json"):
            with self.assertRaises(ConfigurationError) as ctx:
                load_run_config(target)
            self.assertEqual(ctx.exception.field, "config")

    def test_config_hash(self):
        """Test l'empreinte : stable, sensible à la graine, indépendante du répertoire de sortie"""
        data = {"seed": 1, "architecture": SMALL_ARCHITECTURE}
        reference = parse_run_config(data, self.base).config_hash
        self.assertEqual(parse_run_config(dict(data), self.base, out=self.base / "x").config_hash, reference)
        self.assertEqual(parse_run_config({**data, "output_dir": "y"}, self.base).config_hash, reference)
        self.assertNotEqual(parse_run_config(data, self.base, seed=2).config_hash, reference)

    def test_schedule_labels(self):
        """Test la résolution des libellés de plans configurés"""
        config = parse_run_config(
            {"seed": 1, "architecture": SMALL_ARCHITECTURE, "experiment": {"schedules": ["all_blocks", "shallow_to_deep_k2"]}},
            self.base,
        )
        self.assertEqual([sorted(s.trainable_blocks) for s in resolve_schedules(config)], [[1, 2, 3], [1, 2]])
        config = parse_run_config(
            {"seed": 1, "architecture": SMALL_ARCHITECTURE, "experiment": {"schedules": ["shallow_to_deep_k4"]}}, self.base
        )
        with self.assertRaises(ArgumentError):
            resolve_schedules(config)


class ProvenanceTest(SimpleTestCase):
    """Tests pour les graines dérivées et le manifeste de run"""

    def test_derive_seed(self):
        """Test la dérivation stable des graines"""
        self.assertEqual(derive_seed(1, "a", 2), derive_seed(1, "a", 2))
        self.assertNotEqual(derive_seed(1, "a", 2), derive_seed(1, "a", 3))
        self.assertLess(derive_seed(123456789, "x"), 2**32)

    def test_manifest_contents(self):
        """Test le manifeste embarque la configuration avec la graine effective"""
        with tempfile.TemporaryDirectory() as tmp:
            config = parse_run_config({"seed": 1}, Path(tmp), seed=7)
        clock = RunClock()
        with clock.stage("train"):
            pass
        manifest = build_run_manifest("two-part", config, clock, {"master": 7}, {"results": "results.csv"})
        self.assertEqual(manifest["config"]["seed"], 7)
        self.assertEqual(manifest["config_hash"], config.config_hash)
        self.assertIn("train", manifest["timings"]["stages"])
        for key in ("code_version", "environment", "deterministic", "seeds", "artifacts"):
            self.assertIn(key, manifest)
        self.assertIn("torch", manifest["environment"])


class CliTest(SimpleTestCase):
    """Tests pour le point d'entrée en ligne de commande"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.base = Path(self._tmp.name)
        self.stdout, self.stderr = io.StringIO(), io.StringIO()

    def tearDown(self):
        self._tmp.cleanup()

    def run_cli(self, *argv):
        return dispatch([str(a) for a in argv], stdout=self.stdout, stderr=self.stderr)

    def write_config(self, data):
        path = self.base / "run.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    def test_command_names(self):
        """Test les noms de sous-commandes avec tiret ou souligné"""
        self.assertEqual(command_name("two-part"), "two_part")
        self.assertEqual(command_name("two_part"), "two_part")
        self.assertEqual(command_name("vis-activation"), "vis_activation")
        self.assertIsNone(command_name("migrate"))

    def test_usage(self):
        """Test sans argument, aide et sous-commande inconnue"""
        self.assertEqual(self.run_cli(), 2)
        self.assertIn("sous-commandes", self.stderr.getvalue())
        self.assertEqual(self.run_cli("--help"), 0)
        self.assertEqual(self.run_cli("train-everything"), 2)
        self.assertIn("sous-commande inconnue", self.stderr.getvalue())

    def test_manage_routing(self):
        """Test manage.py : harnais et noms inconnus vers dispatch, commandes Django inchangées"""
        self.assertTrue(routes_to_harness("two-part"))
        self.assertTrue(routes_to_harness("train-everything"))
        for name in ("migrate", "test", "makemigrations", "help", "--version"):
            with self.subTest(name=name):
                self.assertFalse(routes_to_harness(name))

    def test_config_type_error_exit_code(self):
        """Test une valeur du mauvais type : code 2, champ nommé, aucun fichier écrit"""
        out = self.base / "out"
        config = self.write_config({"seed": 1, "architecture": {**SMALL_ARCHITECTURE, "dropout_rate": "half"}})
        self.assertEqual(self.run_cli("params", "--config", config, "--out", out), 2)
        self.assertIn("architecture.dropout_rate", self.stderr.getvalue())
        self.assertFalse(out.exists())

    def test_config_error_writes_nothing(self):
        """Test une configuration invalide : code 2 et aucun fichier écrit"""
        out = self.base / "out"
        config = self.write_config({"architecture": SMALL_ARCHITECTURE})
        self.assertEqual(self.run_cli("two-part", "--config", config, "--out", out), 2)
        self.assertEqual(self.run_cli("params", "--config", config, "--out", out), 2)
        self.assertFalse(out.exists())
        self.assertIn("seed", self.stderr.getvalue())

    def test_missing_pretrained_checkpoint(self):
        """Test two-part sans checkpoint pré-entraîné : code 2 avant toute écriture"""
        generate_synthetic_dataset("blobs", 4, (16, 16), seed=1, output_dir=self.base / "data")
        out = self.base / "out"
        config = self.write_config({"seed": 1, "architecture": SMALL_ARCHITECTURE, "datasets": {"finetune": "data"}})
        self.assertEqual(self.run_cli("two-part", "--config", config, "--out", out), 2)
        self.assertIn("experiment.pretrained_checkpoint", self.stderr.getvalue())
        self.assertFalse(out.exists())

    def test_synth(self):
        """Test la génération d'un jeu synthétique et son manifeste de run"""
        out = self.base / "blobs"
        self.assertEqual(self.run_cli("synth", "--kind", "blobs", "--count", 3, "--size", 16, "--seed", 4, "--out", out), 0)
        self.assertEqual(len(list((out / "images").glob("*.png"))), 3)
        manifest = json.loads((out / RUN_MANIFEST_FILE).read_text(encoding="utf-8"))
        self.assertEqual(manifest["command"], "synth")
        self.assertEqual(manifest["seeds"], {"synthetic": 4})
        self.assertEqual(manifest["artifacts"]["manifest"], "manifest.csv")
        self.assertIsNone(manifest["config"])

    def test_synth_requires_seed(self):
        """Test synth sans graine"""
        out = self.base / "blobs"
        self.assertEqual(self.run_cli("synth", "--kind", "speckle", "--count", 2, "--out", out), 2)
        self.assertFalse(out.exists())

    def test_params(self):
        """Test le rapport de paramètres par bloc"""
        out = self.base / "params"
        config = self.write_config({"seed": 1, "architecture": SMALL_ARCHITECTURE})
        self.assertEqual(self.run_cli("params", "--config", config, "--out", out), 0)
        frame = pd.read_csv(out / "params.csv")
        self.assertEqual(list(frame["block"]), [1, 2, 3])
        self.assertIn("partie contracting", self.stdout.getvalue())

    def test_evaluate_perfect_predictions(self):
        """Test evaluate avec les masques de vérité terrain comme prédictions"""
        generate_synthetic_dataset("blobs", 3, (16, 16), seed=2, output_dir=self.base / "data")
        out = self.base / "eval"
        config = self.write_config({"seed": 1, "architecture": SMALL_ARCHITECTURE})
        code = self.run_cli(
            "evaluate", "--config", config, "--out", out, "--cases", self.base / "data" / "manifest.csv",
            "--pred", self.base / "data" / "masks",
        )
        self.assertEqual(code, 0)
        metrics = pd.read_csv(out / "metrics.csv")
        self.assertEqual(len(metrics), 3)
        self.assertTrue((metrics["dice"] == 1.0).all())
        self.assertTrue((metrics["pixel_error_pct"] == 0.0).all())
        self.assertTrue((out / RUN_MANIFEST_FILE).is_file())

    def test_evaluate_missing_prediction_dir(self):
        """Test evaluate avec un répertoire de prédictions absent"""
        generate_synthetic_dataset("blobs", 2, (16, 16), seed=2, output_dir=self.base / "data")
        config = self.write_config({"seed": 1, "architecture": SMALL_ARCHITECTURE})
        code = self.run_cli(
            "evaluate", "--config", config, "--out", self.base / "eval", "--cases", self.base / "data" / "manifest.csv",
            "--pred", self.base / "absent",
        )
        self.assertEqual(code, 2)

    def test_evaluate_same_directory_names(self):
        """Test evaluate : deux répertoires de prédictions de même nom restent distincts"""
        data = generate_synthetic_dataset("blobs", 3, (16, 16), seed=2, output_dir=self.base / "data")
        empty = self.base / "vide" / "masks"
        empty.mkdir(parents=True)
        for record in data.records:
            Image.fromarray(np.zeros((16, 16), dtype=np.uint8)).save(empty / f"{record.id}.png")
        out = self.base / "eval"
        config = self.write_config({"seed": 1, "architecture": SMALL_ARCHITECTURE})
        code = self.run_cli(
            "evaluate", "--config", config, "--out", out, "--cases", self.base / "data" / "manifest.csv",
            "--pred", self.base / "data" / "masks", "--pred", empty,
        )
        self.assertEqual(code, 0)
        summary = json.loads((out / "evaluation_summary.json").read_text(encoding="utf-8"))
        self.assertEqual(len(summary), 2)
        self.assertEqual(sorted(mean["dice"] for mean in summary.values())[-1], 1.0)
        metrics = pd.read_csv(out / "metrics.csv")
        self.assertEqual(metrics["prediction_set"].nunique(), 2)
        self.assertEqual(len(metrics), 6)

    def test_evaluate_repeated_directory(self):
        """Test evaluate avec le même répertoire donné deux fois"""
        generate_synthetic_dataset("blobs", 2, (16, 16), seed=2, output_dir=self.base / "data")
        masks = self.base / "data" / "masks"
        config = self.write_config({"seed": 1, "architecture": SMALL_ARCHITECTURE})
        code = self.run_cli(
            "evaluate", "--config", config, "--out", self.base / "eval", "--cases", self.base / "data" / "manifest.csv",
            "--pred", masks, "--pred", masks,
        )
        self.assertEqual(code, 2)
        self.assertFalse((self.base / "eval").exists())
