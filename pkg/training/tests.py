# Tests pour l'application Training

import math
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase, tag

from architecture.services.blocks import enumerate_blocks
from architecture.services.freeze import (
    Direction,
    FreezePlan,
    TwoPart,
    apply_freeze_plan,
    make_cumulative_plan,
    make_two_part_plan,
)
from architecture.services.unet import ArchitectureSpec, build_unet, initialize_weights
from core.exceptions import (
    ArgumentError,
    CheckpointIncompatibleError,
    CheckpointIntegrityError,
    ConfigurationError,
    StructuralError,
)
from training.services.checkpoints import Checkpoint, load_checkpoint, save_checkpoint, snapshot
from training.services.engine import (
    TrainConfig,
    bce_loss,
    binarize,
    finetune,
    predict,
    predict_batch,
    pretrain,
    probe_gradients,
    resume,
)

SMALL_SPEC = ArchitectureSpec(16, 16, 1, depth=2, base_filters=4)


def make_data(count, size=16, seed=0, empty_masks=False):
    """Images aléatoires et masques seuillés, forme (N, 1, H, W)"""
    rng = np.random.default_rng(seed)
    images = rng.random((count, 1, size, size)).astype(np.float32)
    if empty_masks:
        masks = np.zeros_like(images)
    else:
        masks = (images > 0.5).astype(np.float32)
    return images, masks


def frozen_and_trainable(graph, plan):
    """Noms des tenseurs (gelés, entraînables) pour un plan appliqué"""
    frozen, trainable = set(), set()
    for block in enumerate_blocks(graph):
        target = trainable if block.index in plan.trainable_blocks else frozen
        for name in block.parameter_layer_names:
            target.update({f"{name}.weight", f"{name}.bias"})
    return frozen, trainable


class TrainConfigTest(SimpleTestCase):
    """Tests pour la configuration d'entraînement"""

    def test_zero_epochs_rejected(self):
        """Test le rejet de epochs=0"""
        graph = build_unet(SMALL_SPEC)
        with self.assertRaises(ConfigurationError) as ctx:
            pretrain(graph, make_data(4), TrainConfig(epochs=0))
        self.assertEqual(ctx.exception.field, "pretrain.epochs")

    def test_invalid_fields(self):
        """Test les champs invalides nommés dans l'erreur"""
        with self.assertRaises(ConfigurationError) as ctx:
            TrainConfig(validation_fraction=1.0).validate("finetune")
        self.assertEqual(ctx.exception.field, "finetune.validation_fraction")
        with self.assertRaises(ConfigurationError) as ctx:
            TrainConfig(loss="dice").validate()
        self.assertEqual(ctx.exception.field, "train.loss")
        with self.assertRaises(ConfigurationError) as ctx:
            TrainConfig.from_dict({"epochs": 5, "momentum": 0.9}, prefix="pretrain")
        self.assertEqual(ctx.exception.field, "pretrain.momentum")

    def test_from_dict_defaults(self):
        """Test les valeurs par défaut complétées"""
        cfg = TrainConfig.from_dict({"epochs": 40}, defaults=TrainConfig(validation_fraction=0.1))
        self.assertEqual(cfg.epochs, 40)
        self.assertEqual(cfg.validation_fraction, 0.1)
        self.assertEqual(cfg.batch_size, 8)
        self.assertEqual(cfg.learning_rate, 1e-4)


class LossTest(SimpleTestCase):
    """Tests pour l'entropie croisée binaire"""

    def test_perfect_prediction_near_zero(self):
        """Test une prédiction parfaite"""
        target = torch.tensor([0.0, 1.0, 1.0, 0.0])
        self.assertLess(float(bce_loss(target.clone(), target)), 1e-6)

    def test_inverted_prediction_grows_with_clamp(self):
        """Test une prédiction inversée bornée par le clamp"""
        target = torch.tensor([0.0, 1.0, 1.0, 0.0])
        inverted = 1.0 - target
        loose = float(bce_loss(inverted, target, eps=1e-3))
        tight = float(bce_loss(inverted, target, eps=1e-7))
        self.assertAlmostEqual(tight, -math.log(1e-7), places=2)
        self.assertGreater(tight, loose)


class PretrainTest(SimpleTestCase):
    """Tests pour le pré-entraînement"""

    def test_background_only_drives_output_down(self):
        """Test des masques vides : probabilité moyenne < 0.1 après entraînement"""
        graph = build_unet(SMALL_SPEC)
        data = make_data(20, empty_masks=True)
        cfg = TrainConfig(epochs=40, learning_rate=0.05, validation_fraction=0.1, seed=1)
        ckpt = pretrain(graph, data, cfg)
        self.assertEqual(len(ckpt.training_log), 40)
        self.assertIsNotNone(ckpt.training_log[0]["val_loss"])
        probabilities = predict_batch(graph, data[0])
        self.assertLess(float(probabilities.mean()), 0.1)

    def test_deterministic(self):
        """Test deux pré-entraînements identiques"""
        data = make_data(10)
        cfg = TrainConfig(epochs=2, batch_size=4, seed=3, validation_fraction=0.2)
        a = pretrain(build_unet(SMALL_SPEC), data, cfg)
        b = pretrain(build_unet(SMALL_SPEC), data, cfg)
        self.assertEqual(a.checkpoint_id, b.checkpoint_id)
        self.assertEqual(a.training_log, b.training_log)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_empty_and_mismatched_data(self):
        """Test les erreurs de données"""
        graph = build_unet(SMALL_SPEC)
        empty = (np.zeros((0, 1, 16, 16), np.float32), np.zeros((0, 1, 16, 16), np.float32))
        with self.assertRaises(ArgumentError):
            pretrain(graph, empty, TrainConfig(epochs=1))
        with self.assertRaises(StructuralError):
            pretrain(graph, make_data(4, size=32), TrainConfig(epochs=1))

    def test_provenance(self):
        """Test la provenance du pré-entraînement"""
        ckpt = pretrain(build_unet(SMALL_SPEC), make_data(6), TrainConfig(epochs=1, seed=5))
        self.assertEqual(ckpt.provenance["kind"], "pretrain")
        self.assertEqual(ckpt.provenance["config"]["seed"], 5)
        self.assertEqual(ckpt.provenance["freeze_plan"]["trainable_blocks"], [1, 2, 3])
        self.assertIsNone(ckpt.provenance["parent"])


class FinetuneTest(SimpleTestCase):
    """Tests pour le fine-tuning sélectif"""

    spec = ArchitectureSpec(32, 32, 1, depth=3, base_filters=4)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.data = make_data(8, size=32, seed=2)
        cls.init = pretrain(build_unet(cls.spec), cls.data, TrainConfig(epochs=1, batch_size=4, seed=0))

    def assert_freeze_invariance(self, spec, init, plan, data, epochs=1):
        graph = build_unet(spec)
        ckpt = finetune(graph, init, plan, data, TrainConfig(epochs=epochs, batch_size=4, seed=7))
        frozen, trainable = frozen_and_trainable(graph, plan)
        for name in frozen:
            np.testing.assert_array_equal(ckpt.tensors[name], init.tensors[name], err_msg=f"{plan.label}: {name}")
        changed = [name for name in trainable if not np.array_equal(ckpt.tensors[name], init.tensors[name])]
        self.assertTrue(changed, plan.label)
        return ckpt

    def test_freeze_invariance_all_cumulative_plans(self):
        """Test que les tenseurs gelés restent identiques bit à bit, dans les deux directions"""
        blocks = enumerate_blocks(build_unet(self.spec))
        for direction in Direction:
            for k in range(1, len(blocks) + 1):
                self.assert_freeze_invariance(self.spec, self.init, make_cumulative_plan(direction, k, blocks), self.data)

    def test_contracting_plan_freezes_expanding(self):
        """Test le plan contractant : couches expansives et tête inchangées"""
        graph = build_unet(self.spec)
        plan = make_two_part_plan(TwoPart.CONTRACTING, enumerate_blocks(graph))
        ckpt = self.assert_freeze_invariance(self.spec, self.init, plan, self.data)
        for name in ("conv07.weight", "conv10.bias", "upconv1.weight", "head.weight", "head.bias"):
            np.testing.assert_array_equal(ckpt.tensors[name], self.init.tensors[name])

    def test_provenance_records_plan_and_parent(self):
        """Test la provenance du fine-tuning"""
        plan = FreezePlan(frozenset({5}), "deep_to_shallow_k1")
        ckpt = finetune(build_unet(self.spec), self.init, plan, self.data, TrainConfig(epochs=1))
        self.assertEqual(ckpt.provenance["parent"], self.init.checkpoint_id)
        self.assertEqual(ckpt.provenance["freeze_plan"], {"label": "deep_to_shallow_k1", "trainable_blocks": [5]})
        self.assertEqual(ckpt.provenance["trainable_read_back"], [5])

    def test_fingerprint_mismatch(self):
        """Test le refus d'un checkpoint d'une autre architecture"""
        other = build_unet(ArchitectureSpec(32, 32, 1, depth=3, base_filters=8))
        with self.assertRaises(CheckpointIncompatibleError):
            finetune(other, self.init, FreezePlan(frozenset({1}), "x"), self.data, TrainConfig(epochs=1))

    def test_empty_plan_rejected(self):
        """Test qu'un plan sans bloc entraînable ne peut pas être construit"""
        with self.assertRaises(ArgumentError):
            FreezePlan(frozenset(), "none")

    def test_resume_matches_uninterrupted(self):
        """Test 2 + 2 époques reprises égales à 4 époques d'un coup"""
        plan = FreezePlan(frozenset({1, 2}), "shallow_to_deep_k2")
        cfg = TrainConfig(epochs=2, batch_size=4, seed=11)
        first = finetune(build_unet(self.spec), self.init, plan, self.data, cfg)
        resumed = resume(build_unet(self.spec), first, plan, self.data, cfg)
        straight = finetune(build_unet(self.spec), self.init, plan, self.data, TrainConfig(epochs=4, batch_size=4, seed=11))
        self.assertEqual(len(resumed.training_log), 4)
        self.assertEqual([e["epoch"] for e in resumed.training_log], [1, 2, 3, 4])
        self.assertEqual(resumed.training_log, straight.training_log)
        self.assertEqual(resumed.checkpoint_id, straight.checkpoint_id)
        self.assertEqual(resumed.provenance["parent"], first.checkpoint_id)

    def test_resume_with_other_plan_rejected(self):
        """Test la reprise avec un autre plan"""
        cfg = TrainConfig(epochs=1, batch_size=4)
        first = finetune(build_unet(self.spec), self.init, FreezePlan(frozenset({1}), "a"), self.data, cfg)
        with self.assertRaises(CheckpointIncompatibleError):
            resume(build_unet(self.spec), first, FreezePlan(frozenset({2}), "b"), self.data, cfg)

    @tag("slow")
    def test_freeze_invariance_depth5(self):
        """Test l'invariance du gel pour les 9 plans cumulatifs d'un réseau de profondeur 5"""
        spec = ArchitectureSpec(64, 64, 1, depth=5, base_filters=8)
        data = make_data(16, size=64, seed=4)
        init = pretrain(build_unet(spec), data, TrainConfig(epochs=2, seed=0))
        blocks = enumerate_blocks(build_unet(spec))
        self.assertEqual(len(blocks), 9)
        for direction in Direction:
            for k in range(1, 10):
                self.assert_freeze_invariance(spec, init, make_cumulative_plan(direction, k, blocks), data, epochs=2)


class GradientTest(SimpleTestCase):
    """Tests pour le flux et la justesse des gradients"""

    def test_probe_frozen_and_trainable(self):
        """Test gradients non nuls pour les couches entraînables, absents pour les gelées"""
        graph = initialize_weights(build_unet(SMALL_SPEC), seed=0)
        blocks = enumerate_blocks(graph)
        apply_freeze_plan(graph, FreezePlan(frozenset({1}), "k1"), blocks)
        images, masks = make_data(4)
        norms = probe_gradients(graph, images, masks)
        for name in blocks[0].parameter_layer_names:
            self.assertGreater(norms[name], 0.0)
        for block in blocks[1:]:
            for name in block.parameter_layer_names:
                self.assertIsNone(norms[name])

    def test_finite_differences_depth1(self):
        """Test gradients analytiques contre différences finies centrées (float64, 8x8)"""
        graph = initialize_weights(build_unet(ArchitectureSpec(8, 8, 1, depth=1, base_filters=2)), seed=4)
        module = graph.module.double()
        module.eval()
        generator = torch.Generator().manual_seed(0)
        x = torch.rand(2, 1, 8, 8, generator=generator, dtype=torch.float64)
        y = (torch.rand(2, 1, 8, 8, generator=generator, dtype=torch.float64) > 0.5).double()

        module.zero_grad()
        bce_loss(module(x), y).backward()
        h = 1e-6
        for name, tensor in graph.named_tensors().items():
            analytic = tensor.grad.detach().clone().flatten()
            for index in torch.topk(analytic.abs(), k=min(3, analytic.numel())).indices.tolist():
                flat = tensor.data.view(-1)
                original = float(flat[index])
                with torch.no_grad():
                    flat[index] = original + h
                    plus = float(bce_loss(module(x), y))
                    flat[index] = original - h
                    minus = float(bce_loss(module(x), y))
                    flat[index] = original
                numeric = (plus - minus) / (2 * h)
                self.assertLessEqual(abs(numeric - float(analytic[index])), 1e-4 * abs(float(analytic[index])) + 1e-9, name)


class PredictTest(SimpleTestCase):
    """Tests pour l'inférence et la binarisation"""

    def test_output_range_and_shape(self):
        """Test valeurs dans (0,1) et forme (H, W, 1)"""
        graph = initialize_weights(build_unet(SMALL_SPEC), seed=0)
        ckpt = snapshot(graph)
        image = np.random.default_rng(0).random((16, 16)).astype(np.float32)
        out = predict(graph, ckpt, image)
        self.assertEqual(out.shape, (16, 16, 1))
        self.assertGreater(float(out.min()), 0.0)
        self.assertLess(float(out.max()), 1.0)
        np.testing.assert_array_equal(out, predict(graph, ckpt, image.copy()))

    def test_saturated_output_stays_open_interval(self):
        """Test une tête saturée reste strictement dans (0,1)"""
        graph = initialize_weights(build_unet(SMALL_SPEC), seed=0)
        with torch.no_grad():
            graph.module.convs["head"].bias.fill_(100.0)
        out = predict(graph, None, np.ones((16, 16), np.float32))
        self.assertLess(float(out.max()), 1.0)

    def test_reference_size_output(self):
        """Test un réseau de profondeur 5 aléatoire : sortie 256x256x1"""
        graph = initialize_weights(build_unet(ArchitectureSpec(256, 256, 1, depth=5, base_filters=2)), seed=0)
        out = predict(graph, None, np.random.default_rng(1).random((256, 256)))
        self.assertEqual(out.shape, (256, 256, 1))

    def test_shape_mismatch(self):
        """Test une image de mauvaise taille"""
        graph = build_unet(SMALL_SPEC)
        with self.assertRaises(ArgumentError):
            predict(graph, None, np.zeros((20, 16), np.float32))

    def test_binarize_strict(self):
        """Test la règle stricte "au-dessus de 0.5" """
        self.assertEqual(binarize(np.array([0.7, 0.3, 0.5])).tolist(), [1, 0, 0])
        self.assertEqual(int(binarize(np.zeros((4, 4))).sum()), 0)
        self.assertEqual(binarize(np.array([0.6]), threshold=0.65).tolist(), [0])


class CheckpointTest(SimpleTestCase):
    """Tests pour la sérialisation des checkpoints"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.graph = initialize_weights(build_unet(SMALL_SPEC), seed=9)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_bit_exact(self):
        """Test relecture identique des tenseurs, du journal et de la provenance"""
        log = [{"epoch": i + 1, "train_loss": 1.0 / (i + 1), "val_loss": None} for i in range(40)]
        ckpt = snapshot(self.graph, log, {"kind": "pretrain", "parent": None})
        loaded = load_checkpoint(save_checkpoint(ckpt, self.root / "a.ckpt"), graph=self.graph)
        self.assertEqual(loaded.checkpoint_id, ckpt.checkpoint_id)
        self.assertEqual(len(loaded.training_log), 40)
        self.assertEqual(loaded.training_log, log)
        self.assertEqual(loaded.provenance, ckpt.provenance)
        for name, array in ckpt.tensors.items():
            self.assertEqual(loaded.tensors[name].dtype, np.float32)
            np.testing.assert_array_equal(loaded.tensors[name], array)

    def test_round_trip_optimizer_state(self):
        """Test la relecture de l'état d'Adam"""
        ckpt = finetune(
            build_unet(SMALL_SPEC), snapshot(self.graph), FreezePlan(frozenset({3}), "k"), make_data(4), TrainConfig(epochs=1)
        )
        loaded = load_checkpoint(save_checkpoint(ckpt, self.root / "b.ckpt"))
        self.assertEqual(loaded.optimizer_state["steps"], ckpt.optimizer_state["steps"])
        for name, array in ckpt.optimizer_state["exp_avg_sq"].items():
            np.testing.assert_array_equal(loaded.optimizer_state["exp_avg_sq"][name], array)

    def test_incompatible_graph(self):
        """Test le refus d'une empreinte différente"""
        path = save_checkpoint(snapshot(self.graph), self.root / "c.ckpt")
        with self.assertRaises(CheckpointIncompatibleError):
            load_checkpoint(path, graph=build_unet(ArchitectureSpec(16, 16, 1, depth=2, base_filters=8)))

    def test_truncated_file(self):
        """Test une archive tronquée"""
        path = save_checkpoint(snapshot(self.graph), self.root / "d.ckpt")
        payload = path.read_bytes()
        path.write_bytes(payload[: len(payload) // 2])
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_corrupted_payload(self):
        """Test un octet de tenseur modifié"""
        path = save_checkpoint(snapshot(self.graph), self.root / "e.ckpt")
        with zipfile.ZipFile(path) as archive:
            info = archive.getinfo("tensors/conv01.weight.bin")
        # en-tête local : 30 octets fixes, nom, champ extra, puis les données
        offset = info.header_offset + 30 + len(info.filename.encode("utf-8")) + len(info.extra) + 4
        payload = bytearray(path.read_bytes())
        payload[offset] ^= 0xFF
        path.write_bytes(bytes(payload))
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_not_an_archive(self):
        """Test un fichier qui n'est pas un checkpoint"""
        path = self.root / "f.ckpt"
        path.write_bytes(b"not a checkpoint")
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(path)
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(self.root / "missing.ckpt")

    def test_checkpoint_id_depends_on_content(self):
        """Test l'identifiant de contenu"""
        ckpt = snapshot(self.graph)
        other = Checkpoint(ckpt.architecture_fingerprint, {k: v + 1 for k, v in ckpt.tensors.items()})
        self.assertNotEqual(ckpt.checkpoint_id, other.checkpoint_id)
        self.assertEqual(ckpt.checkpoint_id, snapshot(self.graph).checkpoint_id)
