# Tests pour l'application Insights

import tempfile
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import torch
from django.test import SimpleTestCase, tag

from architecture.services.unet import ArchitectureSpec, build_unet, initialize_weights
from core.exceptions import ArgumentError, ConfigurationError
from experiments.services.runner import SweepResult
from ingestion.services.preprocessing import load_arrays
from ingestion.services.synthetic import generate_synthetic_dataset
from insights.services.activation import (
    ActMaxConfig,
    activation_maximization,
    activation_trace,
    seeded_input,
    total_variation,
    unit_activation,
)
from insights.services.figures import (
    build_panel_figure,
    plot_sweep,
    qualitative_panel,
    save_activation_grid,
    sweep_results_from_rows,
)
from scoring.services.exports import ResultRow
from scoring.services.metrics import MaskScores, summarize
from training.services.checkpoints import snapshot
from training.services.engine import TrainConfig, pretrain

SMALL_SPEC = ArchitectureSpec(16, 16, 1, depth=2, base_filters=4)


def random_baselines(count=100, shape=(16, 16), seed=1234):
    rng = np.random.default_rng(seed)
    return [rng.random(shape).astype(np.float32) for _ in range(count)]


def alive_units(graph, layer_index, seed, limit):
    """Filtres actifs sur l'entrée de départ (un filtre mort n'a pas de gradient)"""
    start = seeded_input(graph, seed)[0, 0].numpy()
    layer = graph.conv_by_ordinal(layer_index)
    units = [u for u in range(layer.out_channels) if unit_activation(graph, start, layer_index, u) > 0]
    return units[:limit]


class ActivationMaximizationTest(SimpleTestCase):
    """Tests pour la maximisation d'activation"""

    def setUp(self):
        self.graph = initialize_weights(build_unet(SMALL_SPEC), seed=3)

    def assert_dominates(self, graph, layer_index, units, steps=256, size=(16, 16)):
        baselines = random_baselines(shape=size)
        for unit in units:
            cfg = ActMaxConfig(layer_index=layer_index, unit_index=unit, steps=steps, seed=7)
            image = activation_maximization(graph, None, cfg)
            optimized = unit_activation(graph, image, layer_index, unit)
            best_random = max(unit_activation(graph, x, layer_index, unit) for x in baselines)
            self.assertGreaterEqual(optimized, best_random, f"conv{layer_index:02d}/{unit}")

    def test_dominance_shallow_and_deep(self):
        """Test que l'image optimisée domine 100 entrées aléatoires (couche 1 et goulot)"""
        deepest = self.graph.conv_layers[3].conv_ordinal
        for layer_index in (1, deepest):
            units = alive_units(self.graph, layer_index, seed=7, limit=2)
            self.assertTrue(units, f"aucun filtre actif en conv{layer_index:02d}")
            self.assert_dominates(self.graph, layer_index, units)

    def test_monotone_ascent_first_layer(self):
        """Test la montée non décroissante (moyenne sur 10 graines, 64 pas de 0.01, sans régularisation)"""
        traces = [
            activation_trace(
                self.graph,
                ActMaxConfig(layer_index=1, unit_index=0, steps=64, step_size=0.01, seed=seed, regularization_weight=0.0),
            )
            for seed in range(10)
        ]
        mean = np.mean(traces, axis=0)
        self.assertEqual(len(mean), 64)
        self.assertTrue(np.all(np.diff(mean) >= -1e-6), np.diff(mean).min())

    def test_zero_steps_returns_seeded_input(self):
        """Test steps=0 : l'entrée aléatoire initiale est renvoyée telle quelle"""
        image = activation_maximization(self.graph, None, ActMaxConfig(layer_index=2, unit_index=1, steps=0, seed=5))
        np.testing.assert_array_equal(image, seeded_input(self.graph, 5)[0, 0].numpy())
        self.assertEqual(image.shape, (16, 16))

    def test_output_in_unit_range(self):
        """Test que l'image reste dans [0, 1]"""
        image = activation_maximization(self.graph, None, ActMaxConfig(layer_index=3, unit_index=0, steps=20, step_size=0.5))
        self.assertGreaterEqual(image.min(), 0.0)
        self.assertLessEqual(image.max(), 1.0)

    def test_invalid_indices(self):
        """Test l'erreur d'argument sur une couche ou un filtre inexistant"""
        for layer_index, unit_index in ((0, 0), (7, 0), (1, 4), (1, -1)):
            with self.assertRaises(ArgumentError):
                activation_maximization(self.graph, None, ActMaxConfig(layer_index=layer_index, unit_index=unit_index, steps=1))

    def test_checkpoint_weights_are_used(self):
        """Test que les poids du checkpoint remplacent ceux du graphe"""
        trained = initialize_weights(build_unet(SMALL_SPEC), seed=11)
        cfg = ActMaxConfig(layer_index=2, unit_index=0, steps=5)
        expected = activation_maximization(trained, None, cfg)
        np.testing.assert_array_equal(activation_maximization(self.graph, snapshot(trained), cfg), expected)

    def test_config_validation(self):
        """Test la validation de la configuration"""
        with self.assertRaises(ConfigurationError):
            ActMaxConfig.from_dict({"layer_index": 1, "unit_index": 0, "steps": -1})
        with self.assertRaises(ConfigurationError):
            ActMaxConfig.from_dict({"layer_index": 1, "unit_index": 0, "momentum": 0.9})
        cfg = ActMaxConfig.from_dict({"layer_index": 4, "unit_index": 2})
        self.assertEqual((cfg.steps, cfg.step_size, cfg.regularization_weight), (512, 0.1, 1e-3))

    def test_total_variation(self):
        """Test la variation totale d'une image constante et d'un damier"""
        self.assertEqual(float(total_variation(torch.ones(1, 1, 4, 4))), 0.0)
        checker = torch.tensor([[0.0, 1.0], [1.0, 0.0]]).repeat(2, 2)[None, None]
        self.assertAlmostEqual(float(total_variation(checker)), 2.0)

    @tag("slow")
    def test_dominance_trained_model(self):
        """Test la dominance pour 5 filtres peu profonds et 5 du goulot d'un modèle entraîné"""
        spec = ArchitectureSpec(32, 32, 1, depth=3, base_filters=8)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = generate_synthetic_dataset("blobs", 40, (32, 32), seed=2, output_dir=tmp)
            arrays = load_arrays(manifest, (32, 32))
            graph = build_unet(spec)
            pretrain(graph, arrays, TrainConfig(epochs=10, batch_size=8, learning_rate=1e-3, seed=2))
        deepest = graph.conv_layers[5].conv_ordinal
        for layer_index in (2, deepest):
            units = alive_units(graph, layer_index, seed=7, limit=5)
            self.assert_dominates(graph, layer_index, units, steps=256, size=(32, 32))


def fake_summary(dice_values):
    return summarize([MaskScores(d, 100 * (1 - d), d - 0.05) for d in dice_values])


def fake_sweep(direction, block_count, offset=0.0):
    points = [(k, fake_summary([0.6 + 0.02 * k + offset, 0.62 + 0.02 * k + offset])) for k in range(1, block_count + 1)]
    return SweepResult(direction=direction, points=points, blocks=block_count)


class SweepPlotTest(SimpleTestCase):
    """Tests pour les courbes de balayage"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_two_directions_byte_identical(self):
        """Test deux courbes de 9 points et un rendu identique octet pour octet"""
        results = [fake_sweep("shallow_to_deep", 9), fake_sweep("deep_to_shallow", 9, offset=-0.05)]
        first = plot_sweep(results, self.out / "a.png")
        second = plot_sweep(results, self.out / "b.png")
        self.assertTrue(first.read_bytes().startswith(b"\x89PNG"))
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_single_point(self):
        """Test un balayage d'un seul point"""
        self.assertTrue(plot_sweep([fake_sweep("shallow_to_deep", 1)], self.out / "one.png").is_file())

    def test_errors(self):
        """Test les erreurs : liste vide, nombres de blocs différents"""
        with self.assertRaises(ArgumentError):
            plot_sweep([], self.out / "empty.png")
        with self.assertRaises(ArgumentError):
            plot_sweep([fake_sweep("shallow_to_deep", 9), fake_sweep("deep_to_shallow", 5)], self.out / "bad.png")
        self.assertFalse((self.out / "bad.png").exists())

    def test_sweep_results_from_rows(self):
        """Test la reconstruction des balayages depuis les lignes de résultats"""
        rows = [
            ResultRow("run", f"shallow_to_deep_k{k}", k, fold, 0.5 + 0.1 * k, 10.0, 0.4)
            for k in (1, 2, 3)
            for fold in (1, 2)
        ]
        rows.append(ResultRow("run", "contracting_tuned", 2, 1, 0.9, 5.0, 0.8))
        results = sweep_results_from_rows(rows)
        self.assertEqual(len(results), 1)
        self.assertEqual([k for k, _ in results[0].points], [1, 2, 3])
        self.assertEqual(results[0].block_count, 3)
        self.assertAlmostEqual(results[0].points[1][1].mean["dice"], 0.7)


class PanelTest(SimpleTestCase):
    """Tests pour les panneaux qualitatifs"""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.images = [rng.random((8, 8)) for _ in range(3)]
        self.masks = [(image > 0.5).astype(np.uint8) for image in self.images]

    def geometry(self, fig):
        return fig.axes[0].get_subplotspec().get_gridspec().get_geometry()

    def test_three_cases_three_sets(self):
        """Test la grille 3x5 et les titres des colonnes"""
        sets = [("pretrained", self.masks), ("expanding_tuned", self.masks), ("contracting_tuned", self.masks)]
        fig = build_panel_figure(self.images, self.masks, sets)
        try:
            self.assertEqual(self.geometry(fig), (3, 5))
            self.assertEqual(len(fig.axes), 15)
            self.assertEqual(fig.axes[4].get_title(), "contracting_tuned")
        finally:
            plt.close(fig)

    def test_single_case_no_prediction(self):
        """Test la grille 1x2"""
        fig = build_panel_figure(self.images[:1], self.masks[:1], [])
        try:
            self.assertEqual(self.geometry(fig), (1, 2))
        finally:
            plt.close(fig)

    def test_binary_masks_render_black_and_white(self):
        """Test qu'un masque binaire est rendu en noir et blanc purs"""
        fig = build_panel_figure(self.images[:1], self.masks[:1], {"pred": self.masks[:1]})
        try:
            image = fig.axes[1].get_images()[0]
            rgba = image.to_rgba(image.get_array())
            self.assertTrue(set(np.unique(rgba[..., :3]).tolist()) <= {0.0, 1.0})
        finally:
            plt.close(fig)

    def test_errors(self):
        """Test les erreurs de longueur et de masque non binaire"""
        with self.assertRaises(ArgumentError):
            build_panel_figure(self.images, self.masks[:2], [])
        with self.assertRaises(ArgumentError):
            build_panel_figure(self.images, self.masks, [("pred", self.masks[:1])])
        with self.assertRaises(ArgumentError):
            build_panel_figure(self.images, self.images, [])

    def test_panel_file(self):
        """Test l'écriture du panneau et de la grille d'activations"""
        with tempfile.TemporaryDirectory() as tmp:
            panel = qualitative_panel(self.images, self.masks, [("pred", self.masks)], Path(tmp) / "panel.png")
            grid = save_activation_grid([(f"u{i}", image) for i, image in enumerate(self.images)], Path(tmp) / "grid.png", 2)
            self.assertTrue(panel.is_file())
            self.assertTrue(grid.is_file())
            with self.assertRaises(ArgumentError):
                save_activation_grid([], Path(tmp) / "none.png")
