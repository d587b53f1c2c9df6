# Tests pour l'application Architecture

import torch
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from architecture.services.blocks import BlockRole, enumerate_blocks
from architecture.services.freeze import (
    FreezePlan,
    apply_freeze_plan,
    make_cumulative_plan,
    make_two_part_plan,
    plan_from_label,
    read_freeze_plan,
)
from architecture.services.parameters import count_parameters, describe_parameters
from architecture.services.unet import ArchitectureSpec, LayerKind, build_unet, initialize_weights
from core.exceptions import ArgumentError, ConfigurationError, StructuralError


def conv_formula(k, c_in, c_out):
    return k * k * c_in * c_out + c_out


class BuildUNetTest(SimpleTestCase):
    """Tests pour la construction du graphe"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.reference_graph = build_unet(ArchitectureSpec(256, 256, 1, depth=5, base_filters=64))

    def test_filter_ladder_depth5(self):
        """Test l'échelle de filtres 64..1024 et la forme de sortie"""
        ladder = [layer.out_channels for layer in self.reference_graph.conv_layers[:10:2]]
        self.assertEqual(ladder, [64, 128, 256, 512, 1024])
        self.assertEqual(self.reference_graph.output_shape, (256, 256, 1))

    def test_layer_counts_depth5(self):
        """Test 18 convolutions 3x3, une tête, 4 maxpools et 4 upsamplings"""
        graph = self.reference_graph
        self.assertEqual(len(graph.conv_layers), 18)
        self.assertEqual(len(graph.layers_of_kind(LayerKind.HEAD)), 1)
        self.assertEqual(len(graph.layers_of_kind(LayerKind.MAXPOOL)), 4)
        self.assertEqual(len(graph.layers_of_kind(LayerKind.UPSAMPLE)), 4)

    def test_depth1_degenerate(self):
        """Test un réseau de profondeur 1 : deux convolutions et la tête"""
        graph = build_unet(ArchitectureSpec(32, 32, 1, depth=1, base_filters=8))
        self.assertEqual(len(graph.conv_layers), 2)
        self.assertEqual(len(graph.layers_of_kind(LayerKind.MAXPOOL)), 0)
        self.assertEqual(len(graph.layers_of_kind(LayerKind.UPSAMPLE)), 0)
        self.assertEqual(graph.layers[-1].kind, LayerKind.HEAD)

    def test_depth3_counts(self):
        """Test 4*depth-2 convolutions pour une profondeur 3"""
        graph = build_unet(ArchitectureSpec(128, 128, 1, depth=3, base_filters=16))
        self.assertEqual(len(graph.conv_layers), 10)
        self.assertEqual(len(graph.layers_of_kind(LayerKind.MAXPOOL)), 2)
        self.assertEqual(len(graph.layers_of_kind(LayerKind.UPSAMPLE)), 2)

    def test_dropout_after_bottleneck(self):
        """Test le dropout placé juste après la 2e convolution du goulot"""
        graph = self.reference_graph
        dropout = graph.layers_of_kind(LayerKind.DROPOUT)
        self.assertEqual(len(dropout), 1)
        previous = graph.layers[dropout[0].position - 1]
        self.assertEqual(previous.conv_ordinal, 10)

    def test_no_normalization_layers(self):
        """Test l'absence de normalisation"""
        for module in self.reference_graph.module.modules():
            self.assertNotIsInstance(module, (torch.nn.BatchNorm2d, torch.nn.GroupNorm, torch.nn.InstanceNorm2d))

    def test_skip_links_same_resolution(self):
        """Test que chaque lien de saut relie deux couches de même résolution"""
        graph = self.reference_graph
        self.assertEqual(len(graph.skip_links), 4)
        for src, dst in graph.skip_links:
            self.assertEqual(graph.layers[src].kind, LayerKind.CONV3X3)
            self.assertEqual(graph.layers[dst].kind, LayerKind.CONCAT)
            self.assertEqual(
                (graph.layers[src].height, graph.layers[src].width), (graph.layers[dst].height, graph.layers[dst].width)
            )

    def test_invalid_spec_names_field(self):
        """Test les erreurs de configuration"""
        with self.assertRaises(ConfigurationError) as ctx:
            build_unet(ArchitectureSpec(250, 256, 1, depth=5, base_filters=8))
        self.assertEqual(ctx.exception.field, "input_height")
        with self.assertRaises(ConfigurationError) as ctx:
            build_unet(ArchitectureSpec(256, 256, 1, depth=0, base_filters=8))
        self.assertEqual(ctx.exception.field, "depth")
        with self.assertRaises(ConfigurationError) as ctx:
            build_unet(ArchitectureSpec(256, 256, 1, depth=2, base_filters=8, dropout_rate=1.5))
        self.assertEqual(ctx.exception.field, "dropout_rate")

    def test_spec_json_round_trip(self):
        """Test la sérialisation JSON de la spécification"""
        spec = ArchitectureSpec(128, 64, 1, depth=3, base_filters=16, dropout_rate=0.25)
        self.assertEqual(ArchitectureSpec.from_json(spec.to_json()), spec)

    def test_spec_unknown_field(self):
        """Test le rejet d'un champ inconnu"""
        with self.assertRaises(ConfigurationError) as ctx:
            ArchitectureSpec.from_dict({"depth": 3, "batchnorm": True})
        self.assertEqual(ctx.exception.field, "architecture.batchnorm")

    def test_fingerprint_is_deterministic(self):
        """Test l'empreinte d'architecture"""
        spec = ArchitectureSpec(64, 64, 1, depth=3, base_filters=4)
        self.assertEqual(build_unet(spec).fingerprint, build_unet(spec).fingerprint)
        other = build_unet(ArchitectureSpec(64, 64, 1, depth=3, base_filters=8))
        self.assertNotEqual(build_unet(spec).fingerprint, other.fingerprint)

    def test_initialization_is_seeded(self):
        """Test l'initialisation He uniforme reproductible et les biais nuls"""
        spec = ArchitectureSpec(32, 32, 1, depth=2, base_filters=4)
        a = initialize_weights(build_unet(spec), seed=3)
        b = initialize_weights(build_unet(spec), seed=3)
        for (name, ta), tb in zip(a.named_tensors().items(), b.named_tensors().values()):
            self.assertTrue(torch.equal(ta, tb), name)
            if name.endswith(".bias"):
                self.assertEqual(float(ta.abs().sum()), 0.0)
        first = a.named_tensors()["conv01.weight"]
        self.assertLessEqual(float(first.abs().max()), (6.0 / 9) ** 0.5)

    @settings(max_examples=12, deadline=None)
    @given(
        depth=st.integers(min_value=1, max_value=3),
        multiple_h=st.integers(min_value=1, max_value=3),
        multiple_w=st.integers(min_value=1, max_value=3),
    )
    def test_shape_preservation(self, depth, multiple_h, multiple_w):
        """Test que la sortie a la taille de l'entrée, un canal, valeurs dans [0,1]"""
        factor = 2 ** (depth - 1)
        spec = ArchitectureSpec(8 * factor * multiple_h, 8 * factor * multiple_w, 1, depth=depth, base_filters=2)
        graph = build_unet(spec)
        graph.module.eval()
        with torch.no_grad():
            out = graph.module(torch.rand(2, 1, spec.input_height, spec.input_width))
        self.assertEqual(tuple(out.shape), (2, 1, spec.input_height, spec.input_width))
        self.assertGreaterEqual(float(out.min()), 0.0)
        self.assertLessEqual(float(out.max()), 1.0)


class BlocksTest(SimpleTestCase):
    """Tests pour le découpage en blocs"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.graph = build_unet(ArchitectureSpec(64, 64, 1, depth=5, base_filters=4))
        cls.blocks = enumerate_blocks(cls.graph)

    def test_nine_blocks_depth5(self):
        """Test 9 blocs dont les 5 premiers couvrent les convolutions 1 à 10"""
        self.assertEqual(len(self.blocks), 9)
        covered = [o for b in self.blocks[:5] for o in b.conv_layer_indices]
        self.assertEqual(covered, list(range(1, 11)))
        self.assertEqual(self.blocks[4].role, BlockRole.BOTTLENECK)
        self.assertEqual(self.blocks[8].role, BlockRole.HEAD_ATTACHED)
        self.assertIn("head", self.blocks[8].layer_names)

    def test_partition_of_conv_layers(self):
        """Test que chaque convolution 3x3 appartient à exactement un bloc"""
        ordinals = [o for b in self.blocks for o in b.conv_layer_indices]
        self.assertEqual(sorted(ordinals), list(range(1, 19)))
        self.assertEqual(len(ordinals), len(set(ordinals)))
        for block in self.blocks:
            self.assertEqual(len(block.conv_layer_indices), 2)

    def test_depth_rank_total_order(self):
        """Test le rang de profondeur (plus long chemin)"""
        ranks = [b.depth_rank for b in self.blocks]
        self.assertEqual(ranks, list(range(1, 10)))

    def test_depth1_and_depth3(self):
        """Test les profondeurs 1 et 3"""
        single = enumerate_blocks(build_unet(ArchitectureSpec(16, 16, 1, depth=1, base_filters=2)))
        self.assertEqual(len(single), 1)
        self.assertEqual(single[0].conv_layer_indices, (1, 2))
        self.assertIn("head", single[0].parameter_layer_names)
        three = enumerate_blocks(build_unet(ArchitectureSpec(32, 32, 1, depth=3, base_filters=2)))
        self.assertEqual(len(three), 5)

    def test_unrecognized_topology(self):
        """Test l'erreur structurelle sur un graphe modifié"""
        graph = build_unet(ArchitectureSpec(32, 32, 1, depth=3, base_filters=2))
        graph.layers = graph.layers[:-1]
        with self.assertRaises(StructuralError):
            enumerate_blocks(graph)


class FreezePlanTest(SimpleTestCase):
    """Tests pour les plans de gel"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.graph = build_unet(ArchitectureSpec(64, 64, 1, depth=5, base_filters=4))
        cls.blocks = enumerate_blocks(cls.graph)

    def test_two_part_plans(self):
        """Test les plans contractant / expansif"""
        contracting = make_two_part_plan("contracting", self.blocks)
        expanding = make_two_part_plan("expanding", self.blocks)
        self.assertEqual(contracting.trainable_blocks, {1, 2, 3, 4, 5})
        self.assertEqual(expanding.trainable_blocks, {6, 7, 8, 9})
        self.assertEqual(contracting.label, "contracting_tuned")
        self.assertEqual(expanding.label, "expanding_tuned")
        self.assertFalse(contracting.trainable_blocks & expanding.trainable_blocks)
        self.assertEqual(contracting.trainable_blocks | expanding.trainable_blocks, set(range(1, 10)))

    def test_two_part_depth1(self):
        """Test que les deux parties désignent le réseau entier en profondeur 1"""
        blocks = enumerate_blocks(build_unet(ArchitectureSpec(16, 16, 1, depth=1, base_filters=2)))
        self.assertEqual(make_two_part_plan("contracting", blocks).trainable_blocks, {1})
        self.assertEqual(make_two_part_plan("expanding", blocks).trainable_blocks, {1})

    def test_cumulative_examples(self):
        """Test les plans cumulatifs de référence"""
        self.assertEqual(
            make_cumulative_plan("shallow_to_deep", 5, self.blocks).trainable_blocks,
            make_two_part_plan("contracting", self.blocks).trainable_blocks,
        )
        self.assertEqual(make_cumulative_plan("deep_to_shallow", 1, self.blocks).trainable_blocks, {9})
        self.assertEqual(
            make_cumulative_plan("shallow", 9, self.blocks).trainable_blocks,
            make_cumulative_plan("deep", 9, self.blocks).trainable_blocks,
        )

    def test_cumulative_out_of_range(self):
        """Test le rejet de k hors bornes"""
        for k in (0, 10):
            with self.assertRaises(ArgumentError):
                make_cumulative_plan("shallow_to_deep", k, self.blocks)

    @given(direction=st.sampled_from(["shallow_to_deep", "deep_to_shallow"]), k=st.integers(min_value=1, max_value=8))
    def test_sweep_nesting(self, direction, k):
        """Test l'emboîtement plan(k) ⊂ plan(k+1) et |plan(k)| = k"""
        current = make_cumulative_plan(direction, k, self.blocks).trainable_blocks
        following = make_cumulative_plan(direction, k + 1, self.blocks).trainable_blocks
        self.assertEqual(len(current), k)
        self.assertTrue(current < following)

    @given(k=st.integers(min_value=1, max_value=8))
    def test_cross_direction_complement(self, k):
        """Test que shallow(k) et deep(9-k) partitionnent les blocs"""
        shallow = make_cumulative_plan("shallow_to_deep", k, self.blocks).trainable_blocks
        deep = make_cumulative_plan("deep_to_shallow", 9 - k, self.blocks).trainable_blocks
        self.assertFalse(shallow & deep)
        self.assertEqual(shallow | deep, set(range(1, 10)))

    def test_plan_from_label(self):
        """Test la résolution des libellés de configuration"""
        self.assertEqual(plan_from_label("contracting_tuned", self.blocks).trainable_blocks, {1, 2, 3, 4, 5})
        self.assertEqual(plan_from_label("all_blocks", self.blocks).trainable_blocks, set(range(1, 10)))
        plan = plan_from_label("deep_to_shallow_k2", self.blocks)
        self.assertEqual((plan.label, plan.trainable_blocks), ("deep_to_shallow_k2", {8, 9}))
        for label in ("decoder_only", "shallow_to_deep_k10"):
            with self.assertRaises(ArgumentError):
                plan_from_label(label, self.blocks)

    def test_empty_plan_rejected(self):
        """Test qu'un plan sans bloc entraînable est refusé"""
        with self.assertRaises(ArgumentError):
            FreezePlan(frozenset(), "frozen")

    def test_apply_contracting(self):
        """Test l'application du plan {1..5}"""
        graph = build_unet(ArchitectureSpec(64, 64, 1, depth=5, base_filters=4))
        apply_freeze_plan(graph, FreezePlan(frozenset({1, 2, 3, 4, 5}), "contracting"))
        for layer in graph.conv_layers:
            self.assertEqual(graph.is_trainable(layer.name), layer.conv_ordinal <= 10, layer.name)
        self.assertFalse(graph.is_trainable("head"))
        self.assertFalse(graph.is_trainable("pool1"))

    def test_apply_deepest_block(self):
        """Test le plan {9} : convolutions 17-18, upconv du bloc et tête"""
        graph = build_unet(ArchitectureSpec(64, 64, 1, depth=5, base_filters=4))
        apply_freeze_plan(graph, FreezePlan(frozenset({9}), "deepest"))
        trainable = {name for name, flag in graph.trainable_flags().items() if flag}
        self.assertEqual(trainable, {"upconv1", "conv17", "conv18", "head"})

    def test_apply_unknown_block(self):
        """Test l'erreur sur un bloc inconnu"""
        graph = build_unet(ArchitectureSpec(32, 32, 1, depth=3, base_filters=2))
        with self.assertRaises(ArgumentError):
            apply_freeze_plan(graph, FreezePlan(frozenset({6}), "bad"))

    @given(blocks=st.sets(st.integers(min_value=1, max_value=9), min_size=1))
    @settings(max_examples=30, deadline=None)
    def test_apply_then_read_back(self, blocks):
        """Test que relire un plan appliqué redonne le même ensemble"""
        apply_freeze_plan(self.graph, FreezePlan(frozenset(blocks), "any"), self.blocks)
        self.assertEqual(read_freeze_plan(self.graph).trainable_blocks, blocks)


class ParameterCountTest(SimpleTestCase):
    """Tests pour le comptage des paramètres"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.graph = build_unet(ArchitectureSpec(256, 256, 1, depth=5, base_filters=64))

    def test_first_conv_and_block1(self):
        """Test 640 paramètres pour la 1re convolution et 37 568 pour le bloc 1"""
        self.assertEqual(self.graph.conv_by_ordinal(1).parameter_count, 640)
        self.assertEqual(count_parameters(self.graph, "per_block")[1], 37568)

    def test_contracting_total_matches_summation(self):
        """Test le total contractant contre une sommation indépendante"""
        channels = [1, 64, 64, 128, 128, 256, 256, 512, 512, 1024, 1024]
        oracle = sum(conv_formula(3, channels[i], channels[i + 1]) for i in range(10))
        self.assertEqual(oracle, 18842048)
        per_block = count_parameters(self.graph, "per_block")
        self.assertEqual(sum(per_block[i] for i in range(1, 6)), oracle)

    def test_expanding_total(self):
        """Test le total expansif (upconv 2x2 comprises, tête incluse)"""
        per_block = count_parameters(self.graph, "per_block")
        self.assertEqual(sum(per_block[i] for i in range(6, 10)), 12188545)

    def test_formula_matches_torch(self):
        """Test que la formule correspond au nombre d'éléments des tenseurs torch"""
        numel = sum(p.numel() for p in self.graph.module.parameters())
        self.assertEqual(count_parameters(self.graph, "all"), numel)

    def test_trainable_plus_frozen(self):
        """Test all = trainable + frozen pour un plan quelconque"""
        graph = build_unet(ArchitectureSpec(64, 64, 1, depth=5, base_filters=4))
        apply_freeze_plan(graph, FreezePlan(frozenset({2, 7, 9}), "mixed"))
        self.assertEqual(count_parameters(graph, "all"), count_parameters(graph, "trainable") + count_parameters(graph, "frozen"))
        rows = describe_parameters(graph)
        self.assertEqual([r["block"] for r in rows if r["trainable"]], [2, 7, 9])
