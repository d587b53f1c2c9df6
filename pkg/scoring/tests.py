# Tests pour l'application Scoring

import itertools
import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import adjusted_rand_score

from core.exceptions import ArgumentError, IngestionError
from scoring.services.exports import ResultRow, read_results_csv, write_results_csv, write_summary_json
from scoring.services.metrics import (
    ConfusionCounts,
    MaskScores,
    adjusted_rand,
    confusion,
    dice,
    evaluate_masks,
    fold_average,
    pixel_error,
    summarize,
)

masks_8x8 = arrays(np.uint8, (8, 8), elements=st.integers(0, 1))


def brute_force_counts(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(pred.flatten().tolist(), gt.flatten().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def pair_enumeration_ari(pred, gt):
    """Indice de Rand ajusté par énumération explicite des paires de pixels"""
    p, g = pred.flatten().tolist(), gt.flatten().tolist()
    a = b = c = d = 0
    for i, j in itertools.combinations(range(len(p)), 2):
        same_pred, same_gt = p[i] == p[j], g[i] == g[j]
        if same_pred and same_gt:
            a += 1
        elif same_pred:
            b += 1
        elif same_gt:
            c += 1
        else:
            d += 1
    denominator = (a + b) * (b + d) + (a + c) * (c + d)
    if denominator == 0:
        return 1.0
    return 2 * (a * d - b * c) / denominator


class ConfusionTest(SimpleTestCase):
    """Tests pour les comptes de confusion"""

    def test_two_by_two_example(self):
        """Test l'exemple 2x2 : un pixel de chaque catégorie"""
        gt = np.array([[1, 1], [0, 0]])
        pred = np.array([[1, 0], [1, 0]])
        self.assertEqual(confusion(pred, gt), ConfusionCounts(tp=1, fp=1, fn=1, tn=1))

    def test_identical_and_complement(self):
        """Test masques identiques et complémentaires"""
        gt = np.zeros((6, 6), np.uint8)
        gt[1:4, 2:5] = 1
        same = confusion(gt, gt)
        self.assertEqual((same.fp, same.fn), (0, 0))
        inverted = confusion(1 - gt, gt)
        self.assertEqual((inverted.tp, inverted.tn), (0, 0))

    def test_invalid_inputs(self):
        """Test formes différentes et masques non binaires"""
        with self.assertRaises(ArgumentError):
            confusion(np.zeros((2, 2)), np.zeros((2, 3)))
        with self.assertRaises(ArgumentError):
            confusion(np.full((2, 2), 0.5), np.zeros((2, 2)))

    def test_bool_masks_accepted(self):
        """Test des masques booléens"""
        self.assertEqual(confusion(np.ones((2, 2), bool), np.ones((2, 2), bool)).tp, 4)


class DiceAndPixelErrorTest(SimpleTestCase):
    """Tests pour Dice et l'erreur pixel"""

    def test_formula_examples(self):
        """Test les valeurs de référence"""
        self.assertEqual(dice(ConfusionCounts(1, 1, 1, 1)), 0.5)
        self.assertEqual(dice(ConfusionCounts(5, 0, 0, 11)), 1.0)
        self.assertEqual(dice(ConfusionCounts(0, 3, 4, 9)), 0.0)
        self.assertEqual(dice(ConfusionCounts(0, 0, 0, 16)), 1.0)

    def test_pixel_error_examples(self):
        """Test 0 %, 100 % et 917 pixels faux sur 256x256"""
        gt = np.zeros((256, 256), np.uint8)
        gt[50:150, 60:160] = 1
        self.assertEqual(pixel_error(confusion(gt, gt)), 0.0)
        self.assertEqual(pixel_error(confusion(1 - gt, gt)), 100.0)
        pred = gt.copy()
        pred.flat[:917] = 1 - pred.flat[:917]
        self.assertAlmostEqual(pixel_error(confusion(pred, gt)), 100 * 917 / 65536, places=12)
        self.assertAlmostEqual(pixel_error(confusion(pred, gt)), 1.3992, places=4)

    def test_brute_force_oracle(self):
        """Test 1000 paires aléatoires 16x16 contre un décompte pixel à pixel"""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            density = rng.random()
            pred = (rng.random((16, 16)) < density).astype(np.uint8)
            gt = (rng.random((16, 16)) < rng.random()).astype(np.uint8)
            tp, fp, fn, tn = brute_force_counts(pred, gt)
            counts = confusion(pred, gt)
            expected_dice = 1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
            self.assertAlmostEqual(dice(counts), expected_dice, delta=1e-12)
            self.assertAlmostEqual(pixel_error(counts), 100 * (fp + fn) / 256, delta=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(a=masks_8x8, b=masks_8x8)
    def test_dice_symmetry(self, a, b):
        """Test dice(a, b) = dice(b, a)"""
        self.assertEqual(dice(confusion(a, b)), dice(confusion(b, a)))

    @settings(max_examples=50, deadline=None)
    @given(a=masks_8x8, b=masks_8x8)
    def test_dice_monotone_when_fixing_a_pixel(self, a, b):
        """Test que corriger un pixel faux ne fait jamais baisser Dice"""
        wrong = np.argwhere(a != b)
        if len(wrong) == 0:
            return
        fixed = a.copy()
        fixed[tuple(wrong[0])] = b[tuple(wrong[0])]
        self.assertGreaterEqual(dice(confusion(fixed, b)), dice(confusion(a, b)))


class AdjustedRandTest(SimpleTestCase):
    """Tests pour l'indice de Rand ajusté"""

    def test_identical_and_complement(self):
        """Test 1.0 pour un masque identique ou complémentaire"""
        gt = np.zeros((8, 8), np.uint8)
        gt[2:6, 2:5] = 1
        self.assertEqual(adjusted_rand(gt, gt), 1.0)
        self.assertEqual(adjusted_rand(1 - gt, gt), 1.0)

    def test_single_cluster_partitions(self):
        """Test deux partitions à un seul cluster"""
        self.assertEqual(adjusted_rand(np.zeros((4, 4)), np.zeros((4, 4))), 1.0)
        self.assertEqual(adjusted_rand(np.ones((4, 4)), np.zeros((4, 4))), 1.0)

    def test_two_by_two_example(self):
        """Test l'exemple 2x2 contre l'énumération des 6 paires"""
        gt = np.array([[1, 1], [0, 0]])
        pred = np.array([[1, 0], [1, 0]])
        self.assertAlmostEqual(adjusted_rand(pred, gt), pair_enumeration_ari(pred, gt), places=12)
        self.assertAlmostEqual(adjusted_rand(pred, gt), -0.5, places=12)

    def test_pair_enumeration_oracle(self):
        """Test masques aléatoires 8x8 contre l'énumération explicite des paires"""
        rng = np.random.default_rng(1)
        for _ in range(40):
            pred = (rng.random((8, 8)) < rng.random()).astype(np.uint8)
            gt = (rng.random((8, 8)) < rng.random()).astype(np.uint8)
            self.assertAlmostEqual(adjusted_rand(pred, gt), pair_enumeration_ari(pred, gt), delta=1e-9)

    def test_matches_sklearn(self):
        """Test l'accord avec sklearn.metrics.adjusted_rand_score"""
        rng = np.random.default_rng(2)
        for _ in range(30):
            pred = (rng.random((16, 16)) < 0.4).astype(np.uint8)
            gt = (rng.random((16, 16)) < 0.6).astype(np.uint8)
            self.assertAlmostEqual(adjusted_rand(pred, gt), adjusted_rand_score(gt.ravel(), pred.ravel()), delta=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(a=masks_8x8, b=masks_8x8)
    def test_symmetry(self, a, b):
        """Test adjusted_rand(a, b) = adjusted_rand(b, a)"""
        self.assertAlmostEqual(adjusted_rand(a, b), adjusted_rand(b, a), delta=1e-12)

    def test_independent_masks_near_zero(self):
        """Test une espérance proche de 0 pour des masques indépendants 64x64"""
        rng = np.random.default_rng(3)
        values = [adjusted_rand(rng.integers(0, 2, (64, 64)), rng.integers(0, 2, (64, 64))) for _ in range(100)]
        self.assertLess(abs(float(np.mean(values))), 0.02)

    def test_shape_mismatch(self):
        """Test formes différentes"""
        with self.assertRaises(ArgumentError):
            adjusted_rand(np.zeros((3, 3)), np.zeros((4, 4)))


class SummaryTest(SimpleTestCase):
    """Tests pour l'agrégation par fold"""

    def test_identical_folds(self):
        """Test cinq folds identiques : écart-type nul"""
        summary = summarize([MaskScores(0.8, 1.4, 0.7)] * 5)
        self.assertAlmostEqual(summary.mean["dice"], 0.8)
        self.assertEqual(summary.std["dice"], 0.0)
        self.assertEqual(summary.fold_count, 5)

    def test_mean_and_population_std(self):
        """Test la moyenne 0.80 et l'écart-type de population"""
        values = [0.78, 0.79, 0.80, 0.81, 0.82]
        summary = summarize([MaskScores(v, 1.0, 0.5) for v in values])
        self.assertAlmostEqual(summary.mean["dice"], 0.80, places=12)
        self.assertAlmostEqual(summary.std["dice"], float(np.std(values)), places=12)
        self.assertAlmostEqual(summary.std["dice"], 0.01414213562, places=8)

    def test_single_fold_and_empty(self):
        """Test un seul fold, puis une liste vide"""
        summary = summarize([MaskScores(0.5, 2.0, 0.4)])
        self.assertEqual(summary.mean["pixel_error_pct"], 2.0)
        self.assertEqual(summary.std["pixel_error_pct"], 0.0)
        with self.assertRaises(ArgumentError):
            summarize([])

    def test_per_image_then_fold_average(self):
        """Test l'agrégation image par image puis moyenne du fold"""
        gt = np.zeros((4, 4), np.uint8)
        gt[:2] = 1
        scores = evaluate_masks([gt, np.zeros_like(gt)], [gt, gt])
        self.assertEqual([s.dice for s in scores], [1.0, 0.0])
        self.assertEqual(fold_average(scores).dice, 0.5)
        self.assertEqual(fold_average(scores).pixel_error_pct, 25.0)
        with self.assertRaises(ArgumentError):
            evaluate_masks([gt], [gt, gt])
        with self.assertRaises(ArgumentError):
            fold_average([])


class ExportTest(SimpleTestCase):
    """Tests pour les exports CSV et JSON"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_results_csv(self):
        """Test colonnes et relecture de results.csv"""
        rows = [
            ResultRow("r1", "contracting_tuned", 5, 1, 0.81, 1.25, 0.74),
            ResultRow("r1", "pretrained", None, 1, 0.5, 4.0, 0.3),
        ]
        path = write_results_csv(rows, self.root / "results.csv")
        header = path.read_text(encoding="utf-8").splitlines()[0]
        self.assertEqual(header, "run_id,schedule_label,k,fold,dice,pixel_error_pct,adjusted_rand")
        self.assertEqual(read_results_csv(path), rows)

    def test_results_csv_full_precision(self):
        """Test la relecture de results.csv restitue exactement les float64"""
        rows = [ResultRow("r2", "deep_to_shallow_k3", 3, 2, 1 / 3, 100 * 2 / 7, 0.1 + 0.2)]
        path = write_results_csv(rows, self.root / "precision.csv")
        (row,) = read_results_csv(path)
        self.assertEqual((row.dice, row.pixel_error_pct, row.adjusted_rand), (1 / 3, 100 * 2 / 7, 0.1 + 0.2))

    def test_missing_columns(self):
        """Test une table incomplète"""
        path = self.root / "bad.csv"
        path.write_text("run_id,fold\nr,1\n", encoding="utf-8")
        with self.assertRaises(IngestionError):
            read_results_csv(path)
        with self.assertRaises(IngestionError):
            read_results_csv(self.root / "absent.csv")

    def test_summary_json(self):
        """Test le document de résumé"""
        summaries = {"contracting_tuned": summarize([MaskScores(0.8, 1.0, 0.7), MaskScores(0.82, 0.9, 0.72)])}
        path = write_summary_json(summaries, self.root / "summary.json", {"experiment": "two_part"})
        document = json.loads(path.read_text(encoding="utf-8"))
        self.assertEqual(document["experiment"], "two_part")
        self.assertAlmostEqual(document["schedules"]["contracting_tuned"]["mean"]["dice"], 0.81)
        self.assertEqual(len(document["schedules"]["contracting_tuned"]["per_fold"]), 2)
        self.assertIn("adjusted_rand", document["estimators"])
