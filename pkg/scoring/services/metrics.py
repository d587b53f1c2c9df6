"""
Métriques de segmentation : Dice, erreur pixel (%) et indice de Rand ajusté

Les comptes sont des entiers Python exacts; l'indice de Rand ajusté est calculé en
fractions avant la conversion finale en flottant.
"""

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from core.exceptions import ArgumentError

METRICS = ("dice", "pixel_error_pct", "adjusted_rand")
ADJUSTED_RAND_ESTIMATOR = "pair-counting, hypergeometric expected index (Hubert-Arabie)"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MaskScores:
    """Triplet de métriques pour une image, ou une moyenne"""

    dice: float
    pixel_error_pct: float
    adjusted_rand: float

    def to_dict(self):
        return asdict(self)


def _as_binary_pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ArgumentError(f"Formes différentes: {pred.shape} et {gt.shape}")
    for name, array in (("prédiction", pred), ("vérité terrain", gt)):
        if array.dtype != bool and not np.isin(array, (0, 1)).all():
            raise ArgumentError(f"Masque {name} non binaire")
    return pred.astype(bool), gt.astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    """
    Comptes pixel à pixel.

    Raises:
        ArgumentError: formes différentes ou masque non binaire
    """
    pred, gt = _as_binary_pair(pred, gt)
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
    )


def dice(c: ConfusionCounts) -> float:
    """2*TP / (2*TP + FP + FN); deux masques vides valent 1.0"""
    denominator = 2 * c.tp + c.fp + c.fn
    if denominator == 0:
        return 1.0
    return 2 * c.tp / denominator


def pixel_error(c: ConfusionCounts) -> float:
    """Pourcentage de pixels mal classés"""
    if c.total == 0:
        raise ArgumentError("Masques vides (0 pixel)")
    return 100.0 * (c.fp + c.fn) / c.total


def _pairs(n: int) -> int:
    return n * (n - 1) // 2


def adjusted_rand_from_counts(c: ConfusionCounts) -> float:
    """Indice de Rand ajusté sur la table de contingence 2x2 [[tp, fp], [fn, tn]]"""
    cells = (c.tp, c.fp, c.fn, c.tn)
    index = sum(_pairs(n) for n in cells)
    rows = _pairs(c.tp + c.fp) + _pairs(c.fn + c.tn)
    cols = _pairs(c.tp + c.fn) + _pairs(c.fp + c.tn)
    total = _pairs(c.total)
    if total == 0:
        return 1.0
    expected = Fraction(rows * cols, total)
    maximum = Fraction(rows + cols, 2)
    if maximum == expected:
        # deux partitions à un seul cluster
        return 1.0 if index == rows == cols else 0.0
    return float((index - expected) / (maximum - expected))


def adjusted_rand(pred, gt) -> float:
    """
    Chaque masque est une partition des pixels en deux clusters; l'indice ne dépend pas
    des étiquettes (un masque et son complément valent 1.0).
    """
    return adjusted_rand_from_counts(confusion(pred, gt))


def evaluate_pair(pred, gt) -> MaskScores:
    counts = confusion(pred, gt)
    return MaskScores(dice(counts), pixel_error(counts), adjusted_rand_from_counts(counts))


def evaluate_masks(preds: Sequence, gts: Sequence) -> List[MaskScores]:
    """Triplets de métriques image par image"""
    if len(preds) != len(gts):
        raise ArgumentError(f"{len(preds)} prédictions pour {len(gts)} masques de référence")
    return [evaluate_pair(pred, gt) for pred, gt in zip(preds, gts)]


def fold_average(scores: Iterable[MaskScores]) -> MaskScores:
    """Moyenne des métriques des images d'un fold"""
    scores = list(scores)
    if not scores:
        raise ArgumentError("Aucune image à moyenner")
    return MaskScores(*(float(np.mean([getattr(s, metric) for s in scores])) for metric in METRICS))


@dataclass(frozen=True)
class MetricSummary:
    """Moyenne et écart-type (population) des métriques sur les folds"""

    per_fold: Tuple[MaskScores, ...]
    mean: Dict[str, float]
    std: Dict[str, float]

    @property
    def fold_count(self):
        return len(self.per_fold)

    def to_dict(self):
        return {
            "per_fold": [s.to_dict() for s in self.per_fold],
            "mean": dict(self.mean),
            "std": dict(self.std),
        }


def summarize(per_fold_metrics: Sequence[MaskScores]) -> MetricSummary:
    """
    Agrège les moyennes de folds.

    Raises:
        ArgumentError: liste vide
    """
    per_fold = tuple(per_fold_metrics)
    if not per_fold:
        raise ArgumentError("Aucun fold à résumer")
    table = np.array([[getattr(s, metric) for metric in METRICS] for s in per_fold], dtype=np.float64)
    return MetricSummary(
        per_fold=per_fold,
        mean={metric: float(value) for metric, value in zip(METRICS, table.mean(axis=0))},
        std={metric: float(value) for metric, value in zip(METRICS, table.std(axis=0, ddof=0))},
    )
