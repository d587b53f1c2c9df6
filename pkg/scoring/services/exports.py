"""
Export des tables de métriques (CSV) et des résumés (JSON)
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import pandas as pd

from core.exceptions import IngestionError

from .metrics import ADJUSTED_RAND_ESTIMATOR, METRICS, MaskScores, MetricSummary

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["run_id", "schedule_label", "k", "fold", *METRICS]
# 17 chiffres significatifs : relecture exacte des float64
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class ResultRow:
    """Une ligne de results.csv : moyenne des métriques d'un (plan, fold)"""

    run_id: str
    schedule_label: str
    k: Optional[int]
    fold: int
    dice: float
    pixel_error_pct: float
    adjusted_rand: float

    @property
    def scores(self) -> MaskScores:
        return MaskScores(self.dice, self.pixel_error_pct, self.adjusted_rand)

    @classmethod
    def from_scores(cls, run_id, schedule_label, k, fold, scores: MaskScores):
        return cls(run_id, schedule_label, k, fold, scores.dice, scores.pixel_error_pct, scores.adjusted_rand)


def results_frame(rows: Iterable[ResultRow]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(row) for row in rows], columns=RESULT_COLUMNS)
    frame["k"] = frame["k"].astype("Int64")
    return frame


def write_results_csv(rows: Iterable[ResultRow], path) -> Path:
    """Écrit les lignes dans l'ordre reçu (l'appelant fixe un ordre déterministe)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results_frame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_results_csv(path) -> List[ResultRow]:
    """
    Relit un results.csv.

    Raises:
        IngestionError: fichier absent ou colonnes manquantes
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"run_id": str, "schedule_label": str}, float_precision="round_trip")
    except (FileNotFoundError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestionError(f"Table de résultats illisible {path}: {e}") from e
    missing = [column for column in RESULT_COLUMNS if column not in frame.columns]
    if missing:
        raise IngestionError(f"Colonnes manquantes dans {path}: {', '.join(missing)}")
    rows = []
    for record in frame[RESULT_COLUMNS].to_dict("records"):
        k = record["k"]
        rows.append(
            ResultRow(
                run_id=record["run_id"],
                schedule_label=record["schedule_label"],
                k=None if pd.isna(k) else int(k),
                fold=int(record["fold"]),
                dice=float(record["dice"]),
                pixel_error_pct=float(record["pixel_error_pct"]),
                adjusted_rand=float(record["adjusted_rand"]),
            )
        )
    return rows


def summary_document(summaries: Dict[str, MetricSummary], metadata: Optional[Dict] = None) -> Dict:
    """Document JSON : un résumé par plan, estimateurs nommés"""
    return {
        "metrics": list(METRICS),
        "estimators": {
            "dice": "2TP / (2TP + FP + FN), empty-vs-empty = 1.0",
            "pixel_error_pct": "100 (FP + FN) / N",
            "adjusted_rand": ADJUSTED_RAND_ESTIMATOR,
            "aggregation": "per image, mean within fold, mean and population std across folds",
        },
        "schedules": {label: summary.to_dict() for label, summary in summaries.items()},
        **(metadata or {}),
    }


def write_summary_json(summaries: Dict[str, MetricSummary], path, metadata: Optional[Dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary_document(summaries, metadata), indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Résumé écrit dans %s (%s plans)", path, len(summaries))
    return path
