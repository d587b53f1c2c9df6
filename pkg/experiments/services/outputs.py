"""
Écriture des artefacts d'une expérience : results.csv, summary.json, epochs.csv
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from scoring.services.exports import FLOAT_FORMAT, write_results_csv, write_summary_json

from .runner import EpochSensitivityReport, ExperimentResult, SweepResult

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.json"
EPOCHS_FILE = "epochs.csv"
EPOCH_COLUMNS = ["schedule_label", "epochs", "dice_mean", "dice_std", "dice_delta", "pixel_error_pct_mean", "adjusted_rand_mean"]


def write_experiment_outputs(
    result: ExperimentResult, out_dir, kind: str, direction: str = "", extra: Optional[Dict] = None
) -> Dict[str, Path]:
    """
    Écrit la table par (plan, fold) et le résumé par plan.

    Les lignes suivent l'ordre des plans puis des folds; les cellules en échec n'ont pas de ligne
    et leur plan est marqué incomplet dans le résumé.
    """
    out_dir = Path(out_dir)
    metadata = {
        "run_id": result.run_id,
        "kind": kind,
        "direction": direction,
        "complete": result.complete,
        "incomplete": result.incomplete,
        "schedule_info": result.schedule_info(),
        "run": result.metadata,
        **(extra or {}),
    }
    paths = {
        "results": write_results_csv(result.rows(), out_dir / RESULTS_FILE),
        "summary": write_summary_json(result.summaries, out_dir / SUMMARY_FILE, metadata),
    }
    logger.info("Expérience %s: %s lignes dans %s", result.run_id, len(result.rows()), paths["results"])
    return paths


def write_sweep_outputs(sweep: SweepResult, out_dir, extra: Optional[Dict] = None) -> Dict[str, Path]:
    points = {"block_count": sweep.block_count, "points": [k for k, _ in sweep.points]}
    return write_experiment_outputs(
        sweep.result, out_dir, kind="sweep", direction=sweep.direction.value, extra={"sweep": points, **(extra or {})}
    )


def write_epoch_outputs(report: EpochSensitivityReport, out_dir, extra: Optional[Dict] = None) -> Dict[str, Path]:
    """Ajoute epochs.csv : une ligne par (plan, point de grille) avec l'écart de Dice au premier point"""
    paths = write_experiment_outputs(report.result, out_dir, kind="epochs", extra={"epoch_grid": list(report.grid), **(extra or {})})
    path = Path(out_dir) / EPOCHS_FILE
    pd.DataFrame(report.rows, columns=EPOCH_COLUMNS).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    paths["epochs"] = path
    return paths
