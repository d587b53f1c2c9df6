"""
Enregistrement des expériences terminées dans la base (modèles Experiment / FoldMetric)
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional

from django.db import transaction

from core.exceptions import IngestionError
from core.services.provenance import RUN_MANIFEST_FILE
from scoring.services.exports import ResultRow, read_results_csv

from ..models import Experiment, FoldMetric
from .outputs import RESULTS_FILE, SUMMARY_FILE

logger = logging.getLogger(__name__)


@transaction.atomic
def store_experiment(rows: Iterable[ResultRow], **fields) -> Experiment:
    """
    Crée ou remplace l'expérience `run_id` et ses métriques de fold.

    Un run déjà enregistré est écrasé : ses anciennes métriques sont supprimées.
    """
    run_id = fields.pop("run_id")
    experiment, created = Experiment.objects.update_or_create(run_id=run_id, defaults=fields)
    if not created:
        experiment.fold_metrics.all().delete()
    FoldMetric.objects.bulk_create(
        [
            FoldMetric(
                experiment=experiment,
                schedule_label=row.schedule_label,
                k=row.k,
                fold=row.fold,
                dice=row.dice,
                pixel_error_pct=row.pixel_error_pct,
                adjusted_rand=row.adjusted_rand,
            )
            for row in rows
        ]
    )
    logger.info("Expérience %s %s", run_id, "créée" if created else "mise à jour")
    return experiment


def record_experiment(result, kind: str, direction: str = "", output_dir="", manifest: Optional[Dict] = None) -> Experiment:
    """Enregistre un ExperimentResult fraîchement calculé"""
    manifest = manifest or {}
    return store_experiment(
        result.rows(),
        run_id=result.run_id,
        kind=kind,
        direction=direction,
        config_hash=manifest.get("config_hash", ""),
        code_version=manifest.get("code_version", ""),
        seed=result.metadata.get("seed", 0),
        fold_count=result.metadata.get("fold_count", 0),
        pretrained_checkpoint=result.metadata.get("pretrained_checkpoint", ""),
        output_dir=str(output_dir),
        complete=result.complete,
        duration=result.metadata.get("wall_clock_seconds", 0.0),
        summary={label: summary.to_dict() for label, summary in result.summaries.items()},
    )


def _read_json(path: Path, required=True):
    if not path.is_file():
        if required:
            raise IngestionError(f"Fichier absent: {path}")
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise IngestionError(f"JSON invalide {path}: {e}") from e


def import_experiment(out_dir) -> Experiment:
    """
    Importe un répertoire de sortie (summary.json, results.csv, run_manifest.json optionnel).

    Raises:
        IngestionError: fichier absent ou illisible
    """
    out_dir = Path(out_dir)
    summary = _read_json(out_dir / SUMMARY_FILE)
    manifest = _read_json(out_dir / RUN_MANIFEST_FILE, required=False)
    rows = read_results_csv(out_dir / RESULTS_FILE)
    run = summary.get("run", {})
    run_id = summary.get("run_id") or (rows[0].run_id if rows else None)
    if not run_id:
        raise IngestionError(f"Identifiant de run introuvable dans {out_dir}")
    kind = summary.get("kind", "custom")
    if kind not in dict(Experiment.KIND_CHOICES):
        kind = "custom"
    return store_experiment(
        rows,
        run_id=run_id,
        kind=kind,
        direction=summary.get("direction", ""),
        config_hash=manifest.get("config_hash", ""),
        code_version=manifest.get("code_version", ""),
        seed=run.get("seed", 0),
        fold_count=run.get("fold_count", 0),
        pretrained_checkpoint=run.get("pretrained_checkpoint", ""),
        output_dir=str(out_dir),
        complete=summary.get("complete", True),
        duration=run.get("wall_clock_seconds", 0.0),
        summary=summary.get("schedules", {}),
    )
