"""
Commande : évaluation de masques prédits déjà écrits (aucun entraînement)
"""

import json
from pathlib import Path

import pandas as pd

from core.exceptions import ConfigurationError
from core.management.base import HarnessCommand, RunReport
from ingestion.services.manifest import load_manifest
from ingestion.services.preprocessing import load_arrays, load_prediction_masks
from scoring.services.exports import FLOAT_FORMAT
from scoring.services.metrics import METRICS, evaluate_masks, fold_average

METRICS_FILE = "metrics.csv"


def prediction_labels(directories):
    """Nom du répertoire, ou chemin résolu quand deux répertoires portent le même nom"""
    names = [directory.name for directory in directories]
    return [name if names.count(name) == 1 else str(directory.resolve()) for name, directory in zip(names, directories)]


class Command(HarnessCommand):
    help = "Calcule Dice, erreur pixel et Rand ajusté de répertoires de prédictions <id>.png contre un manifeste"

    def add_harness_arguments(self, parser):
        parser.add_argument("--pred", action="append", required=True, help="Répertoire de masques prédits (répétable)")
        parser.add_argument("--cases", help="Manifeste de vérité terrain (défaut: datasets.evaluate)")

    def prepare(self, config, options):
        out_dir = config.require_output_dir()
        cases = Path(options["cases"]) if options.get("cases") else config.dataset("evaluate").path
        if not cases.exists():
            raise ConfigurationError(f"introuvable: {cases}", field="--cases")
        for directory in options["pred"]:
            if not Path(directory).is_dir():
                raise ConfigurationError(f"répertoire introuvable: {directory}", field="--pred")
        directories = [Path(d) for d in options["pred"]]
        if len({d.resolve() for d in directories}) != len(directories):
            raise ConfigurationError("répertoire de prédictions donné deux fois", field="--pred")
        size = (config.architecture.input_height, config.architecture.input_width)
        return out_dir, cases, directories, size

    def execute(self, job, clock):
        out_dir, cases, directories, size = job
        report = RunReport(out_dir=out_dir)
        manifest = load_manifest(cases)
        _, gt = load_arrays(manifest, size)
        rows, summary = [], {}
        for directory, label in zip(directories, prediction_labels(directories)):
            with clock.stage(label):
                predictions = load_prediction_masks(directory, manifest, size)
                scores = evaluate_masks(predictions, gt[:, 0] > 0.5)
            for record, score in zip(manifest.records, scores):
                rows.append({"prediction_set": label, "id": record.id, **score.to_dict()})
            summary[label] = mean = fold_average(scores).to_dict()
            self.stdout.write(
                f"  {label:<24} Dice {mean['dice']:.4f}  erreur {mean['pixel_error_pct']:.2f} %  ARI {mean['adjusted_rand']:.4f}"
            )
        metrics_path = out_dir / METRICS_FILE
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=["prediction_set", "id", *METRICS]).to_csv(metrics_path, index=False, float_format=FLOAT_FORMAT)
        report.add("metrics", metrics_path)
        summary_path = out_dir / "evaluation_summary.json"
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
        report.add("summary", summary_path)
        report.extra["cases"] = str(cases)
        return report
