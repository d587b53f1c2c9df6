"""
Commande : courbes de balayage à partir de fichiers results.csv
"""

from pathlib import Path

from core.exceptions import ConfigurationError
from core.management.base import HarnessCommand, RunReport
from insights.services.figures import plot_sweep, sweep_results_from_rows
from scoring.services.exports import read_results_csv


class Command(HarnessCommand):
    help = "Trace le Dice moyen (± écart-type sur les folds) en fonction du nombre de blocs entraînables"
    config_required = False

    def add_harness_arguments(self, parser):
        parser.add_argument("--sweep", nargs="+", required=True, help="Fichiers results.csv de balayages")
        parser.add_argument("--metric", default="dice", choices=["dice", "pixel_error_pct", "adjusted_rand"])

    def prepare(self, config, options):
        out_dir = self.output_dir(config, options)
        paths = [Path(p) for p in options["sweep"]]
        for path in paths:
            if not path.is_file():
                raise ConfigurationError(f"fichier introuvable: {path}", field="--sweep")
        return out_dir, paths, options["metric"]

    def execute(self, job, clock):
        out_dir, paths, metric = job
        report = RunReport(out_dir=out_dir)
        rows = [row for path in paths for row in read_results_csv(path)]
        results = sweep_results_from_rows(rows)
        report.add("figure", plot_sweep(results, out_dir / f"sweep_{metric}.png", metric=metric))
        for result in results:
            self.stdout.write(f"  {result.direction.value}: {len(result.points)} points")
        report.extra["sources"] = [str(p) for p in paths]
        return report
