"""
Commande : sensibilité au nombre d'époques (reprise de l'entraînement entre les points de la grille)
"""

from core.exceptions import ConfigurationError
from core.management.base import ExperimentCommand, RunReport
from core.services.plans import experiment_plan, resolve_schedules
from experiments.services.outputs import write_epoch_outputs
from experiments.services.runner import run_epoch_sensitivity


def parse_grid(value):
    try:
        return tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError as e:
        raise ConfigurationError(f"liste d'entiers attendue (reçu {value!r})", field="--grid") from e


class Command(ExperimentCommand):
    help = "Entraîne chaque plan jusqu'à chaque point de la grille d'époques et rapporte l'écart de Dice"

    def add_experiment_arguments(self, parser):
        parser.add_argument("--grid", help="Points de la grille, ex. 20,40 (défaut: experiment.epoch_grid)")

    def prepare(self, config, options):
        out_dir = config.require_output_dir()
        grid = parse_grid(options["grid"]) if options.get("grid") else config.experiment.epoch_grid
        if not grid:
            raise ConfigurationError("grille d'époques requise", field="experiment.epoch_grid")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError(f"doit être strictement croissante (reçu {list(grid)})", field="experiment.epoch_grid")
        if grid[0] != config.finetune.epochs:
            raise ConfigurationError(
                f"le premier point ({grid[0]}) doit valoir finetune.epochs ({config.finetune.epochs})",
                field="experiment.epoch_grid",
            )
        plan = experiment_plan(config, work_dir=out_dir).with_schedules(resolve_schedules(config))
        plan.validate()
        return config, out_dir, plan, grid

    def execute(self, job, clock):
        config, out_dir, plan, grid = job
        report = RunReport(out_dir=out_dir, seeds={"master": config.seed, "augmentation": config.augmentation.seed})
        with clock.stage("experiment"):
            epoch_report = run_epoch_sensitivity(plan, grid)
        for name, path in write_epoch_outputs(epoch_report, out_dir).items():
            report.add(name, path)
        for row in epoch_report.rows:
            if row["dice_delta"] is not None:
                self.stdout.write(f"  {row['schedule_label']:<24} {row['epochs']:>4} époques: ΔDice {row['dice_delta']:+.4f}")
        self.report_result(epoch_report.result, report, kind="epochs")
        return report
