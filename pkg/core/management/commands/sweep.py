"""
Commande : balayage cumulatif des blocs (shallow -> deep ou deep -> shallow)
"""

from architecture.services.freeze import Direction
from core.management.base import ExperimentCommand, RunReport
from core.services.plans import experiment_plan
from experiments.services.outputs import write_sweep_outputs
from experiments.services.runner import run_block_sweep, sweep_schedules
from insights.services.figures import plot_sweep


class Command(ExperimentCommand):
    help = "Un run validé croisé par nombre de blocs entraînables k = 1..nombre de blocs"

    def add_experiment_arguments(self, parser):
        parser.add_argument("--direction", required=True, choices=["shallow", "deep"], help="Ordre d'ajout des blocs")

    def prepare(self, config, options):
        out_dir = config.require_output_dir()
        plan = experiment_plan(config, work_dir=out_dir)
        direction = Direction.parse(options["direction"])
        plan.with_schedules(sweep_schedules(config.architecture, direction)).validate()
        return config, out_dir, plan, direction

    def execute(self, job, clock):
        config, out_dir, plan, direction = job
        report = RunReport(out_dir=out_dir, seeds={"master": config.seed, "augmentation": config.augmentation.seed})
        with clock.stage("experiment"):
            sweep = run_block_sweep(plan, direction, max_workers=config.experiment.max_workers)
        for name, path in write_sweep_outputs(sweep, out_dir).items():
            report.add(name, path)
        if sweep.points:
            report.add("figure", plot_sweep([sweep], out_dir / "sweep.png"))
        report.seeds["cells"] = {f"{c.label}/fold{c.fold}": c.seed for c in sweep.result.cells if c.seed is not None}
        self.report_result(sweep.result, report, kind="sweep", direction=direction.value)
        return report
