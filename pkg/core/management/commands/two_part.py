"""
Commande : comparaison deux parties (contractant entraîné / expansif entraîné) en validation croisée
"""

from core.management.base import ExperimentCommand, RunReport
from core.services.plans import experiment_plan
from experiments.services.outputs import write_experiment_outputs
from experiments.services.runner import run_two_part_experiment, two_part_schedules


class Command(ExperimentCommand):
    help = "Fine-tune séparément les parties contractante et expansive (contracting_tuned / expanding_tuned)"

    def prepare(self, config, options):
        out_dir = config.require_output_dir()
        plan = experiment_plan(config, work_dir=out_dir)
        plan.with_schedules(two_part_schedules(config.architecture)).validate()
        return config, out_dir, plan

    def execute(self, job, clock):
        config, out_dir, plan = job
        report = RunReport(out_dir=out_dir, seeds={"master": config.seed, "augmentation": config.augmentation.seed})
        with clock.stage("experiment"):
            result = run_two_part_experiment(plan, max_workers=config.experiment.max_workers)
        for name, path in write_experiment_outputs(result, out_dir, kind="two_part").items():
            report.add(name, path)
        report.seeds["cells"] = {f"{c.label}/fold{c.fold}": c.seed for c in result.cells if c.seed is not None}
        self.report_result(result, report, kind="two_part")
        return report
