"""
Commande : rapport des paramètres par bloc (parties contractante et expansive)
"""

from pathlib import Path

import pandas as pd

from architecture.services.blocks import enumerate_blocks
from architecture.services.freeze import TwoPart, make_two_part_plan
from architecture.services.parameters import count_parameters, describe_parameters
from architecture.services.unet import ArchitectureSpec, build_unet
from core.management.base import HarnessCommand, RunReport


class Command(HarnessCommand):
    help = "Affiche le nombre de paramètres par bloc; sans --config, l'architecture de référence (profondeur 5, 64 filtres)"
    config_required = False

    def prepare(self, config, options):
        spec = config.architecture if config else ArchitectureSpec().validate()
        out_dir = None
        if config and config.output_dir:
            out_dir = config.output_dir
        elif options.get("out"):
            out_dir = Path(options["out"]).resolve()
        return spec, out_dir

    def execute(self, job, clock):
        spec, out_dir = job
        graph = build_unet(spec)
        rows = describe_parameters(graph)
        report = RunReport(out_dir=out_dir)
        self.stdout.write(f"{'bloc':>4}  {'rôle':<12} {'convolutions':<14} {'paramètres':>12}")
        for row in rows:
            convs = ",".join(str(c) for c in row["conv_layers"])
            self.stdout.write(f"{row['block']:>4}  {row['role']:<12} {convs:<14} {row['parameters']:>12,}")
        blocks = enumerate_blocks(graph)
        totals = {}
        for part in TwoPart:
            plan = make_two_part_plan(part, blocks)
            totals[plan.label] = sum(row["parameters"] for row in rows if row["block"] in plan.trainable_blocks)
            self.stdout.write(self.style.HTTP_INFO(f"  partie {part.value}: {totals[plan.label]:,} paramètres"))
        self.stdout.write(self.style.HTTP_INFO(f"  total: {count_parameters(graph):,} paramètres"))
        if out_dir is not None:
            path = Path(out_dir) / "params.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame(rows).to_csv(path, index=False)
            report.add("params", path)
            report.extra["totals"] = totals
        return report
