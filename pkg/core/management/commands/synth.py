"""
Commande : génération d'un jeu synthétique (formes lisses ou texture de speckle)
"""

from pathlib import Path

from core.exceptions import ConfigurationError
from core.management.base import HarnessCommand, RunReport
from ingestion.services.synthetic import SyntheticKind, generate_synthetic_dataset


class Command(HarnessCommand):
    help = "Écrit images/, masks/ et manifest.csv d'un jeu synthétique à masques binaires exacts"
    config_required = False

    def add_harness_arguments(self, parser):
        parser.add_argument("--kind", required=True, choices=[kind.value for kind in SyntheticKind])
        parser.add_argument("--count", type=int, required=True, help="Nombre de paires")
        parser.add_argument("--size", type=int, default=128, help="Côté des images en pixels (défaut: 128)")

    def prepare(self, config, options):
        out_dir = self.output_dir(config, options)
        seed = options["seed"] if options.get("seed") is not None else (config.seed if config else None)
        if seed is None:
            raise ConfigurationError("graine requise (--seed ou configuration)", field="seed")
        for name in ("count", "size"):
            if options[name] < 1:
                raise ConfigurationError("doit être >= 1", field=f"--{name}")
        return Path(out_dir), options["kind"], options["count"], options["size"], seed

    def execute(self, job, clock):
        out_dir, kind, count, size, seed = job
        report = RunReport(out_dir=out_dir, seeds={"synthetic": seed})
        with clock.stage("generate"):
            manifest = generate_synthetic_dataset(kind, count, (size, size), seed, out_dir)
        report.add("manifest", out_dir / "manifest.csv")
        report.extra["dataset"] = {"kind": kind, "count": len(manifest), "size": size}
        self.stdout.write(f"  {len(manifest)} paires {kind} {size}x{size}")
        return report
