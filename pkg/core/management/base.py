"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Base commune des commandes du harnais : --config / --out / --seed, codes de sortie,
manifeste de run
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError

from core.exceptions import ArgumentError, ConfigurationError, UNetLabError
from core.services.config import load_run_config
from core.services.provenance import RunClock, build_run_manifest, code_version, write_run_manifest
from core.services.runtime import configure_determinism
from experiments.services.recording import record_experiment

logger = logging.getLogger(__name__)

CONFIG_ERROR = 2
RUNTIME_ERROR = 1


@dataclass
class RunReport:
    """Ce qu'une commande a produit, pour le manifeste de run"""

    out_dir: Optional[Path] = None
    seeds: Dict = field(default_factory=dict)
    artifacts: Dict = field(default_factory=dict)
    extra: Dict = field(default_factory=dict)

    def add(self, name, path):
        path = Path(path)
        try:
            self.artifacts[name] = path.relative_to(self.out_dir).as_posix() if self.out_dir else str(path)
        except ValueError:
            self.artifacts[name] = str(path)
        return path


class HarnessCommand(BaseCommand):
    """
    Les sous-classes implémentent prepare() (validation, aucune écriture) et execute().

    Une ConfigurationError ou ArgumentError levée par prepare() donne le code 2, toute
    autre erreur du harnais le code 1.
    """

    config_required = True

    def add_arguments(self, parser):
        parser.add_argument("--config", required=self.config_required, help="Fichier de configuration JSON du run")
        parser.add_argument("--out", help="Répertoire de sortie (remplace output_dir)")
        parser.add_argument("--seed", type=int, help="Graine maîtresse (remplace seed)")
        self.add_harness_arguments(parser)

    def add_harness_arguments(self, parser):
        pass

    def prepare(self, config, options):
        raise NotImplementedError

    def execute(self, job, clock: RunClock) -> RunReport:
        raise NotImplementedError

    def handle(self, *args, **options):
        self.options = options
        self.config = config = None
        try:
            if options.get("config"):
                config = load_run_config(options["config"], seed=options.get("seed"), out=options.get("out"))
                self.config = config
            job = self.prepare(config, options)
        except (ConfigurationError, ArgumentError) as e:
            raise CommandError(f"Configuration invalide - {e}", returncode=CONFIG_ERROR) from e
        except UNetLabError as e:
            raise CommandError(str(e), returncode=RUNTIME_ERROR) from e

        configure_determinism()
        clock = RunClock()
        try:
            report = self.execute(job, clock)
        except (UNetLabError, RuntimeError, OSError) as e:
            logger.error("%s en échec: %s", self.command_name, e)
            raise CommandError(str(e), returncode=RUNTIME_ERROR) from e

        if report.out_dir is not None:
            manifest = build_run_manifest(self.command_name, config, clock, report.seeds, report.artifacts, report.extra)
            write_run_manifest(report.out_dir, manifest)
            self.stdout.write(self.style.SUCCESS(f"Terminé: sorties dans {report.out_dir}"))
        else:
            self.stdout.write(self.style.SUCCESS("Terminé"))

    def output_dir(self, config, options) -> Path:
        """--out, sinon output_dir de la configuration"""
        if config is not None:
            return config.require_output_dir()
        if not options.get("out"):
            raise ConfigurationError("répertoire de sortie requis", field="--out")
        return Path(options["out"]).resolve()

    @property
    def command_name(self):
        return self.__module__.rsplit(".", 1)[-1].replace("_", "-")


class ExperimentCommand(HarnessCommand):
    """Commandes validées croisées : --record enregistre le résultat dans la base"""

    def add_harness_arguments(self, parser):
        parser.add_argument("--record", action="store_true", help="Enregistre l'expérience dans la base de données")
        self.add_experiment_arguments(parser)

    def add_experiment_arguments(self, parser):
        pass

    def report_result(self, result, report: RunReport, kind: str, direction: str = ""):
        """Affiche les résumés par plan, signale les plans incomplets, enregistre si demandé"""
        for label, summary in result.summaries.items():
            mean, std = summary.mean["dice"], summary.std["dice"]
            self.stdout.write(f"  {label:<24} Dice {mean:.4f} ± {std:.4f} ({summary.fold_count} folds)")
        for label in result.incomplete:
            self.stdout.write(self.style.WARNING(f"  {label}: plan incomplet (cellules en échec)"))
        report.extra["complete"] = result.complete
        if self.options.get("record"):
            manifest = {"config_hash": self.config.config_hash, "code_version": code_version()}
            try:
                experiment = record_experiment(result, kind, direction=direction, output_dir=report.out_dir, manifest=manifest)
            except DatabaseError as e:
                raise CommandError(f"Enregistrement impossible (migrate ?): {e}", returncode=RUNTIME_ERROR) from e
            self.stdout.write(self.style.SUCCESS(f"Expérience enregistrée: {experiment}"))
