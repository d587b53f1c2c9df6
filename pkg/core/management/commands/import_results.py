"""
Commande : import d'un répertoire de sortie d'expérience dans la base
"""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError

from core.exceptions import UNetLabError
from experiments.services.recording import import_experiment


class Command(BaseCommand):
    help = "Importe summary.json et results.csv d'un répertoire de sortie (Experiment / FoldMetric)"

    def add_arguments(self, parser):
        parser.add_argument("directories", nargs="+", type=str, help="Répertoires de sortie d'expériences")

    def handle(self, *args, **options):
        for directory in options["directories"]:
            # Vérifier que le répertoire existe
            if not Path(directory).is_dir():
                raise CommandError(f"Le répertoire {directory} n'existe pas.", returncode=2)
            try:
                experiment = import_experiment(directory)
            except UNetLabError as e:
                raise CommandError(f"Import impossible de {directory}: {e}", returncode=1) from e
            except DatabaseError as e:
                raise CommandError(f"Erreur de base de données (migrate ?): {e}", returncode=1) from e
            count = experiment.fold_metrics.count()
            self.stdout.write(self.style.SUCCESS(f"Importation terminée: {experiment} ({count} métriques de fold)"))
