"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Point d'entrée unique : `python -m unet_lab <sous-commande> --config c.json --out r/`
"""

import os
import sys
from importlib import import_module

SUBCOMMANDS = {
    "pretrain": "pretrain",
    "finetune": "finetune",
    "two-part": "two_part",
    "sweep": "sweep",
    "epochs": "epochs",
    "evaluate": "evaluate",
    "vis-activation": "vis_activation",
    "plot": "plot",
    "panel": "panel",
    "synth": "synth",
    "params": "params",
    "import-results": "import_results",
}

USAGE = """usage: python -m unet_lab <sous-commande> [options]

sous-commandes:
  pretrain                   pré-entraînement (datasets.pretrain)
  finetune                   fine-tuning des plans configurés
  two-part                   comparaison contractant / expansif en validation croisée
  sweep --direction {shallow,deep}
  epochs --grid 20,40        sensibilité au nombre d'époques
  evaluate --pred <dir>      métriques de prédictions existantes
  vis-activation --layer L --unit U
  plot --sweep <csv...>
  panel --cases <manifeste> --pred <dir>...
  synth --kind {blobs,speckle} --count N
  params                     paramètres par bloc
  import-results <dir>...    enregistrement en base

options communes: --config <fichier.json> --out <répertoire> --seed <entier>
codes de sortie: 0 succès, 1 échec d'exécution, 2 configuration invalide
"""


def command_name(subcommand):
    """Nom du module de commande Django, ou None si inconnu ("two-part" et "two_part" acceptés)"""
    if subcommand in SUBCOMMANDS:
        return SUBCOMMANDS[subcommand]
    if subcommand in SUBCOMMANDS.values():
        return subcommand
    return None


def routes_to_harness(subcommand) -> bool:
    """
    Vrai si manage.py doit passer par dispatch() : sous-commande du harnais, ou nom que
    Django ne connaît pas non plus (usage et code 2 comme `python -m unet_lab`)
    """
    if command_name(subcommand) is not None:
        return True
    if subcommand.startswith("-") or subcommand in ("help", "version"):
        return False
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "unet_lab.settings")
    import django
    from django.apps import apps
    from django.core.management import get_commands

    if not apps.ready:
        django.setup()
    return subcommand not in get_commands()


def dispatch(argv=None, stdout=None, stderr=None) -> int:
    """
    Exécute une sous-commande et retourne le code de sortie.

    Returns:
        0 en cas de succès, 1 pour un échec d'exécution, 2 pour une configuration invalide
        ou une sous-commande inconnue
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    stderr = stderr or sys.stderr
    if not argv or argv[0] in ("-h", "--help"):
        stderr.write(USAGE)
        return 0 if argv else 2
    name = command_name(argv[0])
    if name is None:
        stderr.write(f"sous-commande inconnue: {argv[0]}\n\n{USAGE}")
        return 2

    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "unet_lab.settings")
    import django

    django.setup()
    module = import_module(f"core.management.commands.{name}")
    command = module.Command(stdout=stdout, stderr=stderr)
    try:
        command.run_from_argv(["unet_lab", name, *argv[1:]])
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else 1)
    return 0


def main():
    sys.exit(dispatch())
