"""
Construction des objets d'exécution à partir d'une RunConfig validée
"""

import logging
from pathlib import Path
from typing import List

from architecture.services.blocks import enumerate_blocks
from architecture.services.freeze import FreezePlan, plan_from_label
from architecture.services.unet import build_unet
from experiments.services.runner import ExperimentPlan
from training.services.checkpoints import Checkpoint, load_checkpoint

from .config import RunConfig

logger = logging.getLogger(__name__)


def resolve_schedules(config: RunConfig) -> List[FreezePlan]:
    """
    Raises:
        ArgumentError: libellé de plan inconnu
    """
    blocks = enumerate_blocks(build_unet(config.architecture))
    return [plan_from_label(label, blocks) for label in config.experiment.schedules]


def load_pretrained(config: RunConfig, path=None) -> Checkpoint:
    """
    Raises:
        ConfigurationError: chemin absent de la configuration ou fichier introuvable
        CheckpointIntegrityError, CheckpointIncompatibleError: archive invalide
    """
    path = config.require_file(path or config.experiment.pretrained_checkpoint, "experiment.pretrained_checkpoint")
    return load_checkpoint(path, graph=build_unet(config.architecture))


def experiment_plan(config: RunConfig, work_dir: Path, dataset: str = "finetune") -> ExperimentPlan:
    """Plan validé croisé sans plans de gel (installés ensuite par l'expérience choisie)"""
    manifest = config.dataset(dataset).load()
    return ExperimentPlan(
        dataset=manifest,
        pretrained=load_pretrained(config),
        architecture=config.architecture,
        fold_count=config.experiment.fold_count,
        finetune_config=config.finetune,
        seed=config.seed,
        augmentation=config.augmentation,
        work_dir=Path(work_dir),
        include_pretrained_baseline=config.experiment.include_pretrained_baseline,
        save_checkpoints=config.experiment.save_checkpoints,
        save_predictions=config.experiment.save_predictions,
        fail_fast=config.experiment.fail_fast,
        run_id=config.run_id,
    )
