"""
Commande : fine-tuning de chaque plan configuré sur l'ensemble du jeu "finetune" (sans validation croisée)
"""

from dataclasses import replace
from pathlib import Path

from architecture.services.unet import build_unet
from core.management.base import HarnessCommand, RunReport
from core.services.plans import load_pretrained, resolve_schedules
from core.services.runtime import derive_seed
from ingestion.services.augmentation import augment_dataset
from training.services.checkpoints import save_checkpoint
from training.services.engine import finetune


class Command(HarnessCommand):
    help = "Fine-tune le checkpoint pré-entraîné avec chaque plan de gel de experiment.schedules"

    def prepare(self, config, options):
        out_dir = config.require_output_dir()
        dataset = config.dataset("finetune")
        schedules = resolve_schedules(config)
        pretrained = load_pretrained(config)
        return config, Path(out_dir), dataset, schedules, pretrained

    def execute(self, job, clock):
        config, out_dir, dataset, schedules, pretrained = job
        report = RunReport(out_dir=out_dir, seeds={"master": config.seed})
        manifest = dataset.load()
        size = (config.architecture.input_height, config.architecture.input_width)
        if config.augmentation.target_total:
            with clock.stage("augment"):
                manifest = augment_dataset(manifest, config.augmentation, out_dir / "augmented", size)
            report.seeds["augmentation"] = config.augmentation.seed
        for schedule in schedules:
            seed = derive_seed(config.seed, schedule.key)
            report.seeds[schedule.label] = seed
            with clock.stage(schedule.label):
                ckpt = finetune(build_unet(config.architecture), pretrained, schedule, manifest, replace(config.finetune, seed=seed))
            report.add(schedule.label, save_checkpoint(ckpt, out_dir / "checkpoints" / f"{schedule.label}.ckpt"))
            self.stdout.write(f"{schedule.label}: blocs {schedule.key}, perte finale {ckpt.training_log[-1]['train_loss']:.4f}")
        report.extra["pretrained_checkpoint"] = pretrained.checkpoint_id
        return report
