"""
Commande : pré-entraînement du réseau entier sur le jeu "pretrain"
"""

from pathlib import Path

import pandas as pd

from architecture.services.unet import build_unet
from core.management.base import HarnessCommand, RunReport
from training.services.checkpoints import save_checkpoint
from training.services.engine import pretrain

CHECKPOINT_FILE = "pretrained.ckpt"


class Command(HarnessCommand):
    help = "Pré-entraîne le U-Net (initialisation He, tous les blocs entraînables) et écrit pretrained.ckpt"

    def prepare(self, config, options):
        out_dir = config.require_output_dir()
        config.pretrain.validate("pretrain")
        return config, out_dir, config.dataset("pretrain")

    def execute(self, job, clock):
        config, out_dir, dataset = job
        report = RunReport(out_dir=Path(out_dir), seeds={"master": config.seed, "pretrain": config.pretrain.seed})
        with clock.stage("load"):
            manifest = dataset.load()
        self.stdout.write(f"Pré-entraînement sur {len(manifest)} images ({config.pretrain.epochs} époques)")
        with clock.stage("train"):
            ckpt = pretrain(build_unet(config.architecture), manifest, config.pretrain)
        report.add("checkpoint", save_checkpoint(ckpt, report.out_dir / CHECKPOINT_FILE))
        log_path = report.out_dir / "training_log.csv"
        pd.DataFrame(ckpt.training_log, columns=["epoch", "train_loss", "val_loss"]).to_csv(log_path, index=False)
        report.add("training_log", log_path)
        report.extra["checkpoint_id"] = ckpt.checkpoint_id
        final = ckpt.training_log[-1]
        self.stdout.write(self.style.SUCCESS(f"Checkpoint {ckpt.checkpoint_id}: perte finale {final['train_loss']:.4f}"))
        return report
