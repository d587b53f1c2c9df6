"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/
"""

from django.db import models


class Experiment(models.Model):
    """Expérience validée croisée terminée, importée depuis son répertoire de sortie"""

    KIND_CHOICES = [
        ("two_part", "Deux parties"),
        ("sweep", "Balayage de blocs"),
        ("epochs", "Sensibilité au nombre d'époques"),
        ("custom", "Plans personnalisés"),
    ]

    run_id = models.CharField(max_length=64, unique=True, verbose_name="Identifiant du run")
    kind = models.CharField(max_length=20, choices=KIND_CHOICES, default="custom", verbose_name="Type")
    direction = models.CharField(max_length=20, blank=True, verbose_name="Direction du balayage")
    config_hash = models.CharField(max_length=64, blank=True, verbose_name="Empreinte de la configuration")
    code_version = models.CharField(max_length=64, blank=True, verbose_name="Version du code")
    seed = models.BigIntegerField(default=0, verbose_name="Graine maîtresse")
    fold_count = models.IntegerField(default=5, verbose_name="Nombre de folds")
    pretrained_checkpoint = models.CharField(max_length=64, blank=True, verbose_name="Checkpoint pré-entraîné")
    output_dir = models.CharField(max_length=500, blank=True, verbose_name="Répertoire de sortie")
    complete = models.BooleanField(default=True, verbose_name="Complète")
    duration = models.FloatField(default=0.0, verbose_name="Durée (s)")
    summary = models.JSONField(default=dict, blank=True, verbose_name="Résumé")
    created_at = models.DateTimeField(auto_now_add=True, verbose_name="Créé le")

    class Meta:
        verbose_name = "Expérience"
        verbose_name_plural = "Expériences"
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.get_kind_display()} - {self.run_id}"

    def mean_dice(self, schedule_label):
        """Moyenne des Dice des folds d'un plan"""
        values = self.fold_metrics.filter(schedule_label=schedule_label).values_list("dice", flat=True)
        return sum(values) / len(values) if values else None


class FoldMetric(models.Model):
    """Métriques moyennes d'un (plan, fold)"""

    experiment = models.ForeignKey(
        Experiment, on_delete=models.CASCADE, related_name="fold_metrics", verbose_name="Expérience"
    )
    schedule_label = models.CharField(max_length=100, verbose_name="Plan")
    k = models.IntegerField(null=True, blank=True, verbose_name="Blocs entraînables")
    fold = models.IntegerField(verbose_name="Fold")
    dice = models.FloatField(verbose_name="Dice")
    pixel_error_pct = models.FloatField(verbose_name="Erreur pixel (%)")
    adjusted_rand = models.FloatField(verbose_name="Rand ajusté")

    class Meta:
        verbose_name = "Métrique de fold"
        verbose_name_plural = "Métriques de fold"
        ordering = ["experiment", "schedule_label", "fold"]
        unique_together = ["experiment", "schedule_label", "fold"]

    def __str__(self):
        return f"{self.schedule_label} / fold {self.fold}: Dice {self.dice:.3f}"
