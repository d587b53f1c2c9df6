# Generated by Django 5.2.6 on 2025-10-02 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="Experiment",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("run_id", models.CharField(max_length=64, unique=True, verbose_name="Identifiant du run")),
                (
                    "kind",
                    models.CharField(
                        choices=[
                            ("two_part", "Deux parties"),
                            ("sweep", "Balayage de blocs"),
                            ("epochs", "Sensibilité au nombre d'époques"),
                            ("custom", "Plans personnalisés"),
                        ],
                        default="custom",
                        max_length=20,
                        verbose_name="Type",
                    ),
                ),
                ("direction", models.CharField(blank=True, max_length=20, verbose_name="Direction du balayage")),
                ("config_hash", models.CharField(blank=True, max_length=64, verbose_name="Empreinte de la configuration")),
                ("code_version", models.CharField(blank=True, max_length=64, verbose_name="Version du code")),
                ("seed", models.BigIntegerField(default=0, verbose_name="Graine maîtresse")),
                ("fold_count", models.IntegerField(default=5, verbose_name="Nombre de folds")),
                ("pretrained_checkpoint", models.CharField(blank=True, max_length=64, verbose_name="Checkpoint pré-entraîné")),
                ("output_dir", models.CharField(blank=True, max_length=500, verbose_name="Répertoire de sortie")),
                ("complete", models.BooleanField(default=True, verbose_name="Complète")),
                ("duration", models.FloatField(default=0.0, verbose_name="Durée (s)")),
                ("summary", models.JSONField(blank=True, default=dict, verbose_name="Résumé")),
                ("created_at", models.DateTimeField(auto_now_add=True, verbose_name="Créé le")),
            ],
            options={
                "verbose_name": "Expérience",
                "verbose_name_plural": "Expériences",
                "ordering": ["-created_at"],
            },
        ),
        migrations.CreateModel(
            name="FoldMetric",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("schedule_label", models.CharField(max_length=100, verbose_name="Plan")),
                ("k", models.IntegerField(blank=True, null=True, verbose_name="Blocs entraînables")),
                ("fold", models.IntegerField(verbose_name="Fold")),
                ("dice", models.FloatField(verbose_name="Dice")),
                ("pixel_error_pct", models.FloatField(verbose_name="Erreur pixel (%)")),
                ("adjusted_rand", models.FloatField(verbose_name="Rand ajusté")),
                (
                    "experiment",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="fold_metrics",
                        to="experiments.experiment",
                        verbose_name="Expérience",
                    ),
                ),
            ],
            options={
                "verbose_name": "Métrique de fold",
                "verbose_name_plural": "Métriques de fold",
                "ordering": ["experiment", "schedule_label", "fold"],
                "unique_together": {("experiment", "schedule_label", "fold")},
            },
        ),
    ]
