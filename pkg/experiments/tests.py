# Tests pour l'application Experiments

import json
import tempfile
from dataclasses import replace
from pathlib import Path

from django.test import SimpleTestCase, TestCase, tag

from architecture.services.blocks import enumerate_blocks
from architecture.services.freeze import Direction, FreezePlan, full_plan
from architecture.services.unet import ArchitectureSpec, build_unet, initialize_weights
from core.exceptions import ArgumentError, CheckpointIncompatibleError, ExperimentError, IngestionError
from experiments.models import Experiment, FoldMetric
from experiments.services.outputs import (
    EPOCHS_FILE,
    RESULTS_FILE,
    SUMMARY_FILE,
    write_epoch_outputs,
    write_experiment_outputs,
    write_sweep_outputs,
)
from experiments.services.recording import import_experiment, record_experiment
from experiments.services.runner import (
    PRETRAINED_LABEL,
    ExperimentPlan,
    run_block_sweep,
    run_cross_validated,
    run_epoch_sensitivity,
    run_two_part_experiment,
    two_part_schedules,
)
from ingestion.services.augmentation import AugmentationConfig, augment_dataset
from ingestion.services.synthetic import generate_synthetic_dataset
from insights.services.figures import plot_sweep
from training.services.checkpoints import snapshot
from training.services.engine import TrainConfig, pretrain

SMALL_SPEC = ArchitectureSpec(16, 16, 1, depth=2, base_filters=4)
NO_AUGMENTATION = AugmentationConfig(target_total=0)


def pretrained_for(spec, seed=0):
    return snapshot(initialize_weights(build_unet(spec), seed))


class ExperimentFixtureMixin:
    """Jeu synthétique de 8 originaux et checkpoint initialisé partagés par la classe"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls._tmp.name)
        cls.dataset = generate_synthetic_dataset("blobs", 8, (16, 16), seed=5, output_dir=cls.root / "data")
        cls.pretrained = pretrained_for(SMALL_SPEC)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def make_plan(self, work_dir, **overrides):
        values = dict(
            dataset=self.dataset,
            pretrained=self.pretrained,
            architecture=SMALL_SPEC,
            fold_count=2,
            finetune_config=TrainConfig(epochs=1, batch_size=4),
            seed=11,
            augmentation=NO_AUGMENTATION,
            work_dir=Path(work_dir),
            run_id="essai",
        )
        values.update(overrides)
        return ExperimentPlan(**values)


class CrossValidationTest(ExperimentFixtureMixin, SimpleTestCase):
    """Tests pour l'exécution validée croisée"""

    def test_two_part_run(self):
        """Test un run deux parties : chaque original validé exactement une fois"""
        with tempfile.TemporaryDirectory() as work:
            result = run_two_part_experiment(self.make_plan(work))

        self.assertTrue(result.complete)
        self.assertEqual(list(result.summaries), ["contracting_tuned", "expanding_tuned"])
        for summary in result.summaries.values():
            self.assertEqual(summary.fold_count, 2)
            self.assertGreaterEqual(summary.mean["dice"], 0.0)
            self.assertLessEqual(summary.mean["dice"], 1.0)
        assignment = result.metadata["fold_assignment"]["assignment"]
        self.assertEqual(sorted(assignment), sorted(self.dataset.ids))
        self.assertEqual(sorted(set(assignment.values())), [1, 2])
        self.assertEqual([(c.label, c.fold) for c in result.cells][:2], [("contracting_tuned", 1), ("contracting_tuned", 2)])

    def test_deterministic_results(self):
        """Test deux runs de même graine : tables de résultats identiques octet pour octet"""
        contents = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as work:
                result = run_two_part_experiment(self.make_plan(work))
                write_experiment_outputs(result, work, kind="two_part")
                contents.append((Path(work) / RESULTS_FILE).read_bytes())
        self.assertEqual(contents[0], contents[1])

    def test_cell_seed_ignores_label(self):
        """Test la graine d'une cellule ne dépend que de l'ensemble entraînable"""
        plan = self.make_plan("/tmp")
        a = FreezePlan(frozenset({1, 2}), "a")
        b = FreezePlan(frozenset({2, 1}), "b")
        self.assertEqual(plan.cell_seed(a, 1), plan.cell_seed(b, 1))
        self.assertNotEqual(plan.cell_seed(a, 1), plan.cell_seed(a, 2))

    def test_depth_one_two_part(self):
        """Test profondeur 1 : les deux plans entraînent tout le réseau et donnent le même résumé"""
        spec = ArchitectureSpec(16, 16, 1, depth=1, base_filters=4)
        plan = self.make_plan(tempfile.mkdtemp(dir=self.root), architecture=spec, pretrained=pretrained_for(spec))
        schedules = two_part_schedules(spec)
        self.assertEqual(schedules[0].trainable_blocks, schedules[1].trainable_blocks)

        result = run_two_part_experiment(plan)
        contracting = result.summaries["contracting_tuned"]
        expanding = result.summaries["expanding_tuned"]
        self.assertEqual(contracting.mean, expanding.mean)

    def test_pretrained_baseline(self):
        """Test la ligne de base pré-entraînée, sans entraînement"""
        plan = self.make_plan(tempfile.mkdtemp(dir=self.root), include_pretrained_baseline=True)
        result = run_two_part_experiment(plan)
        self.assertEqual(list(result.summaries)[0], PRETRAINED_LABEL)
        baseline = [c for c in result.cells if c.label == PRETRAINED_LABEL]
        self.assertTrue(all(c.checkpoint_id == self.pretrained.checkpoint_id for c in baseline))
        self.assertEqual(result.schedule_info()[PRETRAINED_LABEL]["k"], 0)

    def test_save_predictions_and_checkpoints(self):
        """Test l'écriture des prédictions de validation et des checkpoints par cellule"""
        work = Path(tempfile.mkdtemp(dir=self.root))
        plan = self.make_plan(work, save_predictions=True, save_checkpoints=True)
        run_two_part_experiment(plan)
        predictions = sorted(p.stem for p in (work / "predictions" / "contracting_tuned").glob("*.png"))
        self.assertEqual(predictions, sorted(self.dataset.ids))
        self.assertTrue((work / "checkpoints" / "expanding_tuned_fold2.ckpt").is_file())

    def test_parallel_folds_match_sequential(self):
        """Test les folds en parallèle donnent les mêmes résultats que l'exécution séquentielle"""
        sequential = run_two_part_experiment(self.make_plan(tempfile.mkdtemp(dir=self.root)), max_workers=1)
        parallel = run_two_part_experiment(self.make_plan(tempfile.mkdtemp(dir=self.root)), max_workers=2)
        self.assertEqual(
            [(r.schedule_label, r.fold, r.dice) for r in sequential.rows()],
            [(r.schedule_label, r.fold, r.dice) for r in parallel.rows()],
        )


class PlanValidationTest(ExperimentFixtureMixin, SimpleTestCase):
    """Tests pour la validation des plans d'expérience"""

    def test_no_schedule(self):
        """Test le rejet d'une expérience sans plan de gel"""
        with self.assertRaises(ArgumentError):
            run_cross_validated(self.make_plan(self.root))

    def test_augmented_dataset_rejected(self):
        """Test le rejet d'un manifeste déjà augmenté"""
        augmented = augment_dataset(self.dataset, AugmentationConfig(target_total=10, seed=1), self.root / "aug", (16, 16))
        plan = self.make_plan(self.root, dataset=augmented).with_schedules(two_part_schedules(SMALL_SPEC))
        with self.assertRaises(ArgumentError):
            run_cross_validated(plan)

    def test_reserved_and_duplicate_labels(self):
        """Test le rejet des libellés en double ou réservés"""
        for labels in (["x", "x"], [PRETRAINED_LABEL]):
            schedules = [FreezePlan(frozenset({i + 1}), label) for i, label in enumerate(labels)]
            with self.assertRaises(ArgumentError):
                run_cross_validated(self.make_plan(self.root).with_schedules(schedules))

    def test_incompatible_checkpoint(self):
        """Test le rejet d'un checkpoint d'une autre architecture"""
        other = pretrained_for(ArchitectureSpec(16, 16, 1, depth=2, base_filters=2))
        plan = self.make_plan(self.root, pretrained=other).with_schedules(two_part_schedules(SMALL_SPEC))
        with self.assertRaises(CheckpointIncompatibleError):
            run_cross_validated(plan)

    def test_bad_epoch_grids(self):
        """Test le rejet des grilles non croissantes ou ne commençant pas à finetune.epochs"""
        plan = self.make_plan(self.root).with_schedules(two_part_schedules(SMALL_SPEC)[:1])
        for grid in ([], [2, 1], [1, 1], [2, 3]):
            with self.subTest(grid=grid), self.assertRaises(ArgumentError):
                run_epoch_sensitivity(plan, grid)


class SweepAndEpochsTest(ExperimentFixtureMixin, SimpleTestCase):
    """Tests pour les balayages de blocs et la sensibilité au nombre d'époques"""

    def test_block_sweep(self):
        """Test un point par k, libellés cumulatifs, nombre de blocs du réseau"""
        work = Path(tempfile.mkdtemp(dir=self.root))
        sweep = run_block_sweep(self.make_plan(work), "deep")
        self.assertEqual(sweep.direction, Direction.DEEP_TO_SHALLOW)
        self.assertEqual(sweep.block_count, 3)
        self.assertEqual([k for k, _ in sweep.points], [1, 2, 3])
        self.assertEqual(list(sweep.result.summaries), ["deep_to_shallow_k1", "deep_to_shallow_k2", "deep_to_shallow_k3"])

        write_sweep_outputs(sweep, work)
        summary = json.loads((work / SUMMARY_FILE).read_text(encoding="utf-8"))
        self.assertEqual(summary["direction"], "deep_to_shallow")
        self.assertEqual(summary["sweep"], {"block_count": 3, "points": [1, 2, 3]})

    def test_full_network_points_coincide(self):
        """Test k = nombre de blocs : même ensemble entraînable dans les deux directions"""
        shallow = run_block_sweep(self.make_plan(tempfile.mkdtemp(dir=self.root)), "shallow")
        deep = run_block_sweep(self.make_plan(tempfile.mkdtemp(dir=self.root)), "deep")
        self.assertEqual(shallow.points[-1][1].mean, deep.points[-1][1].mean)

    def test_single_point_grid(self):
        """Test une grille réduite à finetune.epochs : écart nul"""
        plan = self.make_plan(self.root).with_schedules(two_part_schedules(SMALL_SPEC))
        report = run_epoch_sensitivity(plan, [1])
        self.assertEqual(report.grid, (1,))
        self.assertEqual(len(report.rows), 2)
        for row in report.rows:
            self.assertEqual(row["dice_delta"], 0.0)

    def test_first_grid_point_matches_plain_run(self):
        """Test le premier point de la grille reproduit un fine-tuning direct"""
        schedules = two_part_schedules(SMALL_SPEC)
        plan = self.make_plan(tempfile.mkdtemp(dir=self.root)).with_schedules(schedules)
        report = run_epoch_sensitivity(plan, [1, 2])
        direct = run_cross_validated(plan)
        for schedule in schedules:
            grid_first = report.result.summaries[f"{schedule.label}@1"]
            self.assertAlmostEqual(grid_first.mean["dice"], direct.summaries[schedule.label].mean["dice"], places=6)

    def test_epoch_outputs(self):
        """Test epochs.csv : une ligne par (plan, point de grille)"""
        work = Path(tempfile.mkdtemp(dir=self.root))
        plan = self.make_plan(work).with_schedules(two_part_schedules(SMALL_SPEC)[:1])
        report = run_epoch_sensitivity(plan, [1, 2])
        paths = write_epoch_outputs(report, work)
        lines = paths["epochs"].read_text(encoding="utf-8").splitlines()
        self.assertEqual(paths["epochs"].name, EPOCHS_FILE)
        self.assertTrue(lines[0].startswith("schedule_label,epochs,dice_mean"))
        self.assertEqual(len(lines), 3)
        self.assertEqual(report.rows[0]["dice_delta"], 0.0)



class FoldFailureTest(ExperimentFixtureMixin, SimpleTestCase):
    """Tests pour les folds dont la préparation échoue"""

    def broken_plan(self, **overrides):
        """Le fold 2 ne peut pas écrire ses images augmentées"""
        work = Path(tempfile.mkdtemp(dir=self.root))
        (work / "fold2").write_text("occupé", encoding="utf-8")
        plan = self.make_plan(work, augmentation=AugmentationConfig(target_total=6, seed=3), **overrides)
        return plan.with_schedules(two_part_schedules(SMALL_SPEC))

    def assertFoldTwoFailed(self, cells, labels):
        failed = [(c.label, c.fold) for c in cells if c.error]
        self.assertEqual(sorted(failed), sorted((label, 2) for label in labels))
        self.assertTrue(all(c.scores is not None for c in cells if c.fold == 1))

    def test_cross_validation_skips_failed_fold(self):
        """Test un fold en échec est enregistré par cellule et les autres folds s'exécutent"""
        result = run_cross_validated(self.broken_plan())
        self.assertFoldTwoFailed(result.cells, ["contracting_tuned", "expanding_tuned"])
        self.assertFalse(result.complete)
        self.assertEqual(result.summaries["contracting_tuned"].fold_count, 1)

    def test_epoch_sweep_skips_failed_fold(self):
        """Test la sensibilité aux époques continue après un fold en échec"""
        report = run_epoch_sensitivity(self.broken_plan(), [1, 2])
        labels = [f"{label}@{epochs}" for label in ("contracting_tuned", "expanding_tuned") for epochs in (1, 2)]
        self.assertFoldTwoFailed(report.result.cells, labels)
        self.assertEqual(len(report.rows), 4)
        for row in report.rows:
            self.assertIsNotNone(row["dice_mean"])
        errors = [cell["error"] for cell in report.result.metadata["cells"] if cell["fold"] == 2]
        self.assertEqual(len(errors), 4)
        self.assertTrue(all(errors))

    def test_epoch_sweep_fail_fast(self):
        """Test fail_fast : l'échec du fold est relevé avec le fold en cause"""
        with self.assertRaises(ExperimentError) as ctx:
            run_epoch_sensitivity(self.broken_plan(fail_fast=True), [1])
        self.assertEqual(ctx.exception.fold, 2)


class RecordingTest(ExperimentFixtureMixin, TestCase):
    """Tests pour l'enregistrement des expériences en base"""

    def run_and_write(self, work):
        result = run_two_part_experiment(self.make_plan(work))
        write_experiment_outputs(result, work, kind="two_part")
        return result

    def test_record_experiment(self):
        """Test l'enregistrement d'un résultat et de ses métriques de fold"""
        work = Path(tempfile.mkdtemp(dir=self.root))
        result = self.run_and_write(work)
        experiment = record_experiment(result, "two_part", output_dir=work, manifest={"config_hash": "abc"})

        self.assertEqual(experiment.run_id, "essai")
        self.assertEqual(experiment.config_hash, "abc")
        self.assertEqual(experiment.fold_metrics.count(), 4)
        expected = result.summaries["contracting_tuned"].mean["dice"]
        self.assertAlmostEqual(experiment.mean_dice("contracting_tuned"), expected, places=6)

    def test_import_replaces_existing_run(self):
        """Test l'import d'un répertoire de sortie remplace le run de même identifiant"""
        work = Path(tempfile.mkdtemp(dir=self.root))
        result = self.run_and_write(work)
        record_experiment(result, "two_part")
        imported = import_experiment(work)

        self.assertEqual(Experiment.objects.count(), 1)
        self.assertEqual(FoldMetric.objects.count(), 4)
        self.assertEqual(imported.kind, "two_part")
        self.assertEqual(imported.fold_count, 2)
        self.assertEqual(set(imported.summary), {"contracting_tuned", "expanding_tuned"})

    def test_import_missing_summary(self):
        """Test l'import d'un répertoire incomplet"""
        with self.assertRaises(IngestionError):
            import_experiment(self.root / "absent")


class SyntheticEndToEndTest(SimpleTestCase):
    """Scénario complet : pré-entraînement sur blobs, fine-tuning sur speckle, deux balayages"""

    @tag("slow")
    def test_blobs_to_speckle(self):
        """Test Dice moyen >= 0.90 tous blocs entraînables, balayages produits dans les deux directions"""
        spec = ArchitectureSpec(128, 128, 1, depth=4, base_filters=16)
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            blobs = generate_synthetic_dataset("blobs", 300, (128, 128), seed=1, output_dir=root / "blobs")
            speckle = generate_synthetic_dataset("speckle", 60, (128, 128), seed=2, output_dir=root / "speckle")
            pretrained = pretrain(build_unet(spec), blobs, TrainConfig(epochs=40, validation_fraction=0.1, seed=1))
            self.assertEqual(pretrained.epochs, 40)
            self.assertIsNotNone(pretrained.training_log[-1]["val_loss"])

            plan = ExperimentPlan(
                dataset=speckle,
                pretrained=pretrained,
                architecture=spec,
                fold_count=5,
                finetune_config=TrainConfig(epochs=20),
                seed=3,
                augmentation=AugmentationConfig(target_total=600, seed=3),
                work_dir=root / "all_blocks",
                run_id="bout_en_bout",
            )
            blocks = enumerate_blocks(build_unet(spec))
            result = run_cross_validated(plan.with_schedules([full_plan(blocks)]))
            summary = result.summaries["all_blocks"]
            self.assertEqual(summary.fold_count, 5)
            self.assertGreaterEqual(summary.mean["dice"], 0.90)

            # Balayages plus courts : seules les courbes et les ensembles entraînables sont vérifiés
            sweep_plan = replace(plan, finetune_config=TrainConfig(epochs=5), augmentation=NO_AUGMENTATION)
            sweeps = [
                run_block_sweep(replace(sweep_plan, work_dir=root / direction), direction) for direction in ("shallow", "deep")
            ]
            for sweep in sweeps:
                self.assertEqual(sweep.block_count, len(blocks))
                self.assertEqual([k for k, _ in sweep.points], list(range(1, len(blocks) + 1)))
            shallow, deep = (sweep.result.schedules[-1] for sweep in sweeps)
            self.assertEqual(shallow.trainable_blocks, deep.trainable_blocks)
            self.assertEqual(shallow.trainable_blocks, full_plan(blocks).trainable_blocks)
            self.assertEqual(sweeps[0].points[-1][1].mean, sweeps[1].points[-1][1].mean)
            figure = plot_sweep(sweeps, root / "sweep.png")
            self.assertGreater(figure.stat().st_size, 0)
