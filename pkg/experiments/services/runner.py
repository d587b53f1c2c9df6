"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Orchestration des expériences validées croisées : comparaison deux parties, balayages
cumulatifs de blocs et sensibilité au nombre d'époques
"""

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from architecture.services.blocks import enumerate_blocks
from architecture.services.freeze import (
    Direction,
    FreezePlan,
    TwoPart,
    make_cumulative_plan,
    make_two_part_plan,
)
from architecture.services.unet import ArchitectureSpec, build_unet
from core.exceptions import ArgumentError, CheckpointIncompatibleError, ExperimentError, UNetLabError
from core.services.runtime import derive_seed, harness_setting
from ingestion.services.augmentation import AugmentationConfig, augment_dataset
from ingestion.services.folds import FoldAssignment, make_folds, split_for_fold
from ingestion.services.manifest import DatasetManifest
from ingestion.services.preprocessing import load_arrays, save_png
from scoring.services.exports import ResultRow
from scoring.services.metrics import MaskScores, MetricSummary, evaluate_masks, fold_average, summarize
from training.services.checkpoints import Checkpoint, load_into_graph, save_checkpoint
from training.services.engine import TrainConfig, binarize, finetune, predict_batch, resume

logger = logging.getLogger(__name__)

PRETRAINED_LABEL = "pretrained"


@dataclass(frozen=True)
class ExperimentPlan:
    """Tout ce qui définit une expérience validée croisée"""

    dataset: DatasetManifest
    pretrained: Checkpoint
    architecture: ArchitectureSpec
    fold_count: int = 5
    finetune_config: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    schedules: Tuple[FreezePlan, ...] = ()
    seed: int = 0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    work_dir: Optional[Path] = None
    include_pretrained_baseline: bool = False
    save_checkpoints: bool = False
    save_predictions: bool = False
    fail_fast: bool = False
    run_id: str = "run"

    def with_schedules(self, schedules: Sequence[FreezePlan]) -> "ExperimentPlan":
        return replace(self, schedules=tuple(schedules))

    @property
    def size(self):
        return (self.architecture.input_height, self.architecture.input_width)

    def validate(self):
        """
        Raises:
            ArgumentError: plan sans schéma, manifeste déjà augmenté, répertoire de travail absent
            CheckpointIncompatibleError: checkpoint d'une autre architecture
        """
        if not self.schedules:
            raise ArgumentError("Au moins un plan de gel est requis")
        if not self.dataset.only_originals:
            raise ArgumentError("Le jeu de données doit contenir uniquement des originaux (augmentation par fold)")
        if self.work_dir is None:
            raise ArgumentError("work_dir est requis (images augmentées, checkpoints)")
        graph = build_unet(self.architecture)
        if graph.fingerprint != self.pretrained.architecture_fingerprint:
            raise CheckpointIncompatibleError("Le checkpoint pré-entraîné ne correspond pas à l'architecture")
        blocks = enumerate_blocks(graph)
        for schedule in self.schedules:
            schedule.validate_against(blocks)
        labels = [schedule.label for schedule in self.schedules]
        if len(set(labels)) != len(labels) or PRETRAINED_LABEL in labels:
            raise ArgumentError(f"Libellés de plans en double ou réservés: {labels}")
        return self

    def cell_seed(self, schedule: FreezePlan, fold: int) -> int:
        """Graine d'entraînement d'une cellule : ne dépend que de l'ensemble entraînable"""
        return derive_seed(self.seed, schedule.key, fold)

    def fold_augmentation(self, fold: int) -> AugmentationConfig:
        return replace(self.augmentation, seed=derive_seed(self.augmentation.seed, self.seed, "fold", fold))


@dataclass
class CellOutcome:
    label: str
    k: Optional[int]
    fold: int
    scores: Optional[MaskScores] = None
    checkpoint_id: Optional[str] = None
    seed: Optional[int] = None
    seconds: float = 0.0
    error: Optional[str] = None
    trainable_blocks: Tuple[int, ...] = ()


class ResultCollector:
    """Collecteur sérialisé, clé (plan, k, fold); l'ordre de sortie suit l'ordre des plans"""

    def __init__(self, labels: Sequence[str]):
        self._order = {label: i for i, label in enumerate(labels)}
        self._lock = threading.Lock()
        self._cells: Dict[Tuple[str, Optional[int], int], CellOutcome] = {}

    def add(self, outcome: CellOutcome):
        key = (outcome.label, outcome.k, outcome.fold)
        with self._lock:
            if key in self._cells:
                raise ArgumentError(f"Cellule {key} déjà collectée")
            self._cells[key] = outcome

    def ordered(self) -> List[CellOutcome]:
        with self._lock:
            return sorted(self._cells.values(), key=lambda c: (self._order[c.label], c.fold))


@dataclass
class ExperimentResult:
    """Résumés par plan et métadonnées complètes du run"""

    run_id: str
    summaries: Dict[str, MetricSummary]
    cells: List[CellOutcome]
    schedules: Tuple[FreezePlan, ...]
    metadata: Dict = field(default_factory=dict)

    @property
    def failures(self) -> List[CellOutcome]:
        return [cell for cell in self.cells if cell.error is not None]

    @property
    def incomplete(self) -> List[str]:
        return sorted({cell.label for cell in self.failures})

    @property
    def complete(self):
        return not self.failures

    def rows(self) -> List[ResultRow]:
        return [
            ResultRow.from_scores(self.run_id, cell.label, cell.k, cell.fold, cell.scores)
            for cell in self.cells
            if cell.scores is not None
        ]

    def schedule_info(self) -> Dict:
        info = {
            schedule.label: {
                "k": len(schedule.trainable_blocks),
                "trainable_blocks": sorted(schedule.trainable_blocks),
                "complete": schedule.label not in self.incomplete,
            }
            for schedule in self.schedules
        }
        if PRETRAINED_LABEL in self.summaries:
            info[PRETRAINED_LABEL] = {"k": 0, "trainable_blocks": [], "complete": PRETRAINED_LABEL not in self.incomplete}
        return info


@dataclass
class SweepResult:
    direction: Direction
    points: List[Tuple[int, MetricSummary]]
    result: Optional[ExperimentResult] = None
    blocks: Optional[int] = None

    @property
    def block_count(self) -> int:
        """Nombre de blocs du réseau balayé (points en échec compris)"""
        if self.blocks is not None:
            return self.blocks
        if self.result is not None:
            return len(self.result.schedules)
        return max((k for k, _ in self.points), default=0)


@dataclass
class EpochSensitivityReport:
    grid: Tuple[int, ...]
    rows: List[Dict]
    result: ExperimentResult


@dataclass
class FoldData:
    fold: int
    train_manifest: DatasetManifest
    validation: DatasetManifest
    train_images: np.ndarray
    train_masks: np.ndarray
    val_images: np.ndarray
    val_masks: np.ndarray


def prepare_fold(plan: ExperimentPlan, folds: FoldAssignment, fold: int) -> FoldData:
    """Sépare le fold, ré-augmente l'entraînement et charge les tableaux en mémoire"""
    train, validation = split_for_fold(plan.dataset, folds, fold)
    if plan.augmentation.target_total:
        output_dir = Path(plan.work_dir) / f"fold{fold}" / "augmented"
        train = augment_dataset(train, plan.fold_augmentation(fold), output_dir, plan.size)
    train_images, train_masks = load_arrays(train, plan.size)
    val_images, val_masks = load_arrays(validation, plan.size)
    logger.info("Fold %s: %s images d'entraînement, %s de validation", fold, len(train), len(validation))
    return FoldData(fold, train, validation, train_images, train_masks, val_images, val_masks)


def _score(graph, data: FoldData) -> Tuple[MaskScores, np.ndarray]:
    predictions = binarize(predict_batch(graph, data.val_images))
    scores = evaluate_masks(predictions[:, 0], data.val_masks[:, 0] > 0.5)
    return fold_average(scores), predictions


def _save_predictions(plan: ExperimentPlan, label: str, data: FoldData, predictions: np.ndarray):
    directory = Path(plan.work_dir) / "predictions" / label
    for record, mask in zip(data.validation.records, predictions[:, 0]):
        save_png(mask.astype(np.float32), directory / f"{record.id}.png")


def _run_cell(plan: ExperimentPlan, schedule: FreezePlan, data: FoldData) -> CellOutcome:
    started = time.perf_counter()
    seed = plan.cell_seed(schedule, data.fold)
    graph = build_unet(plan.architecture)
    cfg = replace(plan.finetune_config, seed=seed)
    ckpt = finetune(graph, plan.pretrained, schedule, (data.train_images, data.train_masks), cfg)
    scores, predictions = _score(graph, data)
    if plan.save_checkpoints:
        save_checkpoint(ckpt, Path(plan.work_dir) / "checkpoints" / f"{schedule.label}_fold{data.fold}.ckpt")
    if plan.save_predictions:
        _save_predictions(plan, schedule.label, data, predictions)
    return CellOutcome(
        label=schedule.label,
        k=len(schedule.trainable_blocks),
        fold=data.fold,
        scores=scores,
        checkpoint_id=ckpt.checkpoint_id,
        seed=seed,
        seconds=time.perf_counter() - started,
        trainable_blocks=tuple(sorted(schedule.trainable_blocks)),
    )


def _run_baseline(plan: ExperimentPlan, data: FoldData) -> CellOutcome:
    started = time.perf_counter()
    graph = load_into_graph(build_unet(plan.architecture), plan.pretrained)
    scores, predictions = _score(graph, data)
    if plan.save_predictions:
        _save_predictions(plan, PRETRAINED_LABEL, data, predictions)
    return CellOutcome(
        label=PRETRAINED_LABEL,
        k=0,
        fold=data.fold,
        scores=scores,
        checkpoint_id=plan.pretrained.checkpoint_id,
        seconds=time.perf_counter() - started,
    )


def _guarded(plan: ExperimentPlan, label: str, k, fold: int, action) -> CellOutcome:
    """Exécute une cellule; un échec est enregistré (ou relevé si fail_fast)"""
    try:
        outcome = action()
    except (UNetLabError, RuntimeError, OSError) as e:
        if plan.fail_fast:
            raise ExperimentError(str(e), schedule=label, fold=fold) from e
        logger.warning("Cellule %s / fold %s en échec: %s", label, fold, e)
        return CellOutcome(label=label, k=k, fold=fold, error=f"{type(e).__name__}: {e}")
    logger.info("Cellule %s / fold %s: Dice %.4f", label, fold, outcome.scores.dice)
    return outcome


def _prepare_guarded(plan: ExperimentPlan, folds: FoldAssignment, fold: int, cells, collector: ResultCollector):
    """
    Prépare un fold; en cas d'échec, chaque cellule (libellé, k) du fold est enregistrée
    en échec et None est retourné (ou ExperimentError avec fail_fast)
    """
    try:
        return prepare_fold(plan, folds, fold)
    except (UNetLabError, OSError) as e:
        if plan.fail_fast:
            raise ExperimentError(str(e), schedule="*", fold=fold) from e
        logger.warning("Préparation du fold %s en échec: %s", fold, e)
        for label, k in cells:
            collector.add(CellOutcome(label, k, fold, error=f"{type(e).__name__}: {e}"))
        return None


def _run_fold(plan: ExperimentPlan, folds: FoldAssignment, fold: int, collector: ResultCollector):
    cells = [(s.label, len(s.trainable_blocks)) for s in plan.schedules]
    if plan.include_pretrained_baseline:
        cells.append((PRETRAINED_LABEL, 0))
    data = _prepare_guarded(plan, folds, fold, cells, collector)
    if data is None:
        return
    if plan.include_pretrained_baseline:
        collector.add(_guarded(plan, PRETRAINED_LABEL, 0, fold, lambda: _run_baseline(plan, data)))
    for schedule in plan.schedules:
        collector.add(
            _guarded(plan, schedule.label, len(schedule.trainable_blocks), fold, lambda s=schedule: _run_cell(plan, s, data))
        )


def _summaries(cells: List[CellOutcome], labels: Sequence[str]) -> Dict[str, MetricSummary]:
    summaries = {}
    for label in labels:
        fold_scores = [cell.scores for cell in cells if cell.label == label and cell.scores is not None]
        if fold_scores:
            summaries[label] = summarize(fold_scores)
    return summaries


def _metadata(plan: ExperimentPlan, folds: FoldAssignment, cells: List[CellOutcome], started: float, workers: int):
    return {
        "run_id": plan.run_id,
        "seed": plan.seed,
        "fold_count": plan.fold_count,
        "fold_assignment_seed": plan.seed,
        "fold_assignment": folds.to_dict(),
        "architecture": plan.architecture.to_dict(),
        "finetune_config": plan.finetune_config.to_dict(),
        "augmentation": plan.augmentation.to_dict(),
        "augmentation_policy": "re-augmented per training split, validation folds are originals only",
        "pretrained_checkpoint": plan.pretrained.checkpoint_id,
        "dataset": {"name": plan.dataset.name, "modality": plan.dataset.modality.value, "originals": len(plan.dataset)},
        "schedules": [schedule.to_dict() for schedule in plan.schedules],
        "cells": [
            {
                "schedule_label": cell.label,
                "k": cell.k,
                "fold": cell.fold,
                "seed": cell.seed,
                "checkpoint_id": cell.checkpoint_id,
                "trainable_blocks": list(cell.trainable_blocks),
                "seconds": round(cell.seconds, 3),
                "error": cell.error,
            }
            for cell in cells
        ],
        "max_workers": workers,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }


def run_cross_validated(plan: ExperimentPlan, max_workers: Optional[int] = None) -> ExperimentResult:
    """
    Exécute chaque (plan de gel, fold) : ré-augmentation de l'entraînement, fine-tuning depuis
    le checkpoint pré-entraîné partagé, évaluation sur les originaux du fold de validation.

    Les folds sont calculés une seule fois (graine maîtresse) et partagés par tous les plans.
    Avec max_workers > 1 (UNET_LAB["MAX_WORKERS"] par défaut), les folds s'exécutent en parallèle.

    Raises:
        ArgumentError, CheckpointIncompatibleError: plan invalide
        ExperimentError: avec fail_fast, première cellule en échec; sinon si aucune cellule n'a abouti
    """
    plan.validate()
    started = time.perf_counter()
    workers = max(1, int(max_workers or harness_setting("MAX_WORKERS", 1)))
    folds = make_folds(plan.dataset, plan.fold_count, plan.seed)
    labels = ([PRETRAINED_LABEL] if plan.include_pretrained_baseline else []) + [s.label for s in plan.schedules]
    collector = ResultCollector(labels)
    fold_ids = range(1, plan.fold_count + 1)
    logger.info("Expérience %s: %s plans x %s folds (%s workers)", plan.run_id, len(plan.schedules), plan.fold_count, workers)

    if workers == 1:
        for fold in fold_ids:
            _run_fold(plan, folds, fold, collector)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(_run_fold, plan, folds, fold, collector) for fold in fold_ids]:
                future.result()

    cells = collector.ordered()
    summaries = _summaries(cells, labels)
    if not summaries:
        first = cells[0]
        raise ExperimentError(f"Aucune cellule n'a abouti ({first.error})", schedule=first.label, fold=first.fold)
    result = ExperimentResult(
        run_id=plan.run_id,
        summaries=summaries,
        cells=cells,
        schedules=plan.schedules,
        metadata=_metadata(plan, folds, cells, started, workers),
    )
    if result.incomplete:
        logger.warning("Plans incomplets: %s", ", ".join(result.incomplete))
    return result


def two_part_schedules(architecture: ArchitectureSpec) -> List[FreezePlan]:
    blocks = enumerate_blocks(build_unet(architecture))
    return [make_two_part_plan(part, blocks) for part in (TwoPart.CONTRACTING, TwoPart.EXPANDING)]


def sweep_schedules(architecture: ArchitectureSpec, direction) -> List[FreezePlan]:
    blocks = enumerate_blocks(build_unet(architecture))
    return [make_cumulative_plan(direction, k, blocks) for k in range(1, len(blocks) + 1)]


def run_two_part_experiment(plan: ExperimentPlan, max_workers=None) -> ExperimentResult:
    """Plans "contracting_tuned" et "expanding_tuned" """
    return run_cross_validated(plan.with_schedules(two_part_schedules(plan.architecture)), max_workers)


def run_block_sweep(plan: ExperimentPlan, direction, max_workers=None) -> SweepResult:
    """
    Un run validé croisé par k = 1..nombre de blocs. Les points d'un plan sans aucun fold
    abouti sont omis.
    """
    direction = Direction.parse(direction)
    schedules = sweep_schedules(plan.architecture, direction)
    result = run_cross_validated(plan.with_schedules(schedules), max_workers)
    points = [(k, result.summaries[s.label]) for k, s in enumerate(schedules, start=1) if s.label in result.summaries]
    return SweepResult(direction=direction, points=points, result=result, blocks=len(schedules))


def _grid_label(label, epochs):
    return f"{label}@{epochs}"


def run_epoch_sensitivity(plan: ExperimentPlan, epoch_grid: Sequence[int]) -> EpochSensitivityReport:
    """
    Entraîne chaque plan jusqu'à chaque point de la grille par reprise (état d'Adam conservé)
    et rapporte l'écart de Dice moyen par rapport au premier point.

    Raises:
        ArgumentError: grille non strictement croissante, ou premier point différent de
            finetune_config.epochs
    """
    grid = tuple(int(e) for e in epoch_grid)
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ArgumentError(f"Grille d'époques non strictement croissante: {list(grid)}")
    if grid[0] != plan.finetune_config.epochs:
        raise ArgumentError(f"Le premier point ({grid[0]}) doit valoir finetune.epochs ({plan.finetune_config.epochs})")
    plan.validate()
    started = time.perf_counter()
    folds = make_folds(plan.dataset, plan.fold_count, plan.seed)
    labels = [_grid_label(s.label, e) for s in plan.schedules for e in grid]
    collector = ResultCollector(labels)

    grid_cells = [(_grid_label(s.label, e), len(s.trainable_blocks)) for s in plan.schedules for e in grid]

    for fold in range(1, plan.fold_count + 1):
        data = _prepare_guarded(plan, folds, fold, grid_cells, collector)
        if data is None:
            continue
        for schedule in plan.schedules:
            _extend_over_grid(plan, schedule, data, grid, collector)

    cells = collector.ordered()
    summaries = _summaries(cells, labels)
    if not summaries:
        first = cells[0]
        raise ExperimentError(f"Aucune cellule n'a abouti ({first.error})", schedule=first.label, fold=first.fold)
    rows = []
    for schedule in plan.schedules:
        first = summaries.get(_grid_label(schedule.label, grid[0]))
        for epochs in grid:
            summary = summaries.get(_grid_label(schedule.label, epochs))
            rows.append(
                {
                    "schedule_label": schedule.label,
                    "epochs": epochs,
                    "dice_mean": summary.mean["dice"] if summary else None,
                    "dice_std": summary.std["dice"] if summary else None,
                    "dice_delta": summary.mean["dice"] - first.mean["dice"] if summary and first else None,
                    "pixel_error_pct_mean": summary.mean["pixel_error_pct"] if summary else None,
                    "adjusted_rand_mean": summary.mean["adjusted_rand"] if summary else None,
                }
            )
    grid_schedules = tuple(replace(s, label=_grid_label(s.label, e)) for s in plan.schedules for e in grid)
    result = ExperimentResult(
        run_id=plan.run_id,
        summaries=summaries,
        cells=cells,
        schedules=grid_schedules,
        metadata={**_metadata(plan, folds, cells, started, 1), "epoch_grid": list(grid)},
    )
    return EpochSensitivityReport(grid=grid, rows=rows, result=result)


def _extend_over_grid(plan: ExperimentPlan, schedule: FreezePlan, data: FoldData, grid, collector: ResultCollector):
    seed = plan.cell_seed(schedule, data.fold)
    cfg = replace(plan.finetune_config, seed=seed)
    graph = build_unet(plan.architecture)
    arrays = (data.train_images, data.train_masks)
    k = len(schedule.trainable_blocks)
    ckpt, previous = None, 0
    for position, epochs in enumerate(grid):
        label = _grid_label(schedule.label, epochs)
        step = replace(cfg, epochs=epochs - previous)
        started = time.perf_counter()
        try:
            if ckpt is None:
                ckpt = finetune(graph, plan.pretrained, schedule, arrays, step)
            else:
                ckpt = resume(graph, ckpt, schedule, arrays, step)
            scores, _ = _score(graph, data)
        except (UNetLabError, RuntimeError) as e:
            if plan.fail_fast:
                raise ExperimentError(str(e), schedule=label, fold=data.fold) from e
            logger.warning("Cellule %s / fold %s en échec: %s", label, data.fold, e)
            # les points suivants dépendent de celui-ci
            for remaining in grid[position:]:
                collector.add(CellOutcome(_grid_label(schedule.label, remaining), k, data.fold, error=f"{type(e).__name__}: {e}"))
            return
        collector.add(
            CellOutcome(
                label=label,
                k=k,
                fold=data.fold,
                scores=scores,
                checkpoint_id=ckpt.checkpoint_id,
                seed=seed,
                seconds=time.perf_counter() - started,
                trainable_blocks=tuple(sorted(schedule.trainable_blocks)),
            )
        )
        previous = epochs
