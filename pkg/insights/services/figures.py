"""
Figures statiques : courbes de balayage avec barres d'erreur, panneaux qualitatifs,
grilles de visualisations d'activation

Rendu matplotlib hors écran (Agg); des entrées identiques donnent des fichiers PNG identiques.
"""

import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from architecture.services.freeze import CUMULATIVE_LABEL, Direction  # noqa: E402
from core.exceptions import ArgumentError  # noqa: E402
from experiments.services.runner import SweepResult  # noqa: E402
from scoring.services.exports import ResultRow  # noqa: E402
from scoring.services.metrics import summarize  # noqa: E402

logger = logging.getLogger(__name__)

# Pas de version logicielle ni de date dans les PNG
PNG_METADATA = {"Software": None}
DIRECTION_STYLES = {
    Direction.SHALLOW_TO_DEEP: {"color": "tab:blue", "marker": "o", "label": "shallow → deep"},
    Direction.DEEP_TO_SHALLOW: {"color": "tab:orange", "marker": "s", "label": "deep → shallow"},
}
DPI = 100


def _save(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="png", dpi=DPI, metadata=PNG_METADATA)
    plt.close(fig)
    logger.info("Figure écrite: %s", out_path)
    return out_path


def plot_sweep(results: Sequence[SweepResult], out_path, metric: str = "dice") -> Path:
    """
    Une courbe par direction : x = nombre de blocs entraînables, y = moyenne sur les folds,
    barres d'erreur = écart-type sur les folds.

    Raises:
        ArgumentError: liste vide ou nombres de blocs différents
    """
    results = list(results)
    if not results:
        raise ArgumentError("Aucun balayage à tracer")
    counts = {result.block_count for result in results}
    if len(counts) != 1:
        raise ArgumentError(f"Balayages de tailles différentes: {sorted(counts)} blocs")
    block_count = counts.pop()

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for result in results:
        style = DIRECTION_STYLES[Direction.parse(result.direction)]
        ks = [k for k, _ in result.points]
        means = [summary.mean[metric] for _, summary in result.points]
        stds = [summary.std[metric] for _, summary in result.points]
        ax.errorbar(ks, means, yerr=stds, capsize=3, linewidth=1.2, **style)
    ax.set_xticks(range(1, block_count + 1))
    ax.set_xlim(0.5, block_count + 0.5)
    ax.set_xlabel("Nombre de blocs entraînables")
    ax.set_ylabel(f"{metric} moyen (± écart-type sur les folds)")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    return _save(fig, out_path)


def sweep_results_from_rows(rows: Iterable[ResultRow]) -> List[SweepResult]:
    """
    Reconstruit les balayages à partir des lignes de results.csv (libellés "<direction>_k<k>").

    Les autres libellés (plans deux parties, baseline) sont ignorés.
    """
    by_label: Dict[Tuple[Direction, int], list] = defaultdict(list)
    for row in rows:
        match = CUMULATIVE_LABEL.match(row.schedule_label)
        if match:
            by_label[(Direction(match.group(1)), int(match.group(2)))].append(row.scores)
    results = []
    for direction in Direction:
        points = sorted(((k, summarize(scores)) for (d, k), scores in by_label.items() if d is direction), key=lambda p: p[0])
        if points:
            results.append(SweepResult(direction=direction, points=points))
    return results


def _check_binary(mask, what):
    values = np.unique(np.asarray(mask))
    if not set(values.tolist()) <= {0, 1}:
        raise ArgumentError(f"{what} n'est pas binaire (valeurs {values[:5].tolist()}...)")


def build_panel_figure(images: Sequence, gt_masks: Sequence, prediction_sets: Sequence[Tuple[str, Sequence]]):
    """
    Grille une ligne par cas; colonnes : image, vérité terrain, puis chaque jeu de prédictions.

    Raises:
        ArgumentError: longueurs différentes, masque non binaire, aucun cas
    """
    prediction_sets = list(prediction_sets.items()) if isinstance(prediction_sets, dict) else list(prediction_sets)
    if not len(images):
        raise ArgumentError("Aucun cas à afficher")
    if len(gt_masks) != len(images):
        raise ArgumentError(f"{len(images)} images pour {len(gt_masks)} masques")
    for label, predictions in prediction_sets:
        if len(predictions) != len(images):
            raise ArgumentError(f"Jeu {label!r}: {len(predictions)} prédictions pour {len(images)} images")
    for i, mask in enumerate(gt_masks):
        _check_binary(mask, f"Vérité terrain du cas {i}")
    for label, predictions in prediction_sets:
        for i, mask in enumerate(predictions):
            _check_binary(mask, f"Prédiction {label!r} du cas {i}")

    titles = ["image", "vérité terrain", *(label for label, _ in prediction_sets)]
    rows, cols = len(images), len(titles)
    fig, axes = plt.subplots(rows, cols, figsize=(2.0 * cols, 2.0 * rows), squeeze=False)
    for r in range(rows):
        cells = [images[r], gt_masks[r], *(predictions[r] for _, predictions in prediction_sets)]
        for c, cell in enumerate(cells):
            ax = axes[r][c]
            ax.imshow(np.asarray(cell, dtype=np.float32), cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(titles[c], fontsize=9)
    fig.tight_layout()
    return fig


def qualitative_panel(images: Sequence, gt_masks: Sequence, prediction_sets, out_path) -> Path:
    return _save(build_panel_figure(images, gt_masks, prediction_sets), out_path)


def save_activation_grid(tiles: Sequence[Tuple[str, np.ndarray]], out_path, columns: int = 5) -> Path:
    """Juxtapose des visualisations d'activation (titre, image [0,1]) dans un seul PNG"""
    tiles = list(tiles)
    if not tiles:
        raise ArgumentError("Aucune visualisation à assembler")
    columns = max(1, min(columns, len(tiles)))
    rows = -(-len(tiles) // columns)
    fig, axes = plt.subplots(rows, columns, figsize=(2.2 * columns, 2.4 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (title, image) in zip(axes.flat, tiles):
        ax.imshow(np.asarray(image, dtype=np.float32), cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_title(title, fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)
