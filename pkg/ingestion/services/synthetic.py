"""
Jeux de données synthétiques : formes "naturelles" (blobs) et images texturées par du
speckle, proches de l'échographie (lésion hypoéchogène)
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Tuple

import numpy as np
from scipy import ndimage

from core.exceptions import ArgumentError

from .manifest import DatasetManifest, Modality, SampleRecord, write_manifest
from .preprocessing import save_png

logger = logging.getLogger(__name__)


class SyntheticKind(str, Enum):
    BLOBS = "blobs"
    SPECKLE = "speckle"


def _ellipse(shape, rng, min_radius=0.10, max_radius=0.25):
    height, width = shape
    rows, cols = np.mgrid[0:height, 0:width]
    ry = rng.uniform(min_radius, max_radius) * height
    rx = rng.uniform(min_radius, max_radius) * width
    cy = rng.uniform(ry + 2, height - ry - 2)
    cx = rng.uniform(rx + 2, width - rx - 2)
    angle = rng.uniform(0, np.pi)
    y, x = rows - cy, cols - cx
    u = x * np.cos(angle) + y * np.sin(angle)
    v = -x * np.sin(angle) + y * np.cos(angle)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _smooth_field(shape, rng, sigma):
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma)
    span = field.max() - field.min()
    return (field - field.min()) / span if span > 0 else np.zeros(shape)


def blob_sample(shape: Tuple[int, int], rng) -> Tuple[np.ndarray, np.ndarray]:
    """Fond texturé doux et 1 à 3 ellipses plus claires"""
    mask = np.zeros(shape, dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        mask |= _ellipse(shape, rng)
    background = 0.15 + 0.35 * _smooth_field(shape, rng, sigma=max(shape) / 16)
    foreground = 0.65 + 0.3 * _smooth_field(shape, rng, sigma=max(shape) / 32)
    image = np.where(mask, foreground, background)
    image = ndimage.gaussian_filter(image, sigma=0.8) + rng.normal(0, 0.02, shape)
    return np.clip(image, 0, 1).astype(np.float32), mask.astype(np.float32)


def speckle_sample(shape: Tuple[int, int], rng) -> Tuple[np.ndarray, np.ndarray]:
    """Tissu échogène, lésion hypoéchogène, speckle multiplicatif de Rayleigh"""
    mask = _ellipse(shape, rng, min_radius=0.12, max_radius=0.28)
    echogenicity = 0.55 + 0.2 * _smooth_field(shape, rng, sigma=max(shape) / 8)
    echogenicity = np.where(mask, 0.15, echogenicity)
    speckle = rng.rayleigh(scale=1.0, size=shape) / np.sqrt(np.pi / 2)
    image = ndimage.gaussian_filter(echogenicity * speckle, sigma=1.0)
    return np.clip(image, 0, 1).astype(np.float32), mask.astype(np.float32)


GENERATORS = {SyntheticKind.BLOBS: blob_sample, SyntheticKind.SPECKLE: speckle_sample}


def generate_synthetic_dataset(kind, count: int, size: Tuple[int, int], seed: int, output_dir, name=None) -> DatasetManifest:
    """
    Génère `count` paires image / masque et les écrit en PNG avec un manifest.csv.

    Chaque échantillon a son propre flux aléatoire (seed, indice).
    """
    kind = SyntheticKind(kind)
    if count < 1:
        raise ArgumentError(f"count={count} doit être >= 1")
    output_dir = Path(output_dir)
    generator = GENERATORS[kind]
    records = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        image, mask = generator(tuple(size), rng)
        sample_id = f"{kind.value}_{i:04d}"
        records.append(
            SampleRecord(
                id=sample_id,
                image_path=save_png(image, output_dir / "images" / f"{sample_id}.png"),
                mask_path=save_png(mask, output_dir / "masks" / f"{sample_id}.png"),
            )
        )
    manifest = DatasetManifest(tuple(records), modality=Modality.SYNTHETIC, name=name or kind.value, source=output_dir)
    write_manifest(manifest, output_dir / "manifest.csv")
    logger.info("Jeu synthétique %s: %s paires dans %s", kind.value, count, output_dir)
    return manifest
