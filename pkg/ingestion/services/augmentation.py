"""
Augmentation conjointe image / masque : décalage, rotation, retournement, cisaillement, zoom

Chaque échantillon augmenté tire sa transformation d'un flux aléatoire propre, graine
(seed, indice de l'original, indice de réplique) : le résultat ne dépend pas de l'ordre
d'exécution.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from core.exceptions import ArgumentError, ConfigurationError
from core.services.validation import is_integer, require_number

from .manifest import DatasetManifest, SampleRecord, write_manifest
from .preprocessing import binarize_mask, default_size, load_sample, quantize, save_png

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentationConfig:
    """Amplitudes des transformations aléatoires et nombre total d'images visé"""

    rotation_max: float = 10.0
    shift_max: float = 0.1
    shear_max: float = 10.0
    zoom_range: float = 0.1
    allow_horizontal_flip: bool = True
    flip_probability: float = 0.5
    target_total: int = 600
    seed: int = 0

    def validate(self):
        for name in ("rotation_max", "shift_max", "shear_max"):
            require_number(getattr(self, name), f"augmentation.{name}", minimum=0.0)
        require_number(self.zoom_range, "augmentation.zoom_range", minimum=0.0, maximum=1.0, exclusive_maximum=True)
        if not isinstance(self.allow_horizontal_flip, bool):
            raise ConfigurationError("booléen attendu", field="augmentation.allow_horizontal_flip")
        require_number(self.flip_probability, "augmentation.flip_probability", minimum=0.0, maximum=1.0)
        if not is_integer(self.target_total) or self.target_total < 0:
            raise ConfigurationError("doit être un entier positif", field="augmentation.target_total")
        if not is_integer(self.seed):
            raise ConfigurationError(f"doit être un entier (reçu {self.seed!r})", field="augmentation.seed")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigurationError(f"champ inconnu {unknown[0]!r}", field=f"augmentation.{unknown[0]}")
        return cls(**data).validate()


@dataclass(frozen=True)
class TransformParams:
    """Paramètres d'une transformation géométrique (décalages en fraction de la taille)"""

    rotation_deg: float = 0.0
    shift_y: float = 0.0
    shift_x: float = 0.0
    shear_deg: float = 0.0
    zoom: float = 1.0
    horizontal_flip: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def sample_transform(cfg: AugmentationConfig, origin_index: int, replica_index: int) -> TransformParams:
    """Tire une combinaison de toutes les transformations activées"""
    rng = np.random.default_rng([cfg.seed, origin_index, replica_index])
    # Tirages toujours dans le même ordre, même pour une amplitude nulle
    rotation = rng.uniform(-cfg.rotation_max, cfg.rotation_max)
    shift_y = rng.uniform(-cfg.shift_max, cfg.shift_max)
    shift_x = rng.uniform(-cfg.shift_max, cfg.shift_max)
    shear = rng.uniform(-cfg.shear_max, cfg.shear_max)
    zoom = rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range)
    flip = bool(rng.random() < cfg.flip_probability) and cfg.allow_horizontal_flip
    return TransformParams(float(rotation), float(shift_y), float(shift_x), float(shear), float(zoom), flip)


def affine_parameters(params: TransformParams, shape: Tuple[int, int]):
    """
    Matrice et décalage pour scipy.ndimage.affine_transform (sortie -> entrée),
    transformation centrée sur l'image en coordonnées (ligne, colonne).
    """
    height, width = shape
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    theta = math.radians(params.rotation_deg)
    shear = math.radians(params.shear_deg)
    rotation = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shearing = np.array([[1.0, -math.sin(shear)], [0.0, math.cos(shear)]])
    zoom = np.diag([params.zoom, params.zoom])
    flip = np.diag([1.0, -1.0 if params.horizontal_flip else 1.0])
    forward = rotation @ shearing @ zoom @ flip
    translation = np.array([params.shift_y * height, params.shift_x * width])
    inverse = np.linalg.inv(forward)
    offset = center - inverse @ (center + translation)
    return inverse, offset


def apply_transform(array: np.ndarray, params: TransformParams, order: int) -> np.ndarray:
    """Applique la transformation; hors de l'image, remplissage par 0 (fond)"""
    matrix, offset = affine_parameters(params, array.shape)
    out = ndimage.affine_transform(
        array.astype(np.float64), matrix, offset=offset, order=order, mode="constant", cval=0.0, prefilter=False
    )
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def replay_transform(image: np.ndarray, mask: np.ndarray, params: TransformParams):
    """Rejoue une transformation enregistrée sur une paire (image bilinéaire, masque plus proche voisin)"""
    return apply_transform(image, params, order=1), binarize_mask(apply_transform(mask, params, order=0))


def allocate_replicas(originals: int, extra: int):
    """Répartition circulaire des répliques : (indice de l'original, indice de réplique)"""
    return [(j % originals, j // originals) for j in range(extra)]


def augment_dataset(
    manifest: DatasetManifest,
    cfg: AugmentationConfig,
    output_dir,
    size: Optional[Tuple[int, int]] = None,
    max_workers: int = 1,
) -> DatasetManifest:
    """
    Complète le jeu de données jusqu'à cfg.target_total enregistrements, originaux compris.

    Les images augmentées sont écrites dans output_dir (images/, masks/) avec un manifeste
    régénéré et un fichier de provenance augmentation.json.

    Raises:
        ArgumentError: si target_total est inférieur au nombre d'originaux
    """
    cfg.validate()
    originals = list(manifest.originals)
    if cfg.target_total < len(originals):
        raise ArgumentError(f"target_total={cfg.target_total} < {len(originals)} originaux")
    extra = cfg.target_total - len(originals)
    if extra == 0:
        return manifest

    size = tuple(size or default_size())
    output_dir = Path(output_dir)
    jobs = allocate_replicas(len(originals), extra)
    cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    for origin_index in sorted({o for o, _ in jobs}):
        cache[origin_index] = load_sample(originals[origin_index], size)

    def generate(job):
        origin_index, replica_index = job
        origin = originals[origin_index]
        params = sample_transform(cfg, origin_index, replica_index)
        image, mask = replay_transform(*cache[origin_index], params)
        record_id = f"{origin.id}__aug{replica_index:03d}"
        record = SampleRecord(
            id=record_id,
            image_path=save_png(image, output_dir / "images" / f"{record_id}.png"),
            mask_path=save_png(mask, output_dir / "masks" / f"{record_id}.png"),
            origin_id=origin.id,
        )
        return record, params

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        generated = list(pool.map(generate, jobs))

    augmented = DatasetManifest(
        tuple(originals) + tuple(record for record, _ in generated),
        modality=manifest.modality,
        name=f"{manifest.name}-augmented",
        source=output_dir,
    )
    write_manifest(augmented, output_dir / "manifest.csv")
    provenance = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "size": list(size),
        "source": manifest.name,
        "records": {record.id: {"origin_id": record.origin_id, "params": params.to_dict()} for record, params in generated},
    }
    (output_dir / "augmentation.json").write_text(json.dumps(provenance, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Augmentation %s: %s originaux + %s répliques", manifest.name, len(originals), extra)
    return augmented


def replay_from_provenance(manifest: DatasetManifest, provenance_path, record_id: str):
    """Recalcule une paire augmentée (quantifiée comme sur disque) depuis le fichier de provenance"""
    provenance = json.loads(Path(provenance_path).read_text(encoding="utf-8"))
    entry = provenance["records"][record_id]
    origin = manifest.by_id()[entry["origin_id"]]
    image, mask = replay_transform(*load_sample(origin, tuple(provenance["size"])), TransformParams.from_dict(entry["params"]))
    return quantize(image), quantize(mask)
