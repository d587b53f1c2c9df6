"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Manifestes de jeux de données : paires image / masque
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import pandas as pd
from PIL import Image, UnidentifiedImageError

from core.exceptions import IngestionError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff")
MANIFEST_COLUMNS = ["id", "image_path", "mask_path", "origin_id"]


class Modality(str, Enum):
    NATURAL = "natural"
    ULTRASOUND = "ultrasound"
    XRAY = "xray"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class SampleRecord:
    """Une paire image / masque; origin_id désigne l'original pour les échantillons augmentés"""

    id: str
    image_path: Path
    mask_path: Path
    origin_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "image_path", Path(self.image_path))
        object.__setattr__(self, "mask_path", Path(self.mask_path))
        if not self.origin_id:
            object.__setattr__(self, "origin_id", self.id)

    @property
    def is_original(self):
        return self.origin_id == self.id


@dataclass(frozen=True)
class DatasetManifest:
    """Jeu de données immuable, enregistrements triés par identifiant"""

    records: Tuple[SampleRecord, ...]
    modality: Modality = Modality.SYNTHETIC
    name: str = ""
    source: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        records = tuple(sorted(self.records, key=lambda r: r.id))
        ids = [r.id for r in records]
        if len(ids) != len(set(ids)):
            duplicates = sorted({i for i in ids if ids.count(i) > 1})
            raise IngestionError(f"Identifiants dupliqués dans le manifeste {self.name!r}", record_id=duplicates[0])
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "modality", Modality(self.modality))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self):
        return [r.id for r in self.records]

    @property
    def originals(self) -> Tuple[SampleRecord, ...]:
        return tuple(r for r in self.records if r.is_original)

    @property
    def only_originals(self):
        return all(r.is_original for r in self.records)

    def by_id(self) -> Dict[str, SampleRecord]:
        return {r.id: r for r in self.records}

    def subset(self, ids: Iterable[str], name=None) -> "DatasetManifest":
        wanted = set(ids)
        return replace(self, records=tuple(r for r in self.records if r.id in wanted), name=name or self.name)


def image_size(path: Path, record_id=None) -> Tuple[int, int]:
    """Taille (largeur, hauteur) lue dans l'en-tête du fichier"""
    try:
        with Image.open(path) as img:
            return img.size
    except FileNotFoundError as e:
        raise IngestionError(f"Fichier introuvable: {path}", record_id=record_id) from e
    except (UnidentifiedImageError, OSError) as e:
        raise IngestionError(f"Image illisible {path}: {e}", record_id=record_id) from e


def check_record(record: SampleRecord):
    """Vérifie l'existence des fichiers et l'égalité des tailles image / masque"""
    for path in (record.image_path, record.mask_path):
        if not path.is_file():
            raise IngestionError(f"Fichier introuvable: {path}", record_id=record.id)
    image_wh = image_size(record.image_path, record.id)
    mask_wh = image_size(record.mask_path, record.id)
    if image_wh != mask_wh:
        raise IngestionError(f"Tailles différentes: image {image_wh}, masque {mask_wh}", record_id=record.id)


def _records_from_directory(directory: Path):
    images_dir, masks_dir = directory / "images", directory / "masks"
    if not images_dir.is_dir():
        return []
    masks = {p.stem: p for p in masks_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS} if masks_dir.is_dir() else {}
    records = []
    for image_path in sorted(images_dir.iterdir()):
        if image_path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        sample_id = image_path.stem
        if sample_id not in masks:
            raise IngestionError(f"Masque manquant dans {masks_dir}", record_id=sample_id)
        records.append(SampleRecord(sample_id, image_path, masks[sample_id]))
    return records


def _records_from_csv(path: Path):
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestionError(f"Manifeste CSV illisible {path}: {e}") from e
    missing = [c for c in ("id", "image_path", "mask_path") if c not in table.columns]
    if missing:
        raise IngestionError(f"Colonne(s) manquante(s) dans {path}: {', '.join(missing)}")
    base = path.parent
    records = []
    for row in table.to_dict(orient="records"):
        records.append(
            SampleRecord(
                id=row["id"],
                image_path=(base / row["image_path"]).resolve(),
                mask_path=(base / row["mask_path"]).resolve(),
                origin_id=row.get("origin_id", "") or row["id"],
            )
        )
    return records


def load_manifest(path, modality=Modality.SYNTHETIC, name=None) -> DatasetManifest:
    """
    Charge un manifeste CSV (id,image_path,mask_path[,origin_id]) ou un répertoire
    suivant la convention images/<id>.png + masks/<id>.png.

    Returns:
        DatasetManifest: enregistrements triés par identifiant

    Raises:
        IngestionError: fichier manquant, image illisible ou tailles incohérentes
    """
    path = Path(path)
    if path.is_dir():
        csv_path = path / "manifest.csv"
        records = _records_from_csv(csv_path) if csv_path.is_file() else _records_from_directory(path)
    elif path.is_file():
        records = _records_from_csv(path)
    else:
        raise IngestionError(f"Manifeste introuvable: {path}")

    for record in records:
        check_record(record)
    known = {r.id for r in records}
    for record in records:
        if record.origin_id not in known:
            raise IngestionError(f"Original {record.origin_id!r} absent du manifeste", record_id=record.id)

    manifest = DatasetManifest(tuple(records), modality=modality, name=name or path.stem, source=path)
    logger.info("Manifeste %s chargé: %s enregistrements", manifest.name, len(manifest))
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> Path:
    """Écrit le manifeste en CSV, chemins relatifs au répertoire du fichier quand c'est possible"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def relative(p: Path):
        p = p.resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return p.as_posix()

    rows = [[r.id, relative(r.image_path), relative(r.mask_path), r.origin_id] for r in manifest.records]
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(path, index=False)
    return path
