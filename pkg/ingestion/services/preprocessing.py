"""
Prétraitement des images et des masques : niveaux de gris, redimensionnement, normalisation [0,1]

Les ImageTensor sont des tableaux numpy float32 de forme (hauteur, largeur), un seul canal.
"""

import io
import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from core.exceptions import ImageFormatError, IngestionError
from core.services.runtime import harness_setting

from .manifest import DatasetManifest, SampleRecord

logger = logging.getLogger(__name__)

# Pondérations de luminance (ITU-R BT.601)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
MASK_THRESHOLD = 0.5


def default_size() -> Tuple[int, int]:
    size = harness_setting("DEFAULT_IMAGE_SIZE", 256)
    return (size, size) if isinstance(size, int) else tuple(size)


def decode_image(raw) -> np.ndarray:
    """
    Décode une image (chemin, octets, image PIL ou tableau numpy) en tableau numpy.

    Raises:
        ImageFormatError: si l'entrée n'est pas décodable
    """
    if isinstance(raw, np.ndarray):
        return raw
    try:
        if isinstance(raw, (str, Path)):
            with Image.open(raw) as img:
                return _pil_to_array(img)
        if isinstance(raw, (bytes, bytearray)):
            with Image.open(io.BytesIO(raw)) as img:
                return _pil_to_array(img)
        if isinstance(raw, Image.Image):
            return _pil_to_array(raw)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise ImageFormatError(f"Image non décodable: {e}") from e
    raise ImageFormatError(f"Type d'entrée non supporté: {type(raw).__name__}")


def _pil_to_array(img: Image.Image) -> np.ndarray:
    if img.mode in ("P", "RGBA", "CMYK", "YCbCr", "LAB", "HSV"):
        img = img.convert("RGB")
    elif img.mode in ("1", "LA"):
        img = img.convert("L")
    return np.array(img)


def _to_unit_range(array: np.ndarray) -> np.ndarray:
    """Normalise selon le type : division par la valeur maximale du type entier"""
    if array.dtype == bool:
        return array.astype(np.float64)
    if array.dtype in (np.uint8, np.uint16):
        return array.astype(np.float64) / np.iinfo(array.dtype).max
    if np.issubdtype(array.dtype, np.integer):
        scale = 65535.0 if array.max(initial=0) > 255 else 255.0
        return array.astype(np.float64) / scale
    array = array.astype(np.float64)
    if array.max(initial=0.0) > 1.0:
        array = array / 255.0
    return np.clip(array, 0.0, 1.0)


def _mask_unit_range(array: np.ndarray) -> np.ndarray:
    """Un masque entier de valeurs 0/1 est un masque d'étiquettes, pris tel quel"""
    if np.issubdtype(array.dtype, np.integer) and array.max(initial=0) <= 1:
        return array.astype(np.float64)
    return _to_unit_range(array)


def _single_channel(array: np.ndarray) -> np.ndarray:
    if array.ndim == 2:
        return array
    if array.ndim == 3 and array.shape[2] == 1:
        return array[:, :, 0]
    if array.ndim == 3 and array.shape[2] in (3, 4):
        return _to_unit_range(array[:, :, :3]) @ LUMA_WEIGHTS
    raise ImageFormatError(f"Forme d'image non supportée: {array.shape}")


def _resize(array: np.ndarray, size: Tuple[int, int], resample) -> np.ndarray:
    height, width = size
    if array.shape == (height, width):
        return array
    img = Image.fromarray(array.astype(np.float32))
    return np.asarray(img.resize((width, height), resample=resample), dtype=np.float64)


def preprocess_image(raw, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """
    Convertit une image brute 1 ou 3 canaux en ImageTensor (H, W) float32 dans [0,1].

    Les images couleur sont réduites par luminance avant le redimensionnement bilinéaire.
    """
    array = decode_image(raw)
    if array.ndim == 3 and array.shape[2] in (3, 4):
        gray = _single_channel(array)
    else:
        gray = _to_unit_range(_single_channel(array))
    resized = _resize(gray, size or default_size(), Image.Resampling.BILINEAR)
    return np.clip(resized, 0.0, 1.0).astype(np.float32)


def binarize_mask(array: np.ndarray, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """Seuil strict : valeur > threshold -> 1, sinon 0"""
    return (np.asarray(array) > threshold).astype(np.float32)


def preprocess_mask(raw, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Convertit un masque brut en masque binaire (H, W) float32, rééchantillonnage au plus proche voisin"""
    array = decode_image(raw)
    if array.ndim == 3 and array.shape[2] in (3, 4):
        gray = _single_channel(array)
    else:
        gray = _mask_unit_range(_single_channel(array))
    resized = _resize(gray, size or default_size(), Image.Resampling.NEAREST)
    return binarize_mask(resized)


def quantize(array: np.ndarray) -> np.ndarray:
    """[0,1] -> uint8, arrondi au plus proche"""
    return np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(array: np.ndarray, path) -> Path:
    """Enregistre un ImageTensor (ou un masque binaire) en PNG 8 bits niveaux de gris"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(array)).save(path, format="PNG")
    return path


def load_sample(record: SampleRecord, size: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    return preprocess_image(record.image_path, size), preprocess_mask(record.mask_path, size)


def load_arrays(manifest: DatasetManifest, size: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Charge tout le manifeste en mémoire.

    Returns:
        (images, masks): tableaux float32 de forme (N, 1, H, W)
    """
    size = size or default_size()
    images = np.zeros((len(manifest), 1, *size), dtype=np.float32)
    masks = np.zeros((len(manifest), 1, *size), dtype=np.float32)
    for i, record in enumerate(manifest.records):
        images[i, 0], masks[i, 0] = load_sample(record, size)
    return images, masks


def load_prediction_masks(directory, manifest: DatasetManifest, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """
    Charge les masques prédits "<id>.png" d'un répertoire, dans l'ordre du manifeste.

    Returns:
        tableau uint8 (N, H, W) de 0/1

    Raises:
        IngestionError: masque absent pour un enregistrement
    """
    directory = Path(directory)
    size = size or default_size()
    masks = np.zeros((len(manifest), *size), dtype=np.uint8)
    for i, record in enumerate(manifest.records):
        path = directory / f"{record.id}.png"
        if not path.is_file():
            raise IngestionError(f"Masque prédit absent: {path}", record_id=record.id)
        masks[i] = preprocess_mask(path, size).astype(np.uint8)
    return masks
