"""
Services d'exécution : graines, mode déterministe et choix du périphérique
"""

import hashlib
import logging
import os

import torch
from django.conf import settings

logger = logging.getLogger(__name__)


def harness_setting(key, default=None):
    """Retourne un paramètre du dictionnaire UNET_LAB des settings"""
    return getattr(settings, "UNET_LAB", {}).get(key, default)


def derive_seed(*parts) -> int:
    """
    Dérive une graine 32 bits stable à partir d'éléments hétérogènes.

    Le hachage ne dépend ni de PYTHONHASHSEED ni de l'ordre d'exécution.
    """
    digest = hashlib.sha256("|".join(str(part) for part in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def is_deterministic() -> bool:
    return bool(harness_setting("DETERMINISTIC", False))


def configure_determinism(enabled=None):
    """
    Active (ou non) l'exécution déterministe de torch.

    Args:
        enabled: force la valeur; par défaut lit UNET_LAB["DETERMINISTIC"]

    Returns:
        bool: l'état effectivement appliqué
    """
    if enabled is None:
        enabled = is_deterministic()
    if enabled:
        # Requis par cuBLAS pour les algorithmes déterministes
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(enabled, warn_only=False)
    torch.backends.cudnn.benchmark = not enabled
    torch.backends.cudnn.deterministic = enabled
    return enabled


def get_device() -> torch.device:
    """Retourne le périphérique configuré ("auto" choisit cuda si disponible)"""
    requested = str(harness_setting("DEVICE", "cpu")).lower()
    if requested == "auto":
        requested = "cuda" if torch.cuda.is_available() else "cpu"
    if requested.startswith("cuda") and not torch.cuda.is_available():
        logger.warning("CUDA demandé mais indisponible, bascule sur le CPU")
        requested = "cpu"
    return torch.device(requested)
