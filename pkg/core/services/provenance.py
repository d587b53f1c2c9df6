"""
Manifeste de run : ce qu'il faut pour reproduire un répertoire de sortie
"""

import json
import logging
import platform
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch
from django.utils import timezone

import unet_lab

from .runtime import get_device, is_deterministic

logger = logging.getLogger(__name__)

RUN_MANIFEST_FILE = "run_manifest.json"


def code_version() -> str:
    return f"unet_lab {unet_lab.__version__}"


def environment() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "platform": platform.platform(),
        "device": str(get_device()),
    }


class RunClock:
    """Horodatage et durées des étapes d'une commande"""

    def __init__(self):
        self.started_at = timezone.now()
        self._start = time.perf_counter()
        self.stages: Dict[str, float] = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = round(time.perf_counter() - start, 3)

    def to_dict(self):
        return {
            "started_at": self.started_at.isoformat(),
            "finished_at": timezone.now().isoformat(),
            "total_seconds": round(time.perf_counter() - self._start, 3),
            "stages": dict(self.stages),
        }


def build_run_manifest(command: str, config, clock: RunClock, seeds: Dict, artifacts: Dict, extra: Optional[Dict] = None) -> Dict:
    """
    Args:
        command: sous-commande exécutée
        config: RunConfig (ou None pour les commandes sans configuration)
        seeds: graines effectivement utilisées
        artifacts: chemins des fichiers produits, relatifs au répertoire de sortie
    """
    return {
        "command": command,
        "run_id": config.run_id if config else None,
        "config_hash": config.config_hash if config else None,
        "config_path": str(config.source) if config and config.source else None,
        # configuration embarquée : relancer avec ce contenu reproduit le répertoire
        "config": {**config.raw, "seed": config.seed} if config else None,
        "code_version": code_version(),
        "environment": environment(),
        "deterministic": is_deterministic(),
        "seeds": seeds,
        "timings": clock.to_dict(),
        "artifacts": artifacts,
        **(extra or {}),
    }


def write_run_manifest(out_dir, manifest: Dict) -> Path:
    path = Path(out_dir) / RUN_MANIFEST_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")
    logger.info("Manifeste de run écrit: %s", path)
    return path
