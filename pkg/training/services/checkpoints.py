"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Checkpoints : archive zip contenant un en-tête JSON et des tenseurs nommés encodés en
float32 little-endian
"""

import hashlib
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from architecture.services.unet import ModelGraph
from core.exceptions import CheckpointIncompatibleError, CheckpointIntegrityError
from core.services.runtime import harness_setting

logger = logging.getLogger(__name__)

TENSOR_DTYPE = np.dtype("<f4")
HEADER_NAME = "header.json"


@dataclass
class Checkpoint:
    """Poids nommés d'un réseau, journal d'entraînement et provenance"""

    architecture_fingerprint: str
    tensors: Dict[str, np.ndarray]
    training_log: List[Dict[str, Any]] = field(default_factory=list)
    provenance: Dict[str, Any] = field(default_factory=dict)
    # {"steps": {nom: pas}, "exp_avg": {nom: tableau}, "exp_avg_sq": {nom: tableau}}
    optimizer_state: Optional[Dict[str, Any]] = None

    @property
    def checkpoint_id(self) -> str:
        """Identifiant de contenu : sha256 sur les noms et octets des tenseurs"""
        digest = hashlib.sha256()
        for name in sorted(self.tensors):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.tensors[name], dtype=TENSOR_DTYPE).tobytes())
        return digest.hexdigest()[:16]

    @property
    def epochs(self):
        return len(self.training_log)


def snapshot(graph: ModelGraph, training_log=None, provenance=None, optimizer_state=None) -> Checkpoint:
    """Copie les poids courants du graphe dans un checkpoint"""
    tensors = {name: t.detach().cpu().numpy().astype(TENSOR_DTYPE, copy=True) for name, t in graph.named_tensors().items()}
    return Checkpoint(
        architecture_fingerprint=graph.fingerprint,
        tensors=tensors,
        training_log=list(training_log or []),
        provenance=dict(provenance or {}),
        optimizer_state=optimizer_state,
    )


def check_compatible(graph: ModelGraph, ckpt: Checkpoint):
    if ckpt.architecture_fingerprint != graph.fingerprint:
        raise CheckpointIncompatibleError(
            f"Empreinte {ckpt.architecture_fingerprint[:12]} incompatible avec l'architecture {graph.fingerprint[:12]}"
        )


def load_into_graph(graph: ModelGraph, ckpt: Checkpoint) -> ModelGraph:
    """
    Copie les tenseurs du checkpoint dans le graphe.

    Raises:
        CheckpointIncompatibleError: empreintes différentes
        CheckpointIntegrityError: tenseur manquant ou de forme inattendue
    """
    check_compatible(graph, ckpt)
    with torch.no_grad():
        for name, target in graph.named_tensors().items():
            if name not in ckpt.tensors:
                raise CheckpointIntegrityError(f"Tenseur {name} absent du checkpoint")
            source = ckpt.tensors[name]
            if tuple(source.shape) != tuple(target.shape):
                raise CheckpointIntegrityError(f"Forme {tuple(source.shape)} inattendue pour {name}")
            target.copy_(torch.from_numpy(np.array(source, dtype=np.float32)).to(target.device))
    return graph


def _tensor_entry(prefix, name, array):
    array = np.ascontiguousarray(array, dtype=TENSOR_DTYPE)
    payload = array.tobytes()
    entry = {
        "name": name,
        "path": f"{prefix}/{name}.bin",
        "shape": list(array.shape),
        "dtype": TENSOR_DTYPE.str,
        "nbytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    return entry, payload


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Écrit le checkpoint dans une archive unique"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, payloads = [], []
    for name in sorted(ckpt.tensors):
        entry, payload = _tensor_entry("tensors", name, ckpt.tensors[name])
        entries.append(entry)
        payloads.append(payload)

    optimizer_header = None
    if ckpt.optimizer_state:
        optimizer_header = {"steps": dict(ckpt.optimizer_state["steps"]), "tensors": []}
        for moment in ("exp_avg", "exp_avg_sq"):
            for name in sorted(ckpt.optimizer_state[moment]):
                entry, payload = _tensor_entry(f"optimizer/{moment}", name, ckpt.optimizer_state[moment][name])
                entry["moment"] = moment
                optimizer_header["tensors"].append(entry)
                payloads.append(payload)

    header = {
        "format_version": harness_setting("CHECKPOINT_FORMAT_VERSION", 1),
        "architecture_fingerprint": ckpt.architecture_fingerprint,
        "checkpoint_id": ckpt.checkpoint_id,
        "training_log": ckpt.training_log,
        "provenance": ckpt.provenance,
        "tensors": entries,
        "optimizer": optimizer_header,
    }
    all_entries = entries + (optimizer_header["tensors"] if optimizer_header else [])
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        archive.writestr(HEADER_NAME, json.dumps(header, indent=2, sort_keys=True))
        for entry, payload in zip(all_entries, payloads):
            archive.writestr(entry["path"], payload)
    logger.info("Checkpoint %s écrit dans %s", header["checkpoint_id"], path)
    return path


def _read_tensor(archive, entry):
    payload = archive.read(entry["path"])
    if len(payload) != entry["nbytes"] or hashlib.sha256(payload).hexdigest() != entry["sha256"]:
        raise CheckpointIntegrityError(f"Tenseur {entry['name']} corrompu")
    expected = int(np.prod(entry["shape"], dtype=np.int64)) * TENSOR_DTYPE.itemsize
    if expected != len(payload):
        raise CheckpointIntegrityError(f"Longueur incohérente pour {entry['name']}")
    return np.frombuffer(payload, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()


def load_checkpoint(path, graph: Optional[ModelGraph] = None) -> Checkpoint:
    """
    Relit un checkpoint écrit par save_checkpoint.

    Args:
        path: chemin de l'archive
        graph: si fourni, vérifie la compatibilité de l'empreinte

    Raises:
        CheckpointIntegrityError: archive corrompue, tronquée ou de version inconnue
        CheckpointIncompatibleError: empreinte différente de celle du graphe
    """
    path = Path(path)
    try:
        with zipfile.ZipFile(path, "r") as archive:
            header = json.loads(archive.read(HEADER_NAME).decode("utf-8"))
            if header.get("format_version") != harness_setting("CHECKPOINT_FORMAT_VERSION", 1):
                raise CheckpointIntegrityError(f"Version de format inconnue: {header.get('format_version')!r}")
            tensors = {entry["name"]: _read_tensor(archive, entry) for entry in header["tensors"]}
            optimizer_state = None
            if header.get("optimizer"):
                optimizer_state = {"steps": header["optimizer"]["steps"], "exp_avg": {}, "exp_avg_sq": {}}
                for entry in header["optimizer"]["tensors"]:
                    optimizer_state[entry["moment"]][entry["name"]] = _read_tensor(archive, entry)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, UnicodeDecodeError, EOFError) as e:
        raise CheckpointIntegrityError(f"Checkpoint illisible {path}: {e}") from e
    except FileNotFoundError as e:
        raise CheckpointIntegrityError(f"Checkpoint introuvable: {path}") from e

    ckpt = Checkpoint(
        architecture_fingerprint=header["architecture_fingerprint"],
        tensors=tensors,
        training_log=header["training_log"],
        provenance=header["provenance"],
        optimizer_state=optimizer_state,
    )
    if ckpt.checkpoint_id != header.get("checkpoint_id"):
        raise CheckpointIntegrityError("Identifiant de contenu incohérent")
    if graph is not None:
        check_compatible(graph, ckpt)
    return ckpt
