"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Boucles de pré-entraînement et de fine-tuning, inférence et binarisation
"""

import logging
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from architecture.services.blocks import enumerate_blocks
from architecture.services.freeze import FreezePlan, apply_freeze_plan, full_plan, read_freeze_plan
from architecture.services.unet import ModelGraph, initialize_weights
from core.exceptions import ArgumentError, CheckpointIncompatibleError, ConfigurationError, StructuralError
from core.services.runtime import configure_determinism, derive_seed, get_device, is_deterministic
from core.services.validation import is_integer, require_choice, require_number
from ingestion.services.manifest import DatasetManifest
from ingestion.services.preprocessing import load_arrays

from .checkpoints import Checkpoint, load_into_graph, snapshot

logger = logging.getLogger(__name__)

PROBABILITY_EPS = 1e-7
BINARIZE_THRESHOLD = 0.5


class LossKind(str, Enum):
    BINARY_CROSS_ENTROPY = "binary_cross_entropy"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparamètres d'une phase d'entraînement (Adam, entropie croisée binaire)"""

    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-4
    validation_fraction: float = 0.0
    loss: str = LossKind.BINARY_CROSS_ENTROPY.value
    seed: int = 0

    def validate(self, prefix="train"):
        for name in ("epochs", "batch_size"):
            value = getattr(self, name)
            if not is_integer(value) or value < 1:
                raise ConfigurationError(f"doit être un entier >= 1 (reçu {value!r})", field=f"{prefix}.{name}")
        require_number(self.learning_rate, f"{prefix}.learning_rate", minimum=0.0, exclusive_minimum=True)
        require_number(self.validation_fraction, f"{prefix}.validation_fraction", minimum=0.0, maximum=1.0, exclusive_maximum=True)
        require_choice(self.loss, {kind.value for kind in LossKind}, f"{prefix}.loss")
        if not is_integer(self.seed):
            raise ConfigurationError(f"doit être un entier (reçu {self.seed!r})", field=f"{prefix}.seed")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, prefix="train", defaults=None):
        if not isinstance(data, dict):
            raise ConfigurationError("doit être un objet JSON", field=prefix)
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigurationError(f"champ inconnu {unknown[0]!r}", field=f"{prefix}.{unknown[0]}")
        return replace(defaults or cls(), **data).validate(prefix)


def bce_loss(probabilities: torch.Tensor, targets: torch.Tensor, eps: float = PROBABILITY_EPS) -> torch.Tensor:
    """Entropie croisée binaire moyenne par pixel, probabilités bornées à [eps, 1-eps]"""
    p = probabilities.clamp(eps, 1.0 - eps)
    return -(targets * torch.log(p) + (1.0 - targets) * torch.log(1.0 - p)).mean()


def _as_arrays(graph: ModelGraph, data) -> Tuple[np.ndarray, np.ndarray]:
    """Accepte un manifeste ou un couple (images, masques) de forme (N, C, H, W)"""
    spec = graph.spec
    if isinstance(data, DatasetManifest):
        if len(data) == 0:
            raise ArgumentError(f"Jeu de données {data.name!r} vide")
        images, masks = load_arrays(data, (spec.input_height, spec.input_width))
    else:
        images, masks = (np.asarray(a, dtype=np.float32) for a in data)
    if len(images) == 0:
        raise ArgumentError("Jeu de données vide")
    expected = (spec.input_channels, spec.input_height, spec.input_width)
    if images.ndim != 4 or tuple(images.shape[1:]) != expected:
        raise StructuralError(f"Images de forme {tuple(images.shape)}, attendu (N, {', '.join(map(str, expected))})")
    if tuple(masks.shape) != (len(images), 1, spec.input_height, spec.input_width):
        raise StructuralError(f"Masques de forme {tuple(masks.shape)} incompatibles avec les images")
    return images, masks


def _holdout_split(count: int, cfg: TrainConfig):
    """Mélange graine cfg.seed; la dernière fraction validation_fraction est mise de côté"""
    order = torch.randperm(count, generator=torch.Generator().manual_seed(derive_seed(cfg.seed, "holdout")))
    held_out = min(int(count * cfg.validation_fraction), count - 1)
    return order[: count - held_out], order[count - held_out :]


def _export_optimizer_state(optimizer, trainable) -> Dict:
    state = {"steps": {}, "exp_avg": {}, "exp_avg_sq": {}}
    for name, parameter in trainable:
        entry = optimizer.state.get(parameter)
        if not entry:
            continue
        state["steps"][name] = int(float(entry["step"]))
        state["exp_avg"][name] = entry["exp_avg"].detach().cpu().numpy().astype(np.float32)
        state["exp_avg_sq"][name] = entry["exp_avg_sq"].detach().cpu().numpy().astype(np.float32)
    return state


def _restore_optimizer_state(optimizer, trainable, state):
    names = {name for name, _ in trainable}
    if set(state["steps"]) != names:
        raise CheckpointIncompatibleError("L'état de l'optimiseur ne correspond pas aux couches entraînables du plan")
    for name, parameter in trainable:
        optimizer.state[parameter] = {
            "step": torch.tensor(float(state["steps"][name]), dtype=torch.float32),
            "exp_avg": torch.from_numpy(np.array(state["exp_avg"][name])).to(parameter.device),
            "exp_avg_sq": torch.from_numpy(np.array(state["exp_avg_sq"][name])).to(parameter.device),
        }


def _mean_loss(module, images, masks, indices, batch_size, device):
    if len(indices) == 0:
        return None
    module.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            batch = indices[start : start + batch_size]
            x = torch.from_numpy(images[batch]).to(device)
            y = torch.from_numpy(masks[batch]).to(device)
            total += float(bce_loss(module(x), y)) * len(batch)
    return total / len(indices)


def _train(graph: ModelGraph, images, masks, cfg: TrainConfig, start_epoch=0, optimizer_state=None):
    """
    Boucle commune. Chaque époque a ses propres flux aléatoires (mélange et dropout) dérivés
    de (cfg.seed, époque) : reprendre à l'époque e reproduit un entraînement ininterrompu.

    Returns:
        (journal des époques, état de l'optimiseur)
    """
    configure_determinism()
    device = get_device()
    module = graph.module.to(device)
    trainable = [(name, tensor) for name, tensor in graph.named_tensors().items() if tensor.requires_grad]
    optimizer = torch.optim.Adam([tensor for _, tensor in trainable], lr=cfg.learning_rate)
    if optimizer_state:
        _restore_optimizer_state(optimizer, trainable, optimizer_state)

    train_idx, val_idx = _holdout_split(len(images), cfg)
    train_idx, val_idx = train_idx.numpy(), np.sort(val_idx.numpy())
    log = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        shuffle = torch.Generator().manual_seed(derive_seed(cfg.seed, "shuffle", epoch))
        order = train_idx[torch.randperm(len(train_idx), generator=shuffle).numpy()]
        module.dropout_generator = torch.Generator(device=device).manual_seed(derive_seed(cfg.seed, "dropout", epoch))
        module.train()
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = torch.from_numpy(images[batch]).to(device)
            y = torch.from_numpy(masks[batch]).to(device)
            optimizer.zero_grad(set_to_none=True)
            loss = bce_loss(module(x), y)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(batch)
        entry = {
            "epoch": epoch + 1,
            "train_loss": total / len(order),
            "val_loss": _mean_loss(module, images, masks, val_idx, cfg.batch_size, device),
        }
        log.append(entry)
        logger.info("Époque %s: perte %.5f, validation %s", entry["epoch"], entry["train_loss"], entry["val_loss"])
    module.dropout_generator = None
    module.eval()
    return log, _export_optimizer_state(optimizer, trainable)


def _provenance(kind, graph, cfg, plan, data, parent=None):
    return {
        "kind": kind,
        "config": cfg.to_dict(),
        "freeze_plan": plan.to_dict(),
        "trainable_read_back": read_freeze_plan(graph).to_dict()["trainable_blocks"],
        "parent": parent,
        "architecture": graph.spec.to_dict(),
        "data": (
            {"name": data.name, "count": len(data)} if isinstance(data, DatasetManifest) else {"name": None, "count": len(data[0])}
        ),
        "deterministic": is_deterministic(),
        "device": str(get_device()),
    }


def pretrain(graph: ModelGraph, data, cfg: TrainConfig) -> Checkpoint:
    """
    Pré-entraînement du réseau entier depuis une initialisation He uniforme graine cfg.seed.

    Args:
        graph: graphe construit par build_unet
        data: DatasetManifest ou couple (images, masques) (N, 1, H, W)
        cfg: configuration (40 époques, 10 % de validation pour le protocole de référence)

    Raises:
        ArgumentError: jeu de données vide
        StructuralError: formes incompatibles avec le graphe
    """
    cfg.validate("pretrain")
    images, masks = _as_arrays(graph, data)
    blocks = enumerate_blocks(graph)
    plan = full_plan(blocks, label="pretraining")
    apply_freeze_plan(graph, plan, blocks)
    initialize_weights(graph, cfg.seed)
    logger.info("Pré-entraînement: %s images, %s époques", len(images), cfg.epochs)
    log, optimizer_state = _train(graph, images, masks, cfg)
    return snapshot(graph, log, _provenance("pretrain", graph, cfg, plan, data), optimizer_state)


def finetune(graph: ModelGraph, init: Checkpoint, plan: FreezePlan, data, cfg: TrainConfig) -> Checkpoint:
    """
    Fine-tuning depuis `init` : seules les couches des blocs entraînables du plan bougent,
    les autres tenseurs restent identiques bit à bit à ceux de `init`.

    Raises:
        CheckpointIncompatibleError: empreinte de `init` différente de celle du graphe
    """
    cfg.validate("finetune")
    load_into_graph(graph, init)
    images, masks = _as_arrays(graph, data)
    apply_freeze_plan(graph, plan)
    logger.info("Fine-tuning %s (blocs %s): %s images, %s époques", plan.label, plan.key, len(images), cfg.epochs)
    log, optimizer_state = _train(graph, images, masks, cfg)
    provenance = _provenance("finetune", graph, cfg, plan, data, parent=init.checkpoint_id)
    return snapshot(graph, log, provenance, optimizer_state)


def resume(graph: ModelGraph, ckpt: Checkpoint, plan: FreezePlan, data, cfg: TrainConfig) -> Checkpoint:
    """
    Poursuit un entraînement de cfg.epochs époques supplémentaires en conservant l'état
    d'Adam et la numérotation des époques.

    Raises:
        CheckpointIncompatibleError: empreinte différente, ou état d'optimiseur absent ou
            relatif à un autre ensemble de couches entraînables
    """
    cfg.validate("finetune")
    if not ckpt.optimizer_state:
        raise CheckpointIncompatibleError("Checkpoint sans état d'optimiseur: reprise impossible")
    load_into_graph(graph, ckpt)
    images, masks = _as_arrays(graph, data)
    apply_freeze_plan(graph, plan)
    start = len(ckpt.training_log)
    logger.info("Reprise %s à l'époque %s pour %s époques", plan.label, start, cfg.epochs)
    log, optimizer_state = _train(graph, images, masks, cfg, start_epoch=start, optimizer_state=ckpt.optimizer_state)
    provenance = _provenance("resume", graph, cfg, plan, data, parent=ckpt.checkpoint_id)
    return snapshot(graph, list(ckpt.training_log) + log, provenance, optimizer_state)


def predict_batch(graph: ModelGraph, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Probabilités (N, 1, H, W) avec les poids courants du graphe, bornées à (0, 1)"""
    spec = graph.spec
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or tuple(images.shape[1:]) != (spec.input_channels, spec.input_height, spec.input_width):
        raise ArgumentError(f"Entrée de forme {tuple(images.shape)} incompatible avec le réseau")
    device = get_device()
    module = graph.module.to(device)
    module.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            out = module(torch.from_numpy(images[start : start + batch_size]).to(device))
            outputs.append(out.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS).cpu().numpy())
    return np.concatenate(outputs).astype(np.float32)


def predict(graph: ModelGraph, ckpt: Optional[Checkpoint], image: np.ndarray) -> np.ndarray:
    """
    Carte de probabilités d'une image.

    Args:
        graph: graphe dont les poids sont remplacés par ceux de `ckpt` (si fourni)
        ckpt: checkpoint compatible, ou None pour garder les poids courants
        image: tableau (H, W) ou (C, H, W)

    Returns:
        np.ndarray: (H, W, 1), valeurs dans (0, 1)

    Raises:
        ArgumentError: forme incompatible avec l'entrée du réseau
    """
    if ckpt is not None:
        load_into_graph(graph, ckpt)
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[None]
    probabilities = predict_batch(graph, image[None])
    return np.transpose(probabilities[0], (1, 2, 0))


def binarize(probmap, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    """1 strictement au-dessus du seuil, 0 sinon"""
    return (np.asarray(probmap) > threshold).astype(np.uint8)


def probe_gradients(graph: ModelGraph, images: np.ndarray, masks: np.ndarray) -> Dict[str, Optional[float]]:
    """
    Une passe avant/arrière sans mise à jour.

    Returns:
        dict: couche paramétrée -> norme du gradient (poids et biais), None si la couche est gelée
    """
    images, masks = _as_arrays(graph, (images, masks))
    device = get_device()
    module = graph.module.to(device)
    module.eval()
    module.zero_grad(set_to_none=True)
    loss = bce_loss(module(torch.from_numpy(images).to(device)), torch.from_numpy(masks).to(device))
    if loss.requires_grad:
        loss.backward()
    norms = {}
    for layer in graph.parameterized_layers:
        grads = [p.grad for p in module.convs[layer.name].parameters() if p.grad is not None]
        norms[layer.name] = float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads))) if grads else None
    module.zero_grad(set_to_none=True)
    return norms
