"""
Maximisation d'activation : image d'entrée qui maximise l'activation moyenne d'un filtre

Montée de gradient projetée dans [0, 1], gradient normalisé par sa moyenne quadratique,
régularisation par variation totale.
"""

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from architecture.services.unet import ModelGraph
from core.exceptions import ArgumentError, ConfigurationError
from core.services.runtime import get_device
from core.services.validation import is_integer, require_number
from training.services.checkpoints import Checkpoint, load_into_graph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActMaxConfig:
    """layer_index : ordinal de la convolution 3x3 (1-based); unit_index : filtre (0-based)"""

    layer_index: int
    unit_index: int
    steps: int = 512
    step_size: float = 0.1
    seed: int = 0
    regularization_weight: float = 1e-3

    def validate(self, graph: Optional[ModelGraph] = None):
        if not is_integer(self.steps) or self.steps < 0:
            raise ConfigurationError(f"doit être un entier >= 0 (reçu {self.steps!r})", field="visualization.steps")
        require_number(self.step_size, "visualization.step_size", minimum=0.0, exclusive_minimum=True)
        require_number(self.regularization_weight, "visualization.regularization_weight", minimum=0.0)
        if graph is not None:
            target_layer(graph, self.layer_index, self.unit_index)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigurationError(f"champ inconnu {unknown[0]!r}", field=f"visualization.{unknown[0]}")
        try:
            return cls(**data).validate()
        except TypeError as e:
            raise ConfigurationError(str(e), field="visualization") from e


def target_layer(graph: ModelGraph, layer_index: int, unit_index: int):
    """
    Raises:
        ArgumentError: convolution ou filtre inexistant
    """
    convs = graph.conv_layers
    if not isinstance(layer_index, int) or not 1 <= layer_index <= len(convs):
        raise ArgumentError(f"layer_index={layer_index!r} hors de [1, {len(convs)}]")
    layer = graph.conv_by_ordinal(layer_index)
    if not isinstance(unit_index, int) or not 0 <= unit_index < layer.out_channels:
        raise ArgumentError(f"unit_index={unit_index!r} hors de [0, {layer.out_channels - 1}] pour {layer.name}")
    return layer


def total_variation(x: torch.Tensor) -> torch.Tensor:
    """Variation totale anisotrope moyenne d'un lot (N, C, H, W)"""
    dy = (x[..., 1:, :] - x[..., :-1, :]).abs().mean() if x.shape[-2] > 1 else x.new_zeros(())
    dx = (x[..., :, 1:] - x[..., :, :-1]).abs().mean() if x.shape[-1] > 1 else x.new_zeros(())
    return dy + dx


def _unit_mean(graph: ModelGraph, x: torch.Tensor, position: int, unit: int) -> torch.Tensor:
    return graph.module(x, until=position)[:, unit].mean(dim=(-2, -1))


def unit_activation(graph: ModelGraph, image, layer_index: int, unit_index: int) -> float:
    """Activation moyenne (post-ReLU) d'un filtre pour une image (H, W) ou (C, H, W)"""
    layer = target_layer(graph, layer_index, unit_index)
    x = torch.as_tensor(np.asarray(image, dtype=np.float32))
    if x.ndim == 2:
        x = x[None]
    device = get_device()
    graph.module.to(device).eval()
    with torch.no_grad():
        return float(_unit_mean(graph, x[None].to(device), layer.position, unit_index)[0])


def seeded_input(graph: ModelGraph, seed: int) -> torch.Tensor:
    spec = graph.spec
    generator = torch.Generator().manual_seed(int(seed))
    return torch.rand((1, spec.input_channels, spec.input_height, spec.input_width), generator=generator)


def _ascend(graph: ModelGraph, cfg: ActMaxConfig) -> Tuple[torch.Tensor, List[float]]:
    layer = target_layer(graph, cfg.layer_index, cfg.unit_index)
    device = get_device()
    module = graph.module.to(device)
    module.eval()
    x = seeded_input(graph, cfg.seed).to(device)
    history = []
    for _ in range(cfg.steps):
        x.requires_grad_(True)
        activation = _unit_mean(graph, x, layer.position, cfg.unit_index).sum()
        objective = activation - cfg.regularization_weight * total_variation(x)
        (grad,) = torch.autograd.grad(objective, x)
        history.append(float(activation.detach()))
        grad = grad / (grad.pow(2).mean().sqrt() + 1e-12)
        x = (x.detach() + cfg.step_size * grad).clamp_(0.0, 1.0)
    return x.detach(), history


def activation_maximization(graph: ModelGraph, ckpt: Optional[Checkpoint], cfg: ActMaxConfig) -> np.ndarray:
    """
    Image (H, W) dans [0, 1] maximisant l'activation moyenne du filtre choisi.

    Args:
        graph: graphe; ses poids sont remplacés par ceux de `ckpt` si fourni
        ckpt: checkpoint entraîné compatible
        cfg: couche, filtre, nombre de pas, pas, graine, poids de régularisation

    Raises:
        ArgumentError: couche ou filtre inexistant
    """
    cfg.validate()
    if ckpt is not None:
        load_into_graph(graph, ckpt)
    x, history = _ascend(graph, cfg)
    if history:
        logger.info(
            "conv%02d/%s: activation %.4f -> %.4f en %s pas", cfg.layer_index, cfg.unit_index, history[0], history[-1], cfg.steps
        )
    image = x[0].cpu().numpy()
    return image[0] if image.shape[0] == 1 else image


def activation_trace(graph: ModelGraph, cfg: ActMaxConfig) -> List[float]:
    """Activation du filtre avant chaque pas de la montée"""
    return _ascend(graph, cfg)[1]
