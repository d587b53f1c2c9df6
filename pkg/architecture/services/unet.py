"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Construction du graphe U-Net (convolutions "same", upsampling par plus proche voisin
suivi d'une convolution 2x2, pas de normalisation, un dropout après le chemin contractant)
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from core.exceptions import ConfigurationError
from core.services.validation import is_integer, require_choice, require_number

logger = logging.getLogger(__name__)

UPSAMPLE_MODES = ("nearest-resize-then-conv",)
FINAL_ACTIVATIONS = ("sigmoid",)


class LayerKind(str, Enum):
    CONV3X3 = "conv3x3_relu"
    MAXPOOL = "maxpool2x2"
    UPSAMPLE = "upsample2x"
    CONV2X2 = "conv2x2_relu"
    CONCAT = "concat_skip"
    DROPOUT = "dropout"
    HEAD = "conv1x1_sigmoid"

    @property
    def has_parameters(self):
        return self in (LayerKind.CONV3X3, LayerKind.CONV2X2, LayerKind.HEAD)

    @property
    def kernel_size(self):
        return {LayerKind.CONV3X3: 3, LayerKind.CONV2X2: 2, LayerKind.HEAD: 1}.get(self, 0)


@dataclass(frozen=True)
class ArchitectureSpec:
    """Description déclarative d'une variante du U-Net"""

    input_height: int = 256
    input_width: int = 256
    input_channels: int = 1
    depth: int = 5
    base_filters: int = 64
    dropout_rate: float = 0.5
    upsample_mode: str = "nearest-resize-then-conv"
    final_activation: str = "sigmoid"

    def validate(self):
        """Vérifie les invariants; lève ConfigurationError sur le premier champ invalide"""
        for name in ("input_height", "input_width", "input_channels", "depth", "base_filters"):
            value = getattr(self, name)
            if not is_integer(value) or value < 1:
                raise ConfigurationError(f"doit être un entier >= 1 (reçu {value!r})", field=name)
        require_number(self.dropout_rate, "dropout_rate", minimum=0.0, maximum=1.0)
        factor = 2 ** (self.depth - 1)
        for name in ("input_height", "input_width"):
            if getattr(self, name) % factor:
                raise ConfigurationError(
                    f"{getattr(self, name)} n'est pas divisible par 2^(depth-1) = {factor}",
                    field=name,
                )
        require_choice(self.upsample_mode, UPSAMPLE_MODES, "upsample_mode")
        require_choice(self.final_activation, FINAL_ACTIVATIONS, "final_activation")
        return self

    def filters_at(self, level: int) -> int:
        """Nombre de filtres au niveau contractant `level` (1-based)"""
        return self.base_filters * 2 ** (level - 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("doit être un objet JSON", field="architecture")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"champ inconnu {unknown[0]!r}", field=f"architecture.{unknown[0]}")
        return cls(**data)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"JSON invalide: {e}", field="architecture") from e


@dataclass(frozen=True)
class LayerDescriptor:
    """Une couche du graphe, avec ses métadonnées de forme"""

    position: int
    name: str
    kind: LayerKind
    in_channels: int
    out_channels: int
    height: int
    width: int
    level: int
    conv_ordinal: Optional[int] = None

    @property
    def kernel_size(self):
        return self.kind.kernel_size

    @property
    def parameter_count(self):
        """k_h * k_w * c_in * c_out + c_out (biais)"""
        if not self.kind.has_parameters:
            return 0
        k = self.kernel_size
        return k * k * self.in_channels * self.out_channels + self.out_channels

    def signature(self):
        return [self.kind.value, self.name, self.in_channels, self.out_channels, self.kernel_size, self.height, self.width]


class UNet(nn.Module):
    """
    Module torch interprétant la liste de couches du graphe.

    Les convolutions paramétrées sont rangées dans `convs` sous le nom de leur descripteur.
    """

    def __init__(self, layers: Tuple[LayerDescriptor, ...], skip_links: Tuple[Tuple[int, int], ...], dropout_rate: float):
        super().__init__()
        self.layer_specs = layers
        self.skip_sources = {src for src, _ in skip_links}
        self.skip_for = {dst: src for src, dst in skip_links}
        self.convs = nn.ModuleDict()
        for layer in layers:
            if layer.kind.has_parameters:
                self.convs[layer.name] = nn.Conv2d(
                    layer.in_channels, layer.out_channels, layer.kernel_size, padding="same", bias=True
                )
        self.dropout_rate = float(dropout_rate)
        # Générateur du masque de dropout; fixé par l'entraînement à chaque époque
        self.dropout_generator: Optional[torch.Generator] = None

    def _dropout(self, x):
        if not self.training or self.dropout_rate == 0.0:
            return x
        if self.dropout_rate >= 1.0:
            return torch.zeros_like(x)
        noise = torch.rand(x.shape, generator=self.dropout_generator, device=x.device, dtype=x.dtype)
        return x * (noise >= self.dropout_rate) / (1.0 - self.dropout_rate)

    def forward(self, x, until: Optional[int] = None):
        """Propagation; `until` arrête après la couche de cette position (activation post-ReLU)"""
        saved = {}
        for layer in self.layer_specs:
            kind = layer.kind
            if kind is LayerKind.CONV3X3 or kind is LayerKind.CONV2X2:
                x = F.relu(self.convs[layer.name](x))
            elif kind is LayerKind.MAXPOOL:
                x = F.max_pool2d(x, kernel_size=2, stride=2)
            elif kind is LayerKind.UPSAMPLE:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            elif kind is LayerKind.CONCAT:
                x = torch.cat([saved[self.skip_for[layer.position]], x], dim=1)
            elif kind is LayerKind.DROPOUT:
                x = self._dropout(x)
            elif kind is LayerKind.HEAD:
                x = torch.sigmoid(self.convs[layer.name](x))
            if layer.position in self.skip_sources:
                saved[layer.position] = x
            if until is not None and layer.position == until:
                return x
        return x


@dataclass(eq=False)
class ModelGraph:
    """Graphe U-Net : descripteurs ordonnés, liens de saut et module torch associé"""

    spec: ArchitectureSpec
    layers: Tuple[LayerDescriptor, ...]
    skip_links: Tuple[Tuple[int, int], ...]
    module: UNet = field(repr=False)

    def layer(self, name: str) -> LayerDescriptor:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def layers_of_kind(self, kind: LayerKind) -> List[LayerDescriptor]:
        return [layer for layer in self.layers if layer.kind is kind]

    @property
    def conv_layers(self) -> List[LayerDescriptor]:
        return self.layers_of_kind(LayerKind.CONV3X3)

    @property
    def parameterized_layers(self) -> List[LayerDescriptor]:
        return [layer for layer in self.layers if layer.kind.has_parameters]

    def conv_by_ordinal(self, ordinal: int) -> LayerDescriptor:
        for layer in self.conv_layers:
            if layer.conv_ordinal == ordinal:
                return layer
        raise KeyError(ordinal)

    def is_trainable(self, name: str) -> bool:
        """Une couche est entraînable si tous ses paramètres le sont; False sans paramètres"""
        if name not in self.module.convs:
            return False
        return all(p.requires_grad for p in self.module.convs[name].parameters())

    def trainable_flags(self) -> Dict[str, bool]:
        return {layer.name: self.is_trainable(layer.name) for layer in self.layers}

    def named_tensors(self) -> Dict[str, torch.Tensor]:
        """Tenseurs nommés "<couche>.weight" / "<couche>.bias" dans l'ordre du graphe"""
        tensors = {}
        for layer in self.parameterized_layers:
            conv = self.module.convs[layer.name]
            tensors[f"{layer.name}.weight"] = conv.weight
            tensors[f"{layer.name}.bias"] = conv.bias
        return tensors

    @property
    def fingerprint(self) -> str:
        return architecture_fingerprint(self)

    @property
    def output_shape(self):
        head = self.layers[-1]
        return (head.height, head.width, head.out_channels)


def architecture_fingerprint(graph: ModelGraph) -> str:
    """Empreinte sha256 sur le type, les formes et l'ordre des couches"""
    payload = {
        "layers": [layer.signature() for layer in graph.layers],
        "skip_links": [list(link) for link in graph.skip_links],
        "input": [graph.spec.input_height, graph.spec.input_width, graph.spec.input_channels],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def build_unet(spec: ArchitectureSpec) -> ModelGraph:
    """
    Construit le graphe U-Net décrit par `spec`.

    Args:
        spec: description de l'architecture

    Returns:
        ModelGraph: 4*depth-2 convolutions 3x3, depth-1 maxpools et upsamplings, une tête 1x1

    Raises:
        ConfigurationError: si la spécification viole un invariant
    """
    spec.validate()
    layers: List[LayerDescriptor] = []
    skip_links: List[Tuple[int, int]] = []
    skip_sources: Dict[int, int] = {}
    height, width, channels = spec.input_height, spec.input_width, spec.input_channels
    ordinal = 0

    def add(name, kind, out_channels, level, conv_ordinal=None):
        layers.append(
            LayerDescriptor(
                position=len(layers),
                name=name,
                kind=kind,
                in_channels=channels,
                out_channels=out_channels,
                height=height,
                width=width,
                level=level,
                conv_ordinal=conv_ordinal,
            )
        )
        return layers[-1].position

    # Chemin contractant (le dernier niveau est le goulot)
    for level in range(1, spec.depth + 1):
        filters = spec.filters_at(level)
        for _ in range(2):
            ordinal += 1
            add(f"conv{ordinal:02d}", LayerKind.CONV3X3, filters, level, ordinal)
            channels = filters
        if level < spec.depth:
            skip_sources[level] = layers[-1].position
            height, width = height // 2, width // 2
            add(f"pool{level}", LayerKind.MAXPOOL, channels, level)
        else:
            add("dropout", LayerKind.DROPOUT, channels, level)

    # Chemin expansif
    for level in range(spec.depth - 1, 0, -1):
        filters = spec.filters_at(level)
        height, width = height * 2, width * 2
        add(f"up{level}", LayerKind.UPSAMPLE, channels, level)
        add(f"upconv{level}", LayerKind.CONV2X2, filters, level)
        channels = filters
        position = add(f"concat{level}", LayerKind.CONCAT, 2 * filters, level)
        skip_links.append((skip_sources[level], position))
        channels = 2 * filters
        for _ in range(2):
            ordinal += 1
            add(f"conv{ordinal:02d}", LayerKind.CONV3X3, filters, level, ordinal)
            channels = filters

    add("head", LayerKind.HEAD, 1, 1)

    layers_tuple = tuple(layers)
    links = tuple(skip_links)
    module = UNet(layers_tuple, links, spec.dropout_rate)
    graph = ModelGraph(spec=spec, layers=layers_tuple, skip_links=links, module=module)
    logger.debug("U-Net construit: profondeur %s, %s couches, empreinte %s", spec.depth, len(layers), graph.fingerprint[:12])
    return graph


def initialize_weights(graph: ModelGraph, seed: int) -> ModelGraph:
    """
    Initialisation He uniforme (fan-in) des poids, biais nuls.

    Les tirages sont faits sur CPU avec un générateur dédié pour ne pas dépendre du périphérique.
    """
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for layer in graph.parameterized_layers:
            conv = graph.module.convs[layer.name]
            fan_in = layer.in_channels * layer.kernel_size * layer.kernel_size
            bound = math.sqrt(6.0 / fan_in)
            weight = torch.empty(conv.weight.shape, dtype=torch.float32).uniform_(-bound, bound, generator=generator)
            conv.weight.copy_(weight.to(conv.weight.device, conv.weight.dtype))
            conv.bias.zero_()
    return graph
