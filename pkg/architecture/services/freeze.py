"""
Plans de gel : ensemble des blocs dont les paramètres restent entraînables
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, Iterable, List, Optional

from core.exceptions import ArgumentError, StructuralError

from .blocks import LayerBlock, enumerate_blocks
from .unet import ModelGraph

logger = logging.getLogger(__name__)


class TwoPart(str, Enum):
    CONTRACTING = "contracting"
    EXPANDING = "expanding"


class Direction(str, Enum):
    SHALLOW_TO_DEEP = "shallow_to_deep"
    DEEP_TO_SHALLOW = "deep_to_shallow"

    @classmethod
    def parse(cls, value):
        """Accepte aussi les alias de la ligne de commande ("shallow", "deep")"""
        aliases = {"shallow": cls.SHALLOW_TO_DEEP, "deep": cls.DEEP_TO_SHALLOW}
        if isinstance(value, cls):
            return value
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError as e:
            raise ArgumentError(f"Direction inconnue: {value!r}") from e


TWO_PART_LABELS = {TwoPart.CONTRACTING: "contracting_tuned", TwoPart.EXPANDING: "expanding_tuned"}


@dataclass(frozen=True)
class FreezePlan:
    """Plan de gel : les blocs listés sont entraînés, tous les autres sont figés"""

    trainable_blocks: FrozenSet[int]
    label: str

    def __post_init__(self):
        blocks = frozenset(self.trainable_blocks)
        if not blocks:
            raise ArgumentError(f"Le plan {self.label!r} doit contenir au moins un bloc entraînable")
        if any(not isinstance(b, int) or isinstance(b, bool) or b < 1 for b in blocks):
            raise ArgumentError(f"Indices de blocs invalides dans le plan {self.label!r}: {sorted(blocks, key=str)}")
        object.__setattr__(self, "trainable_blocks", blocks)

    @property
    def key(self) -> str:
        """Forme canonique de l'ensemble entraînable (indépendante du libellé)"""
        return "-".join(str(b) for b in sorted(self.trainable_blocks))

    def to_dict(self):
        return {"label": self.label, "trainable_blocks": sorted(self.trainable_blocks)}

    @classmethod
    def from_dict(cls, data):
        return cls(trainable_blocks=frozenset(int(b) for b in data["trainable_blocks"]), label=data["label"])

    def validate_against(self, blocks: Iterable[LayerBlock]):
        known = {block.index for block in blocks}
        unknown = sorted(self.trainable_blocks - known)
        if unknown:
            raise ArgumentError(f"Bloc(s) inconnu(s) {unknown} dans le plan {self.label!r} (blocs: {sorted(known)})")
        return self


def make_two_part_plan(part, blocks: List[LayerBlock]) -> FreezePlan:
    """
    Plan en deux parties : contractant (convolutions 1 à 2*depth) ou expansif (le reste).

    Pour un réseau de profondeur 1, la partie expansive est vide et les deux plans
    désignent le réseau entier.
    """
    part = TwoPart(part)
    depth = (len(blocks) + 1) // 2
    boundary = 2 * depth
    contracting = {b.index for b in blocks if b.conv_layer_indices and max(b.conv_layer_indices) <= boundary}
    if part is TwoPart.CONTRACTING:
        trainable = contracting
    else:
        trainable = {b.index for b in blocks} - contracting or {b.index for b in blocks}
    return FreezePlan(frozenset(trainable), TWO_PART_LABELS[part])


def make_cumulative_plan(direction, k: int, blocks: List[LayerBlock]) -> FreezePlan:
    """
    Plan cumulatif : les k blocs les moins profonds (shallow_to_deep) ou les plus profonds
    (deep_to_shallow) sont entraînés.

    Raises:
        ArgumentError: si k n'est pas dans [1, nombre de blocs]
    """
    direction = Direction.parse(direction)
    if not isinstance(k, int) or not 1 <= k <= len(blocks):
        raise ArgumentError(f"k={k!r} hors de [1, {len(blocks)}]")
    ranked = sorted(blocks, key=lambda b: b.depth_rank)
    chosen = ranked[:k] if direction is Direction.SHALLOW_TO_DEEP else ranked[-k:]
    return FreezePlan(frozenset(b.index for b in chosen), f"{direction.value}_k{k}")


def full_plan(blocks: List[LayerBlock], label="all_blocks") -> FreezePlan:
    return FreezePlan(frozenset(b.index for b in blocks), label)


def apply_freeze_plan(graph: ModelGraph, plan: FreezePlan, blocks: Optional[List[LayerBlock]] = None) -> ModelGraph:
    """
    Applique le plan : requires_grad vrai exactement pour les couches des blocs entraînables.

    Les couches sans paramètres (pool, upsample, concat, dropout) ne sont pas concernées.
    """
    blocks = blocks or enumerate_blocks(graph)
    plan.validate_against(blocks)
    for block in blocks:
        trainable = block.index in plan.trainable_blocks
        for name in block.parameter_layer_names:
            for parameter in graph.module.convs[name].parameters():
                parameter.requires_grad_(trainable)
    logger.debug("Plan %s appliqué: blocs %s", plan.label, plan.key)
    return graph


def read_freeze_plan(graph: ModelGraph, label="read_back") -> FreezePlan:
    """
    Relit le plan effectif à partir des drapeaux des couches.

    Raises:
        StructuralError: si un bloc est partiellement gelé
    """
    trainable = set()
    for block in enumerate_blocks(graph):
        flags = {graph.is_trainable(name) for name in block.parameter_layer_names}
        if len(flags) > 1:
            raise StructuralError(f"Bloc {block.index} partiellement gelé")
        if flags == {True}:
            trainable.add(block.index)
    return FreezePlan(frozenset(trainable), label)


CUMULATIVE_LABEL = re.compile(r"^(shallow_to_deep|deep_to_shallow)_k(\d+)$")


def plan_from_label(label: str, blocks: List[LayerBlock]) -> FreezePlan:
    """
    Résout un libellé de configuration : "contracting_tuned", "expanding_tuned", "all_blocks"
    ou "<direction>_k<k>".

    Raises:
        ArgumentError: libellé inconnu ou k hors limites
    """
    for part, name in TWO_PART_LABELS.items():
        if label == name:
            return make_two_part_plan(part, blocks)
    if label == "all_blocks":
        return full_plan(blocks)
    match = CUMULATIVE_LABEL.match(str(label))
    if match is None:
        raise ArgumentError(f"Plan de gel inconnu: {label!r}")
    return make_cumulative_plan(match.group(1), int(match.group(2)), blocks)
