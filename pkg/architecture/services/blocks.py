"""
Découpage du U-Net en blocs : toutes les couches comprises entre deux maxpoolings ou
upsamplings consécutifs forment un bloc.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

from core.exceptions import StructuralError

from .unet import LayerKind, ModelGraph

DELIMITERS = (LayerKind.MAXPOOL, LayerKind.UPSAMPLE)


class BlockRole(str, Enum):
    CONTRACTING = "contracting"
    BOTTLENECK = "bottleneck"
    EXPANDING = "expanding"
    HEAD_ATTACHED = "head-attached"


@dataclass(frozen=True)
class LayerBlock:
    """Bloc de couches délimité par les opérations de (sous/sur)échantillonnage"""

    index: int
    role: BlockRole
    conv_layer_indices: Tuple[int, ...]
    depth_rank: int
    layer_names: Tuple[str, ...]
    parameter_layer_names: Tuple[str, ...]

    @property
    def has_head(self):
        return self.role is BlockRole.HEAD_ATTACHED


def expected_layer_kinds(depth: int) -> List[LayerKind]:
    """Séquence de types de couches produite par build_unet pour une profondeur donnée"""
    kinds: List[LayerKind] = []
    for level in range(1, depth + 1):
        kinds += [LayerKind.CONV3X3, LayerKind.CONV3X3]
        kinds.append(LayerKind.MAXPOOL if level < depth else LayerKind.DROPOUT)
    for _ in range(depth - 1):
        kinds += [LayerKind.UPSAMPLE, LayerKind.CONV2X2, LayerKind.CONCAT, LayerKind.CONV3X3, LayerKind.CONV3X3]
    kinds.append(LayerKind.HEAD)
    return kinds


def longest_path_lengths(graph: ModelGraph) -> List[int]:
    """Longueur du plus long chemin entrée -> couche (arêtes séquentielles et de saut)"""
    predecessors = {layer.position: [layer.position - 1] if layer.position else [] for layer in graph.layers}
    for src, dst in graph.skip_links:
        predecessors[dst].append(src)
    lengths = [0] * len(graph.layers)
    # Les couches sont déjà dans un ordre topologique
    for layer in graph.layers:
        preds = predecessors[layer.position]
        lengths[layer.position] = max((lengths[p] + 1 for p in preds), default=1)
    return lengths


def enumerate_blocks(graph: ModelGraph) -> List[LayerBlock]:
    """
    Découpe le graphe en blocs ordonnés par profondeur.

    Pour une profondeur d, on obtient 2d-1 blocs; la tête 1x1 est rattachée au dernier bloc
    expansif et le rang de profondeur suit le plus long chemin depuis l'entrée.

    Raises:
        StructuralError: si le graphe n'a pas la topologie produite par build_unet
    """
    depth = graph.spec.depth
    kinds = [layer.kind for layer in graph.layers]
    if kinds != expected_layer_kinds(depth):
        raise StructuralError("Topologie non reconnue: le graphe n'a pas été produit par build_unet")
    for src, dst in graph.skip_links:
        source, target = graph.layers[src], graph.layers[dst]
        if (source.height, source.width) != (target.height, target.width):
            raise StructuralError(f"Lien de saut {source.name} -> {target.name} entre résolutions différentes")

    groups: List[List] = [[]]
    for layer in graph.layers:
        if layer.kind in DELIMITERS:
            groups.append([])
        else:
            groups[-1].append(layer)

    lengths = longest_path_lengths(graph)
    order = sorted(range(len(groups)), key=lambda i: lengths[groups[i][0].position])
    ranks = {group_index: rank for rank, group_index in enumerate(order, start=1)}

    blocks = []
    for i, group in enumerate(groups):
        index = i + 1
        if any(layer.kind is LayerKind.HEAD for layer in group):
            role = BlockRole.HEAD_ATTACHED
        elif index < depth:
            role = BlockRole.CONTRACTING
        elif index == depth:
            role = BlockRole.BOTTLENECK
        else:
            role = BlockRole.EXPANDING
        blocks.append(
            LayerBlock(
                index=index,
                role=role,
                conv_layer_indices=tuple(layer.conv_ordinal for layer in group if layer.kind is LayerKind.CONV3X3),
                depth_rank=ranks[i],
                layer_names=tuple(layer.name for layer in group),
                parameter_layer_names=tuple(layer.name for layer in group if layer.kind.has_parameters),
            )
        )
    return blocks
