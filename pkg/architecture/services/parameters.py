"""
Comptage des paramètres (par couche : k_h * k_w * c_in * c_out + c_out)
"""

from enum import Enum
from typing import Dict, List, Optional, Union

from .blocks import LayerBlock, enumerate_blocks
from .unet import ModelGraph


class Selector(str, Enum):
    ALL = "all"
    TRAINABLE = "trainable"
    FROZEN = "frozen"
    PER_BLOCK = "per_block"


def count_parameters(graph: ModelGraph, selector="all") -> Union[int, Dict[int, int]]:
    """
    Compte les paramètres du graphe.

    Args:
        graph: graphe construit par build_unet
        selector: "all", "trainable", "frozen" ou "per_block"

    Returns:
        int, ou dict {indice de bloc: nombre de paramètres} pour "per_block"
    """
    selector = Selector(selector)
    if selector is Selector.PER_BLOCK:
        return {
            block.index: sum(graph.layer(name).parameter_count for name in block.parameter_layer_names)
            for block in enumerate_blocks(graph)
        }
    total = 0
    for layer in graph.parameterized_layers:
        trainable = graph.is_trainable(layer.name)
        if (
            selector is Selector.ALL
            or (selector is Selector.TRAINABLE and trainable)
            or (selector is Selector.FROZEN and not trainable)
        ):
            total += layer.parameter_count
    return total


def describe_parameters(graph: ModelGraph, blocks: Optional[List[LayerBlock]] = None) -> List[dict]:
    """Une ligne par bloc : rôle, convolutions, nombre de paramètres, état d'entraînement"""
    blocks = blocks or enumerate_blocks(graph)
    per_block = count_parameters(graph, Selector.PER_BLOCK)
    rows = []
    for block in blocks:
        rows.append(
            {
                "block": block.index,
                "role": block.role.value,
                "conv_layers": list(block.conv_layer_indices),
                "depth_rank": block.depth_rank,
                "parameters": per_block[block.index],
                "trainable": all(graph.is_trainable(name) for name in block.parameter_layer_names),
            }
        )
    return rows
