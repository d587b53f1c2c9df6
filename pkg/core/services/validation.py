"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Contrôles de type des valeurs lues dans les fichiers JSON
"""

import math
from numbers import Real

from core.exceptions import ConfigurationError


def is_integer(value) -> bool:
    """Entier JSON (les booléens sont refusés)"""
    return isinstance(value, int) and not isinstance(value, bool)


def is_number(value) -> bool:
    """Nombre réel fini, entier ou flottant (les booléens sont refusés)"""
    return isinstance(value, Real) and not isinstance(value, bool) and math.isfinite(value)


def require_number(value, field, minimum=None, maximum=None, exclusive_minimum=False, exclusive_maximum=False):
    """
    Vérifie qu'une valeur est un nombre dans les bornes données.

    Raises:
        ConfigurationError: valeur non numérique ou hors bornes, nommée par `field`
    """
    if not is_number(value):
        raise ConfigurationError(f"nombre attendu (reçu {value!r})", field=field)
    low = "]" if exclusive_minimum else "["
    high = "[" if exclusive_maximum else "]"
    interval = f"{low}{'-inf' if minimum is None else minimum}, {'+inf' if maximum is None else maximum}{high}"
    if minimum is not None and (value <= minimum if exclusive_minimum else value < minimum):
        raise ConfigurationError(f"doit être dans {interval} (reçu {value!r})", field=field)
    if maximum is not None and (value >= maximum if exclusive_maximum else value > maximum):
        raise ConfigurationError(f"doit être dans {interval} (reçu {value!r})", field=field)
    return value


def require_choice(value, choices, field):
    """
    Raises:
        ConfigurationError: valeur absente de `choices` (ou non textuelle)
    """
    if not isinstance(value, str) or value not in choices:
        raise ConfigurationError(f"valeur inconnue {value!r}, attendu parmi {sorted(choices)}", field=field)
    return value
