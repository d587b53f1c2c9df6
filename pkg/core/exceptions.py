"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Exceptions communes à toutes les applications du harnais
"""


class UNetLabError(Exception):
    """Exception de base du harnais"""


class ConfigurationError(UNetLabError, ValueError):
    """Configuration ou spécification invalide (nomme le champ fautif)"""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def __str__(self):
        message = super().__str__()
        if self.field:
            return f"{self.field}: {message}"
        return message


class ArgumentError(UNetLabError, ValueError):
    """Argument invalide passé à une opération"""


class StructuralError(UNetLabError):
    """Topologie non reconnue ou incompatibilité de formes entre données et réseau"""


class IngestionError(UNetLabError):
    """Erreur lors du chargement d'un manifeste ou d'un échantillon"""

    def __init__(self, message, record_id=None):
        super().__init__(message)
        self.record_id = record_id

    def __str__(self):
        message = super().__str__()
        if self.record_id is not None:
            return f"[{self.record_id}] {message}"
        return message


class ImageFormatError(UNetLabError):
    """Image ou masque non décodable"""


class CheckpointIncompatibleError(UNetLabError):
    """L'empreinte d'architecture du checkpoint ne correspond pas au réseau"""


class CheckpointIntegrityError(UNetLabError):
    """Archive de checkpoint corrompue ou tronquée"""


class ExperimentError(UNetLabError):
    """Échec d'une cellule (plan, fold) d'une expérience"""

    def __init__(self, message, schedule=None, fold=None):
        super().__init__(message)
        self.schedule = schedule
        self.fold = fold

    def __str__(self):
        message = super().__str__()
        if self.schedule is not None:
            return f"[{self.schedule} / fold {self.fold}] {message}"
        return message
