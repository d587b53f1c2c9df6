"""
Validation croisée : répartition aléatoire et équilibrée des originaux en folds
"""

from dataclasses import dataclass
from typing import Dict, Tuple

from sklearn.model_selection import KFold

from core.exceptions import ArgumentError, IngestionError

from .manifest import DatasetManifest, SampleRecord


@dataclass(frozen=True)
class FoldAssignment:
    """Identifiant d'original -> indice de fold dans [1, fold_count]"""

    fold_count: int
    assignment: Dict[str, int]

    def sizes(self):
        counts = {fold: 0 for fold in range(1, self.fold_count + 1)}
        for fold in self.assignment.values():
            counts[fold] += 1
        return counts

    def to_dict(self):
        return {"fold_count": self.fold_count, "assignment": dict(sorted(self.assignment.items()))}


def make_folds(manifest: DatasetManifest, fold_count: int, seed: int) -> FoldAssignment:
    """
    Partition aléatoire équilibrée (tailles à 1 près), déterministe pour une graine donnée.

    Raises:
        ArgumentError: fold_count < 2, fold_count > nombre d'originaux, ou manifeste augmenté
    """
    if not manifest.only_originals:
        raise ArgumentError("Les folds se calculent sur les originaux, avant augmentation")
    ids = manifest.ids
    if fold_count < 2 or fold_count > len(ids):
        raise ArgumentError(f"fold_count={fold_count} invalide pour {len(ids)} originaux")
    splitter = KFold(n_splits=fold_count, shuffle=True, random_state=seed)
    assignment = {}
    for fold, (_, validation) in enumerate(splitter.split(ids), start=1):
        for i in validation:
            assignment[ids[i]] = fold
    return FoldAssignment(fold_count, assignment)


def fold_of(record: SampleRecord, folds: FoldAssignment) -> int:
    """Un échantillon augmenté hérite du fold de son original"""
    try:
        return folds.assignment[record.origin_id]
    except KeyError as e:
        raise IngestionError("Original sans fold assigné", record_id=record.id) from e


def split_for_fold(manifest: DatasetManifest, folds: FoldAssignment, fold: int) -> Tuple[DatasetManifest, DatasetManifest]:
    """
    Sépare entraînement et validation pour un fold.

    La validation ne contient que des originaux du fold; l'entraînement exclut tout
    enregistrement dont l'original appartient au fold.
    """
    if not 1 <= fold <= folds.fold_count:
        raise ArgumentError(f"fold={fold} hors de [1, {folds.fold_count}]")
    train_ids, validation_ids = [], []
    for record in manifest.records:
        if fold_of(record, folds) == fold:
            if record.is_original:
                validation_ids.append(record.id)
        else:
            train_ids.append(record.id)
    return (
        manifest.subset(train_ids, name=f"{manifest.name}-train-f{fold}"),
        manifest.subset(validation_ids, name=f"{manifest.name}-val-f{fold}"),
    )
