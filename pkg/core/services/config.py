"""
UNet Lab - Fine-tuning sélectif de U-Net pour la segmentation
Copyright (c) 2025 Damien Hoffmann

This work is licensed under CC BY-NC-SA 4.0
https://creativecommons.org/licenses/by-nc-sa/4.0/

Fichier de configuration JSON d'un run : architecture, jeux de données, augmentation,
entraînements, paramètres d'expérience et de visualisation
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from architecture.services.unet import ArchitectureSpec
from core.exceptions import ConfigurationError
from core.services.validation import is_integer, require_number
from ingestion.services.augmentation import AugmentationConfig
from ingestion.services.manifest import DatasetManifest, Modality, load_manifest
from training.services.engine import TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = ("seed", "run_id", "output_dir", "architecture", "datasets", "augmentation", "pretrain", "finetune", "experiment", "visualization")
DEFAULT_SCHEDULES = ("contracting_tuned", "expanding_tuned")


@dataclass(frozen=True)
class DatasetRef:
    name: str
    path: Path
    modality: Modality = Modality.SYNTHETIC

    def load(self) -> DatasetManifest:
        return load_manifest(self.path, modality=self.modality, name=self.name)


@dataclass(frozen=True)
class ExperimentSettings:
    fold_count: int = 5
    pretrained_checkpoint: Optional[Path] = None
    schedules: Tuple[str, ...] = DEFAULT_SCHEDULES
    epoch_grid: Tuple[int, ...] = ()
    include_pretrained_baseline: bool = False
    save_checkpoints: bool = False
    save_predictions: bool = False
    fail_fast: bool = False
    max_workers: Optional[int] = None


@dataclass(frozen=True)
class VisualizationSettings:
    checkpoint: Optional[Path] = None
    units: Tuple[Tuple[int, int], ...] = ()
    steps: int = 512
    step_size: float = 0.1
    regularization_weight: float = 1e-3
    columns: int = 5


@dataclass(frozen=True)
class RunConfig:
    """Configuration complète d'un run; les chemins sont absolus (relatifs au fichier à la lecture)"""

    seed: int
    run_id: str
    architecture: ArchitectureSpec
    datasets: Dict[str, DatasetRef]
    augmentation: AugmentationConfig
    pretrain: TrainConfig
    finetune: TrainConfig
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    visualization: VisualizationSettings = field(default_factory=VisualizationSettings)
    output_dir: Optional[Path] = None
    source: Optional[Path] = None
    raw: Dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        """sha256 du JSON canonique (graine effective comprise, répertoire de sortie exclu)"""
        canonical = {key: value for key, value in self.raw.items() if key != "output_dir"}
        canonical["seed"] = self.seed
        return hashlib.sha256(json.dumps(canonical, sort_keys=True).encode("utf-8")).hexdigest()

    def dataset(self, name: str) -> DatasetRef:
        """
        Raises:
            ConfigurationError: jeu `name` absent de la section datasets
        """
        if name not in self.datasets:
            raise ConfigurationError("jeu de données requis par cette commande", field=f"datasets.{name}")
        return self.datasets[name]

    def require_output_dir(self) -> Path:
        if self.output_dir is None:
            raise ConfigurationError("répertoire de sortie requis (--out ou output_dir)", field="output_dir")
        return self.output_dir

    def require_file(self, value: Optional[Path], name: str) -> Path:
        if value is None:
            raise ConfigurationError("chemin requis par cette commande", field=name)
        if not Path(value).exists():
            raise ConfigurationError(f"fichier introuvable: {value}", field=name)
        return Path(value)


def _read(path: Path) -> Dict:
    if not path.is_file():
        raise ConfigurationError(f"fichier introuvable: {path}", field="config")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigurationError(f"JSON invalide: {e}", field="config") from e
    if not isinstance(data, dict):
        raise ConfigurationError("doit être un objet JSON", field="config")
    return data


def _section(data, name) -> Dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigurationError("doit être un objet JSON", field=name)
    return value


def _check_unknown(data, known, prefix):
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigurationError(f"champ inconnu {unknown[0]!r}", field=f"{prefix}.{unknown[0]}" if prefix else unknown[0])


def _resolve(base: Path, value, name) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigurationError(f"chemin attendu (reçu {value!r})", field=name)
    path = Path(value).expanduser()
    return path if path.is_absolute() else (base / path).resolve()


def _parse_datasets(section, base) -> Dict[str, DatasetRef]:
    datasets = {}
    for name, entry in section.items():
        prefix = f"datasets.{name}"
        if isinstance(entry, str):
            entry = {"path": entry}
        if not isinstance(entry, dict):
            raise ConfigurationError("chemin ou objet {path, modality} attendu", field=prefix)
        _check_unknown(entry, ("path", "modality"), prefix)
        path = _resolve(base, entry.get("path"), f"{prefix}.path")
        if not path.exists():
            raise ConfigurationError(f"introuvable: {path}", field=f"{prefix}.path")
        try:
            modality = Modality(entry.get("modality", Modality.SYNTHETIC.value))
        except ValueError as e:
            raise ConfigurationError(f"modalité inconnue {entry.get('modality')!r}", field=f"{prefix}.modality") from e
        datasets[name] = DatasetRef(name=name, path=path, modality=modality)
    return datasets


def _parse_experiment(section, base) -> ExperimentSettings:
    _check_unknown(section, ExperimentSettings.__dataclass_fields__, "experiment")
    values = dict(section)
    fold_count = values.get("fold_count", 5)
    if not is_integer(fold_count) or fold_count < 2:
        raise ConfigurationError(f"doit être un entier >= 2 (reçu {fold_count!r})", field="experiment.fold_count")
    if values.get("pretrained_checkpoint") is not None:
        values["pretrained_checkpoint"] = _resolve(base, values["pretrained_checkpoint"], "experiment.pretrained_checkpoint")
    schedules = values.get("schedules", list(DEFAULT_SCHEDULES))
    if not isinstance(schedules, list) or not schedules or not all(isinstance(s, str) for s in schedules):
        raise ConfigurationError("liste non vide de libellés attendue", field="experiment.schedules")
    values["schedules"] = tuple(schedules)
    grid = values.get("epoch_grid", [])
    if not isinstance(grid, list) or not all(is_integer(e) and e >= 1 for e in grid):
        raise ConfigurationError("liste d'entiers >= 1 attendue", field="experiment.epoch_grid")
    values["epoch_grid"] = tuple(grid)
    workers = values.get("max_workers")
    if workers is not None and (not is_integer(workers) or workers < 1):
        raise ConfigurationError(f"doit être un entier >= 1 (reçu {workers!r})", field="experiment.max_workers")
    for flag in ("include_pretrained_baseline", "save_checkpoints", "save_predictions", "fail_fast"):
        if not isinstance(values.get(flag, False), bool):
            raise ConfigurationError("booléen attendu", field=f"experiment.{flag}")
    return ExperimentSettings(**values)


def _parse_visualization(section, base) -> VisualizationSettings:
    _check_unknown(section, VisualizationSettings.__dataclass_fields__, "visualization")
    values = dict(section)
    if values.get("checkpoint") is not None:
        values["checkpoint"] = _resolve(base, values["checkpoint"], "visualization.checkpoint")
    units = values.get("units", [])
    if not isinstance(units, list) or not all(isinstance(u, list) and len(u) == 2 and all(map(is_integer, u)) for u in units):
        raise ConfigurationError("liste de paires [couche, filtre] attendue", field="visualization.units")
    values["units"] = tuple(tuple(u) for u in units)
    settings = VisualizationSettings(**values)
    if not is_integer(settings.steps) or settings.steps < 0:
        raise ConfigurationError(f"doit être un entier >= 0 (reçu {settings.steps!r})", field="visualization.steps")
    require_number(settings.step_size, "visualization.step_size", minimum=0.0, exclusive_minimum=True)
    require_number(settings.regularization_weight, "visualization.regularization_weight", minimum=0.0)
    if not is_integer(settings.columns) or settings.columns < 1:
        raise ConfigurationError(f"doit être un entier >= 1 (reçu {settings.columns!r})", field="visualization.columns")
    return settings


def parse_run_config(data: Dict, base: Path, seed: Optional[int] = None, out=None, source: Optional[Path] = None) -> RunConfig:
    """
    Valide un dictionnaire de configuration. Aucun fichier n'est écrit.

    Raises:
        ConfigurationError: premier champ invalide
    """
    _check_unknown(data, SECTIONS, "")
    if seed is None:
        if "seed" not in data:
            raise ConfigurationError("graine maîtresse obligatoire", field="seed")
        seed = data["seed"]
    if not is_integer(seed):
        raise ConfigurationError(f"doit être un entier (reçu {seed!r})", field="seed")
    if data.get("run_id") is not None and not isinstance(data["run_id"], str):
        raise ConfigurationError(f"texte attendu (reçu {data['run_id']!r})", field="run_id")

    architecture = ArchitectureSpec.from_dict(_section(data, "architecture"))
    try:
        architecture.validate()
    except ConfigurationError as e:
        raise ConfigurationError(e.args[0], field=f"architecture.{e.field}") from e

    augmentation = AugmentationConfig.from_dict({"seed": seed, **_section(data, "augmentation")})
    pretrain = TrainConfig.from_dict(
        _section(data, "pretrain"), prefix="pretrain", defaults=TrainConfig(epochs=40, validation_fraction=0.1, seed=seed)
    )
    finetune = TrainConfig.from_dict(_section(data, "finetune"), prefix="finetune", defaults=TrainConfig(epochs=20, seed=seed))

    if out is not None:
        output_dir = Path(out).resolve()
    elif data.get("output_dir") is not None:
        output_dir = _resolve(base, data["output_dir"], "output_dir")
    else:
        output_dir = None

    config = RunConfig(
        seed=seed,
        run_id=str(data.get("run_id") or (source.stem if source else "run")),
        architecture=architecture,
        datasets=_parse_datasets(_section(data, "datasets"), base),
        augmentation=augmentation,
        pretrain=pretrain,
        finetune=finetune,
        experiment=_parse_experiment(_section(data, "experiment"), base),
        visualization=_parse_visualization(_section(data, "visualization"), base),
        output_dir=output_dir,
        source=source,
        raw=data,
    )
    logger.debug("Configuration %s validée (empreinte %s)", config.run_id, config.config_hash[:12])
    return config


def load_run_config(path, seed: Optional[int] = None, out=None) -> RunConfig:
    """
    Lit et valide un fichier de configuration; `seed` et `out` remplacent les valeurs du fichier.

    Raises:
        ConfigurationError: fichier illisible ou premier champ invalide
    """
    path = Path(path).resolve()
    return parse_run_config(_read(path), path.parent, seed=seed, out=out, source=path)