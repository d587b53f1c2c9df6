"""
Commande : panneau qualitatif image / vérité terrain / prédictions
"""

from pathlib import Path

from core.exceptions import ConfigurationError
from core.management.base import HarnessCommand, RunReport
from ingestion.services.manifest import load_manifest
from ingestion.services.preprocessing import default_size, load_arrays, load_prediction_masks
from insights.services.figures import qualitative_panel


class Command(HarnessCommand):
    help = "Grille une ligne par cas : image, vérité terrain, puis chaque répertoire de prédictions"
    config_required = False

    def add_harness_arguments(self, parser):
        parser.add_argument("--cases", required=True, help="Manifeste des cas à afficher")
        parser.add_argument("--pred", nargs="*", default=[], help="Répertoires de masques prédits <id>.png")
        parser.add_argument("--limit", type=int, default=6, help="Nombre maximal de cas (défaut: 6)")

    def prepare(self, config, options):
        out_dir = self.output_dir(config, options)
        cases = Path(options["cases"])
        if not cases.exists():
            raise ConfigurationError(f"introuvable: {cases}", field="--cases")
        directories = [Path(d) for d in options["pred"]]
        for directory in directories:
            if not directory.is_dir():
                raise ConfigurationError(f"répertoire introuvable: {directory}", field="--pred")
        if options["limit"] < 1:
            raise ConfigurationError("doit être >= 1", field="--limit")
        size = (config.architecture.input_height, config.architecture.input_width) if config else default_size()
        return out_dir, cases, directories, size, options["limit"]

    def execute(self, job, clock):
        out_dir, cases, directories, size, limit = job
        report = RunReport(out_dir=out_dir)
        manifest = load_manifest(cases)
        manifest = manifest.subset(manifest.ids[:limit])
        images, masks = load_arrays(manifest, size)
        sets = [(d.name, load_prediction_masks(d, manifest, size)) for d in directories]
        path = qualitative_panel(images[:, 0], (masks[:, 0] > 0.5).astype("uint8"), sets, out_dir / "panel.png")
        report.add("panel", path)
        self.stdout.write(f"  {len(manifest)} cas x {len(sets) + 2} colonnes")
        return report
