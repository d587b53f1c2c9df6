"""
Commande : maximisation d'activation de filtres d'un réseau entraîné
"""

from pathlib import Path

from architecture.services.unet import build_unet
from core.exceptions import ConfigurationError
from core.management.base import HarnessCommand, RunReport
from core.services.plans import load_pretrained
from ingestion.services.preprocessing import save_png
from insights.services.activation import ActMaxConfig, activation_maximization, target_layer
from insights.services.figures import save_activation_grid


class Command(HarnessCommand):
    help = "Image d'entrée maximisant l'activation moyenne de chaque filtre demandé (PNG)"

    def add_harness_arguments(self, parser):
        parser.add_argument("--layer", type=int, help="Ordinal de la convolution 3x3 (1-based)")
        parser.add_argument("--unit", type=int, help="Indice du filtre (0-based)")

    def prepare(self, config, options):
        out_dir = config.require_output_dir()
        vis = config.visualization
        if options.get("layer") is not None or options.get("unit") is not None:
            if options.get("layer") is None or options.get("unit") is None:
                raise ConfigurationError("--layer et --unit vont ensemble", field="--unit")
            units = ((options["layer"], options["unit"]),)
        else:
            units = vis.units
        if not units:
            raise ConfigurationError("au moins un filtre (--layer/--unit ou visualization.units)", field="visualization.units")
        graph = build_unet(config.architecture)
        for layer_index, unit_index in units:
            target_layer(graph, layer_index, unit_index)
        ckpt = load_pretrained(config, path=vis.checkpoint)
        configs = [
            ActMaxConfig(
                layer_index=layer_index,
                unit_index=unit_index,
                steps=vis.steps,
                step_size=vis.step_size,
                seed=config.seed,
                regularization_weight=vis.regularization_weight,
            ).validate()
            for layer_index, unit_index in units
        ]
        return config, Path(out_dir), graph, ckpt, configs

    def execute(self, job, clock):
        config, out_dir, graph, ckpt, configs = job
        report = RunReport(out_dir=out_dir, seeds={"master": config.seed, "input": config.seed})
        tiles = []
        for cfg in configs:
            name = f"conv{cfg.layer_index:02d}_u{cfg.unit_index}"
            with clock.stage(name):
                image = activation_maximization(graph, ckpt, cfg)
            report.add(name, save_png(image, out_dir / f"activation_{name}.png"))
            tiles.append((name, image))
            self.stdout.write(f"  {name}: {cfg.steps} pas")
        if len(tiles) > 1:
            report.add("grid", save_activation_grid(tiles, out_dir / "activations.png", config.visualization.columns))
        report.extra["checkpoint_id"] = ckpt.checkpoint_id
        report.extra["settings"] = [cfg.to_dict() for cfg in configs]
        return report
