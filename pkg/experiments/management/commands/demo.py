from experiments.presets import PRESETS, preset
from experiments.serializers import load_config

from ._base import LabCommand


class Command(LabCommand):
    help = "Encadena todas las etapas sobre un preset o una configuración."
    stage = "demo"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--preset",
            choices=sorted(PRESETS),
            default="demo",
            help="Preset usado cuando no se da --config.",
        )

    def raw_config(self, options):
        if options.get("config"):
            return load_config(options["config"])
        return load_config(data=preset(options["preset"]))
