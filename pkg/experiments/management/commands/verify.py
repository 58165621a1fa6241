from experiments.verification import CHECKS

from ._base import LabCommand


class Command(LabCommand):
    help = "Ejecuta la batería de verificación y escribe verify/report.csv."
    stage = "verify"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--only",
            nargs="+",
            choices=sorted(CHECKS),
            help="Ejecuta solo las comprobaciones indicadas.",
        )

    def stage_options(self, options):
        return {"only": options.get("only"), "report": self.print_check}

    def print_check(self, result):
        style = self.style.SUCCESS if result.passed else self.style.ERROR
        status = "OK" if result.passed else "FALLA"
        value = "" if result.value is None else f" {result.value:.3e}"
        self.stdout.write(style(f"[{status}] {result.name}{value} {result.detail}"))
