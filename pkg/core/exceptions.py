"""
Exception hierarchy shared by every app of the laboratory.

Each error carries a human readable message, a context dictionary with the
numbers that triggered it and the exit status used by the management
commands.
"""


class LabError(Exception):
    """
    Base class for every error raised by the numerical pipeline.
    """

    default_message = "Error del laboratorio."
    exit_code = 1

    def __init__(self, message=None, **context):
        self.message = message or self.default_message
        self.context = context
        super().__init__(self.message)

    def __str__(self):
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.message} ({details})"


class GeometryError(LabError):
    default_message = "Configuración geométrica inválida."
    exit_code = 2


class InsufficientRays(LabError):
    default_message = (
        "No hay suficientes rayos admisibles; aumente la densidad de semillas "
        "o reduzca J."
    )
    exit_code = 3


class ResolutionError(LabError):
    default_message = "La malla no resuelve la escala requerida."
    exit_code = 4


class SupportViolation(LabError):
    default_message = "La fuente tiene valores fuera de su soporte teórico."
    exit_code = 5


class StabilityError(LabError):
    default_message = "El paso de tiempo viola la condición CFL."
    exit_code = 6


class NaNGuard(LabError):
    default_message = "Se detectaron valores no finitos durante la integración."
    exit_code = 7

    def __init__(self, message=None, step=None, **context):
        self.step = step
        super().__init__(message, step=step, **context)


class CoverageError(LabError):
    default_message = "Los datos exteriores no cubren la región de integración."
    exit_code = 8


class ConvergenceError(LabError):
    default_message = "El gradiente conjugado no alcanzó la tolerancia."
    exit_code = 9

    def __init__(self, message=None, best_iterate=None, residuals=None, **context):
        self.best_iterate = best_iterate
        self.residuals = list(residuals or [])
        super().__init__(message, **context)


class ArtifactError(LabError):
    default_message = "Artefacto mal formado."
    exit_code = 10


class VerificationFailed(LabError):
    default_message = "Una o más comprobaciones de la batería fallaron."
    exit_code = 11
