from ._base import LabCommand


class Command(LabCommand):
    help = "Resuelve el problema directo y guarda u en el anillo exterior."
    stage = "solve"
