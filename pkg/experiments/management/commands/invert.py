from ._base import LabCommand


class Command(LabCommand):
    help = "Reconstruye V sobre la región determinada a partir de integrales de rayo."
    stage = "invert"
