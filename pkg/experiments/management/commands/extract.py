from ._base import LabCommand


class Command(LabCommand):
    help = "Estima las integrales de rayo ∫_γ V para j ≤ J y cada N."
    stage = "extract"
