from ._base import LabCommand


class Command(LabCommand):
    help = "Ensambla la fuente universal truncada a partir del manifiesto de rayos."
    stage = "source"
