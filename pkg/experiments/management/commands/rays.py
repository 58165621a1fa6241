from ._base import LabCommand


class Command(LabCommand):
    help = "Enumera la familia de rayos admisibles y escribe rays/manifest.csv."
    stage = "rays"
