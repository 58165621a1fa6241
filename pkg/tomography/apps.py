from django.apps import AppConfig


class TomographyConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "tomography"
    verbose_name = "Tomografía de rayos de luz"
