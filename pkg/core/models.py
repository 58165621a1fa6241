from django.db import models

from core.numerics import config_hash


class TimeStampedModel(models.Model):
    """
    Abstract base class that provides self-updating
    'created_at' and 'updated_at' fields.
    """

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        abstract = True


class ProvenanceModel(models.Model):
    """
    Abstract base class that ties a row to the experiment configuration
    that produced it.
    """

    config_hash = models.CharField(
        max_length=64,
        db_index=True,
        verbose_name="Hash de configuración",
        help_text="SHA-256 del JSON canónico de la configuración",
    )

    class Meta:
        abstract = True

    def stamp(self, config):
        """
        Compute and store the hash of ``config``.
        """
        self.config_hash = config_hash(config)
        return self.config_hash

    @property
    def short_hash(self):
        return self.config_hash[:12]


class BaseModel(TimeStampedModel, ProvenanceModel):
    """
    Base model that combines timestamps and configuration provenance.
    """

    class Meta:
        abstract = True
