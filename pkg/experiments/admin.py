from django.contrib import admin
from django.utils.html import format_html

from core.admin import BaseModelAdmin

from .models import ExperimentRun, RunArtifact


class RunArtifactInline(admin.TabularInline):
    model = RunArtifact
    extra = 0
    fields = ("kind", "path", "digest", "size")
    readonly_fields = ("kind", "path", "digest", "size")
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(BaseModelAdmin):
    list_display = (
        "stage",
        "mode",
        "short_hash",
        "status_display",
        "exit_code",
        "artifacts_count",
        "created_at",
    )
    list_filter = ("stage", "mode", "status", "created_at")
    search_fields = ("config_hash", "output_dir", "error")
    readonly_fields = (
        "created_at",
        "updated_at",
        "config_hash",
        "stage",
        "mode",
        "status",
        "exit_code",
        "output_dir",
        "workers",
        "summary",
        "error",
    )
    list_per_page = 25

    fieldsets = (
        ("Corrida", {"fields": ("stage", "mode", "workers", "output_dir")}),
        ("Resultado", {"fields": ("status", "exit_code", "summary", "error")}),
        (
            "Metadatos",
            {
                "fields": ("config_hash", "created_at", "updated_at"),
                "classes": ("collapse",),
            },
        ),
    )

    inlines = [RunArtifactInline]

    actions = ["verify_artifacts"]

    def status_display(self, obj):
        """Muestra el estado de la corrida con color."""
        color = {"ok": "green", "failed": "red"}.get(obj.status, "orange")
        return format_html(
            '<span style="color: {}; font-weight: bold;">{}</span>',
            color,
            obj.get_status_display(),
        )

    status_display.short_description = "Estado"
    status_display.admin_order_field = "status"

    def verify_artifacts(self, request, queryset):
        altered = 0
        checked = 0
        for run in queryset:
            for artifact in run.artifacts.all():
                checked += 1
                if not artifact.is_intact():
                    altered += 1
        self.message_user(
            request, f"{checked} artefactos revisados, {altered} alterados o ausentes."
        )

    verify_artifacts.short_description = "Recalcular el hash de los artefactos"

    def get_queryset(self, request):
        """Optimiza las consultas incluyendo los artefactos."""
        qs = super().get_queryset(request)
        return qs.prefetch_related("artifacts")


@admin.register(RunArtifact)
class RunArtifactAdmin(admin.ModelAdmin):
    list_display = ("path", "kind", "run", "size", "created_at")
    list_filter = ("kind", "created_at")
    search_fields = ("path", "digest")
    readonly_fields = ("run", "kind", "path", "digest", "size", "created_at")

    def has_add_permission(self, request):
        return False
