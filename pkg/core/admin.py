from django.contrib import admin


class BaseModelAdmin(admin.ModelAdmin):
    """
    Base admin class with common configurations for models
    that inherit from BaseModel.
    """

    readonly_fields = ("created_at", "updated_at", "config_hash")
    list_filter = ("created_at", "updated_at")
    search_fields = ("config_hash",)

    def has_add_permission(self, request):
        """
        Rows are written by the management commands only.
        """
        return False

    def short_hash(self, obj):
        return obj.short_hash

    short_hash.short_description = "Hash"
