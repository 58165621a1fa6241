from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]

# Personalización del panel de administración
admin.site.site_header = "Laboratorio de Rayos de Luz"
admin.site.site_title = "Laboratorio de Rayos de Luz"
admin.site.index_title = "Corridas y artefactos del laboratorio"
