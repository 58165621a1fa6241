"""
WSGI del laboratorio; solo expone el panel de administración de corridas.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "lightray_lab.settings")

application = get_wsgi_application()
