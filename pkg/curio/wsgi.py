"""
WSGI config for the curio project.

Only the admin is served; experiments run through the management commands.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "curio.settings")

application = get_wsgi_application()
