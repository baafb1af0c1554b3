"""
Version information for curio.

Reported as the Sentry release (``curio@<version>``). Report and world files
carry their own format versions and change independently.
"""

__version__ = "0.1.0"
