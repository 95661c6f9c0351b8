"""pforge: computational train tracks, growth, pretrees, blow-ups, and index theory."""

__version__ = "0.1.0"

from .kernel import backend_name  # noqa: F401
