"""Forward-hook activation exporter for the napmon OOD monitor."""

from .export import ExportSpec, export
from .models import ExportError, ToyNet, resolve_model

__version__ = "0.1.0"

__all__ = ["ExportError", "ExportSpec", "ToyNet", "export", "resolve_model"]
