"""Torch-to-container weight exporter and fixture builder.

This package owns the torch dependency. It writes the same container format
the inference runtime reads, validates manifests against a JSON schema, and
can train and export the committed toy fixture (model plus labeled dataset)
deterministically from a seed.
"""

from .container import write_container
from .export import ExportError, export_model, module_layers
from .fixture import make_fixture

__version__ = "0.1.0"

__all__ = ["ExportError", "export_model", "make_fixture", "module_layers", "write_container"]
