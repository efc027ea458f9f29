"""Checkpoint-to-bundle exporter for the spiking accelerator simulator."""

from .export import export, read_checkpoint
from .spec import ExportError, ExportSpec, LayerSpec, load_spec
from .writer import BundleWriter

__version__ = "0.1.0"
