"""Patch-feature extraction into the crossview tensor/manifest formats."""

from .backbones import load_backbone
from .extract import ExtractSpec, extract
from .layouts import LAYOUTS, ImageRow, get_layout
from .tensor_io import write_tensor

__version__ = "0.1.0"

__all__ = [
    "ExtractSpec",
    "ImageRow",
    "LAYOUTS",
    "extract",
    "get_layout",
    "load_backbone",
    "write_tensor",
]
