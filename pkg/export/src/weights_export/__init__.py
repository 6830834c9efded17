"""Checkpoint-to-NPW1 conversion for the 8-layer VGG-16 prefix."""

__version__ = "0.1.0"

from .convert import (
    ChannelMismatchError,
    ExportError,
    ExportManifest,
    ExportReport,
    KernelSizeError,
    MissingLayerError,
    export,
    load_checkpoint,
)
from .reference_reader import read_npw1

__all__ = [
    "ChannelMismatchError",
    "ExportError",
    "ExportManifest",
    "ExportReport",
    "KernelSizeError",
    "MissingLayerError",
    "export",
    "load_checkpoint",
    "read_npw1",
]
