"""Embeddings for map tiles, trained on price-extreme listings.

The workflow is three calls: build_manifest joins a labels file to the
tile cache and splits it, finetune trains one frozen-backbone
classifier per zoom level, extract writes penultimate-layer embeddings
in the feature store format the pricing pipeline loads.
"""

from .errors import ConfigError, DataError, ExtractorError
from .images import IMG_SIDE, load_image
from .manifest import (
    LABELS,
    ManifestRow,
    TrainManifest,
    build_manifest,
    load_manifest,
    save_manifest,
    tile_cache_path,
)
from .network import Checkpoint, load_checkpoint, save_checkpoint
from .pipeline import ExtractReport, FinetuneReport, extract, finetune

__all__ = [
    "ConfigError",
    "DataError",
    "ExtractorError",
    "IMG_SIDE",
    "LABELS",
    "Checkpoint",
    "ExtractReport",
    "FinetuneReport",
    "ManifestRow",
    "TrainManifest",
    "build_manifest",
    "extract",
    "finetune",
    "load_checkpoint",
    "load_image",
    "load_manifest",
    "save_checkpoint",
    "save_manifest",
    "tile_cache_path",
]
