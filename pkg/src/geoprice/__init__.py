"""Housing-price regression on spatial structure.

Two routes to the same question (how much of price is location):

* spatial autoregression with an explicit contiguity matrix, estimated
  by maximum likelihood, and
* flexible regression on fused feature blocks (house attributes,
  multi-scale image embeddings, point-of-interest counts).

A synthetic city generator makes both routes testable end to end
without any external data.
"""

from .errors import ConfigError, DataError, GeopriceError, NumericError
from .geo import (
    EARTH_RADIUS_KM,
    GeoPoint,
    ZoomLevel,
    haversine,
    seeded_rng,
    zoom_footprint,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "GeopriceError",
    "NumericError",
    "EARTH_RADIUS_KM",
    "GeoPoint",
    "ZoomLevel",
    "haversine",
    "seeded_rng",
    "zoom_footprint",
    "__version__",
]
