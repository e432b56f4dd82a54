"""Geodesic primitives: points, great-circle distance, map-tile footprints.

All distances in this package are great-circle kilometres on a sphere of
radius 6371 km. Web-mercator ground resolution follows the usual
156543.03392 * cos(lat) / 2^zoom metres-per-pixel rule for 256 px base
tiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0

# metres per pixel at zoom 0 on the equator (256 px tiles)
_MPP_EQUATOR_Z0 = 156543.03392

ZOOM_MIN = 15
ZOOM_MAX = 20


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees.

    Latitude must lie in [-90, 90]; longitude is normalized into
    [-180, 180) so that equal physical locations compare equal.
    """

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not math.isfinite(lat) or not math.isfinite(lon):
            raise ValueError(f"non-finite coordinate ({self.lat!r}, {self.lon!r})")
        if lat < -90.0 or lat > 90.0:
            raise ValueError(f"latitude {lat!r} outside [-90, 90]")
        lon = ((lon + 180.0) % 360.0) - 180.0
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class ZoomLevel:
    """A web-map zoom level restricted to the range this package works at."""

    z: int

    def __post_init__(self):
        z = int(self.z)
        if z != self.z:
            raise ValueError(f"zoom must be an integer, got {self.z!r}")
        if z < ZOOM_MIN or z > ZOOM_MAX:
            raise ValueError(f"zoom {z} outside [{ZOOM_MIN}, {ZOOM_MAX}]")
        object.__setattr__(self, "z", z)


def haversine_arrays(lat1, lon1, lat2, lon2):
    """Great-circle distance in km between arrays of degree coordinates.

    Broadcasts like the underlying numpy ops, so one side may be scalar.
    """
    lat1 = np.radians(np.asarray(lat1, dtype=np.float64))
    lon1 = np.radians(np.asarray(lon1, dtype=np.float64))
    lat2 = np.radians(np.asarray(lat2, dtype=np.float64))
    lon2 = np.radians(np.asarray(lon2, dtype=np.float64))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    # roundoff can push a epsilon past 1 for antipodal pairs
    a = np.clip(a, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km between two points."""
    return float(haversine_arrays(a.lat, a.lon, b.lat, b.lon))


def zoom_footprint(z, center_lat: float, image_px: int = 600) -> float:
    """Ground area in km^2 covered by a square map image.

    z may be a ZoomLevel or a plain int in the supported range. The
    image is image_px pixels on a side, centred at latitude center_lat.
    """
    if not isinstance(z, ZoomLevel):
        z = ZoomLevel(z)
    if image_px <= 0:
        raise ValueError(f"image_px must be positive, got {image_px!r}")
    if not math.isfinite(center_lat) or abs(center_lat) >= 90.0:
        raise ValueError(f"center latitude {center_lat!r} invalid")
    mpp = _MPP_EQUATOR_Z0 * math.cos(math.radians(center_lat)) / (2.0 ** z.z)
    side_km = mpp * image_px / 1000.0
    return side_km * side_km


def seeded_rng(seed: int, *path) -> np.random.Generator:
    """A PCG64 generator keyed by seed and an optional derivation path.

    The same (seed, path) always yields the same stream on every
    platform. Components of path may be ints or short strings; strings
    are folded to ints so callers can name their streams.
    """
    key = tuple(_fold(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *path) -> int:
    """A 32-bit child seed for handing to code that wants a plain int."""
    key = tuple(_fold(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _fold(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    if isinstance(part, str):
        # stable string -> int fold; hash() varies per process so is unusable
        acc = 0
        for ch in part.encode("utf-8"):
            acc = (acc * 131 + ch) % (2**63)
        return acc
    raise TypeError(f"rng path components must be int or str, got {part!r}")
