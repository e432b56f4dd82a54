"""Training manifests: which tile shows which listing, and its label.

A manifest row ties a listing id to the cached tile image for one zoom
level, a class label (cheap or expensive, from the price tails of the
training split), and a train/test role. Labels arrive as an id,label
csv produced by the pricing pipeline; this module never computes them.

Tile paths are derived from the tile cache's content addressing: the
cache stores each image under the hex sha256 of
"{lat!r},{lon!r},{zoom:d},{size:d}" with the coordinates as float
reprs. That derivation is re-stated here so the two packages share
only the directory, not code.
"""

from __future__ import annotations

import csv
import hashlib
import os
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

LABELS = ("cheap", "expensive")
ROLES = ("train", "test")
MANIFEST_HEADER = ["id", "zoom", "path", "label", "role"]


def rng_for(seed: int, *path) -> np.random.Generator:
    """Generator keyed by seed and a name path, stable across runs."""
    key = tuple(
        int(p) if isinstance(p, (int, np.integer)) else zlib.crc32(p.encode())
        for p in path
    )
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def tile_cache_path(cache_dir, lat: float, lon: float, zoom: int, size: int) -> str:
    raw = f"{float(lat)!r},{float(lon)!r},{int(zoom):d},{int(size):d}"
    return os.path.join(str(cache_dir), hashlib.sha256(raw.encode()).hexdigest())


@dataclass(frozen=True)
class ManifestRow:
    listing_id: str
    zoom: int
    path: str
    label: str
    role: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.role not in ROLES:
            raise DataError(f"role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class TrainManifest:
    zoom: int
    rows: tuple[ManifestRow, ...]

    def __post_init__(self):
        if not self.rows:
            raise DataError("manifest has no rows")
        off = [r for r in self.rows if r.zoom != self.zoom]
        if off:
            raise DataError(
                f"manifest mixes zooms: {off[0].zoom} row in a zoom {self.zoom} manifest"
            )
        ids = [r.listing_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate listing ids in manifest")

    def subset(self, role: str) -> tuple[ManifestRow, ...]:
        return tuple(r for r in self.rows if r.role == role)

    def class_counts(self, role: str) -> dict[str, int]:
        out = {lab: 0 for lab in LABELS}
        for r in self.subset(role):
            out[r.label] += 1
        return out


def _read_csv_dicts(path, what: str) -> list[dict]:
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty {what} file")
        return list(reader)


def read_labels(path) -> dict[str, str]:
    """id,label csv with labels restricted to the two classes."""
    rows = _read_csv_dicts(path, "labels")
    labels: dict[str, str] = {}
    for i, row in enumerate(rows, start=2):
        lid = (row.get("id") or "").strip()
        lab = (row.get("label") or "").strip()
        if not lid or lab not in LABELS:
            raise DataError(f"{path}:{i}: want id,label with label in {LABELS}")
        if lid in labels:
            raise DataError(f"{path}:{i}: duplicate id {lid!r}")
        labels[lid] = lab
    if not labels:
        raise DataError(f"{path}: no labels")
    return labels


def read_locations(path) -> dict[str, tuple[float, float]]:
    """id -> (lat, lon) from a listings csv; extra columns ignored."""
    rows = _read_csv_dicts(path, "listings")
    locs: dict[str, tuple[float, float]] = {}
    for i, row in enumerate(rows, start=2):
        lid = (row.get("id") or "").strip()
        try:
            lat = float(row["lat"])
            lon = float(row["lon"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{path}:{i}: want id,lat,lon columns") from None
        if not lid:
            raise DataError(f"{path}:{i}: empty id")
        locs[lid] = (lat, lon)
    return locs


def build_manifest(
    listings_path,
    labels_path,
    cache_dir,
    zoom: int,
    size: int = 600,
    test_frac: float = 0.10,
    seed: int = 0,
) -> TrainManifest:
    """Join labels to cached tile paths and assign a stratified split.

    Every labeled listing must have coordinates and a cached tile;
    anything missing is an error, not a silent drop, because a biased
    manifest quietly biases the classifier. The split holds out
    ceil(test_frac * k) per class so neither class can vanish from the
    test side.
    """
    if not (0.0 < test_frac < 0.5):
        raise ConfigError(f"test_frac must be in (0, 0.5), got {test_frac!r}")
    labels = read_labels(labels_path)
    locs = read_locations(listings_path)
    missing = sorted(i for i in labels if i not in locs)
    if missing:
        raise DataError(
            f"{len(missing)} labeled ids missing from listings, first few: {missing[:5]}"
        )
    paths = {}
    absent = []
    for lid in sorted(labels):
        lat, lon = locs[lid]
        p = tile_cache_path(cache_dir, lat, lon, zoom, size)
        if not os.path.exists(p):
            absent.append(lid)
        paths[lid] = p
    if absent:
        raise DataError(
            f"{len(absent)} labeled ids have no cached tile at zoom {zoom}, "
            f"first few: {absent[:5]}"
        )

    rows: list[ManifestRow] = []
    rng = rng_for(seed, "manifest", zoom)
    for label in LABELS:
        ids = sorted(i for i in labels if labels[i] == label)
        if len(ids) < 2:
            raise DataError(f"need >= 2 listings per class, {label!r} has {len(ids)}")
        k = int(np.ceil(test_frac * len(ids)))
        order = rng.permutation(len(ids))
        test_ids = {ids[j] for j in order[:k]}
        for lid in ids:
            rows.append(
                ManifestRow(
                    listing_id=lid,
                    zoom=zoom,
                    path=paths[lid],
                    label=label,
                    role="test" if lid in test_ids else "train",
                )
            )
    rows.sort(key=lambda r: r.listing_id)
    return TrainManifest(zoom=zoom, rows=tuple(rows))


def save_manifest(manifest: TrainManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for r in manifest.rows:
            w.writerow([r.listing_id, r.zoom, r.path, r.label, r.role])


def load_manifest(path) -> TrainManifest:
    rows = _read_csv_dicts(path, "manifest")
    if not rows:
        raise DataError(f"{path}: manifest has no rows")
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            out.append(
                ManifestRow(
                    listing_id=row["id"],
                    zoom=int(row["zoom"]),
                    path=row["path"],
                    label=row["label"],
                    role=row["role"],
                )
            )
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{path}:{i}: bad manifest row") from None
    return TrainManifest(zoom=out[0].zoom, rows=tuple(out))
