"""Point-of-interest records and radius-count featurization.

A listing's POI feature vector counts, for every tag in a fixed tag
universe, how many records of that tag lie strictly within r km of the
listing. Columns follow the lexical order of the tag universe so the
layout is stable across runs and machines.

Counting goes through one ball tree per tag; the brute-force pairwise
scan only survives in the tests as an oracle.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .balltree import BallTree
from .errors import DataError
from .geo import GeoPoint

DEFAULT_RADIUS_KM = 2.0

# Synthetic tag universe used by the built-in city generator: 86 generic
# place types. Real deployments load their own universe from a file.
DEFAULT_TAGS = tuple(sorted([
    "airport", "amusement_park", "aquarium", "art_gallery", "atm",
    "bakery", "bank", "bar", "beauty_salon", "bicycle_store",
    "book_store", "bowling_alley", "bus_station", "butcher", "cafe",
    "campground", "car_dealer", "car_rental", "car_repair", "car_wash",
    "casino", "cemetery", "church", "cinema", "city_hall",
    "clothing_store", "community_center", "convenience_store",
    "courthouse", "dentist", "department_store", "doctor", "dry_cleaner",
    "electrician", "electronics_store", "embassy", "fire_station",
    "florist", "funeral_home", "furniture_store", "garden_center",
    "gas_station", "greengrocer", "gym", "hair_care", "hardware_store",
    "hospital", "hotel", "insurance_agency", "jewelry_store", "laundry",
    "lawyer", "library", "locksmith", "mosque", "museum", "nightclub",
    "nursery", "painter", "park", "parking", "pet_store", "pharmacy",
    "playground", "plumber", "police", "post_office", "primary_school",
    "pub", "real_estate_agency", "restaurant", "roofing_contractor",
    "school", "shoe_store", "shopping_mall", "spa", "stadium", "storage",
    "supermarket", "synagogue", "taxi_stand", "theatre", "train_station",
    "travel_agency", "university", "veterinarian",
]))


@dataclass(frozen=True)
class PoiRecord:
    """One point of interest: a location and its tag."""

    location: GeoPoint
    tag: str

    def __post_init__(self):
        if not self.tag:
            raise ValueError("empty tag")


class PoiIndex:
    """Per-tag ball trees over a fixed, lexically ordered tag universe."""

    def __init__(self, records, tags):
        tags = tuple(tags)
        if not tags:
            raise DataError("empty tag universe")
        if len(set(tags)) != len(tags):
            raise DataError("tag universe contains duplicates")
        self.tags = tuple(sorted(tags))
        allowed = set(self.tags)
        per_tag_lat: dict[str, list[float]] = {t: [] for t in self.tags}
        per_tag_lon: dict[str, list[float]] = {t: [] for t in self.tags}
        rejected = 0
        kept = 0
        for rec in records:
            if rec.tag not in allowed:
                rejected += 1
                continue
            per_tag_lat[rec.tag].append(rec.location.lat)
            per_tag_lon[rec.tag].append(rec.location.lon)
            kept += 1
        self.n_records = kept
        self.n_rejected = rejected
        if rejected:
            warnings.warn(f"poi index: rejected {rejected} records with tags outside the universe")
        self._trees: dict[str, BallTree] = {}
        for t in self.tags:
            if per_tag_lat[t]:
                self._trees[t] = BallTree(per_tag_lat[t], per_tag_lon[t])

    @property
    def dim(self) -> int:
        return len(self.tags)

    def count(self, tag: str, point: GeoPoint, r: float) -> int:
        tree = self._trees.get(tag)
        if tree is None:
            return 0
        return tree.count_within(point.lat, point.lon, r)


def featurize(point: GeoPoint, r: float, index: PoiIndex) -> np.ndarray:
    """Counts of each tag strictly within r km of the point.

    Returns an int64 vector with one entry per universe tag, in the
    index's lexical tag order.
    """
    if r <= 0:
        raise DataError(f"radius must be positive, got {r!r}")
    out = np.zeros(index.dim, dtype=np.int64)
    for j, tag in enumerate(index.tags):
        out[j] = index.count(tag, point, r)
    return out


def featurize_dataset(d, index: PoiIndex, r: float = DEFAULT_RADIUS_KM) -> np.ndarray:
    """POI count matrix for a dataset, one row per listing.

    Same counts as featurize per row; all listings walk each tag's
    tree together so the distance work is batched.
    """
    if r <= 0:
        raise DataError(f"radius must be positive, got {r!r}")
    out = np.zeros((d.n, index.dim), dtype=np.int64)
    lats, lons = d.lats(), d.lons()
    for j, tag in enumerate(index.tags):
        tree = index._trees.get(tag)
        if tree is not None:
            out[:, j] = tree.count_within_many(lats, lons, r)
    return out


POI_HEADER = ("id", "lat", "lon", "tag")


def load_poi_csv(path) -> list[PoiRecord]:
    """Read POI records from an id,lat,lon,tag file."""
    path = str(path)
    records: list[PoiRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != POI_HEADER:
            raise DataError(f"{path}: header must be exactly {','.join(POI_HEADER)}")
        for raw in reader:
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) != 4:
                raise DataError(f"{path}: bad row {raw!r}")
            try:
                loc = GeoPoint(float(raw[1]), float(raw[2]))
            except ValueError as exc:
                raise DataError(f"{path}: bad coordinates in row {raw!r}") from exc
            tag = raw[3].strip()
            if not tag:
                raise DataError(f"{path}: empty tag in row {raw!r}")
            records.append(PoiRecord(loc, tag))
    if not records:
        raise DataError(f"{path}: no records")
    return records


def save_poi_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POI_HEADER)
        for i, rec in enumerate(records):
            w.writerow([f"p{i:06d}", repr(rec.location.lat), repr(rec.location.lon), rec.tag])


def load_tag_universe(path) -> tuple[str, ...]:
    """Read a tag universe file: one tag per line, blanks skipped."""
    path = str(path)
    with open(path) as fh:
        tags = [line.strip() for line in fh]
    tags = [t for t in tags if t]
    if not tags:
        raise DataError(f"{path}: empty tag universe")
    if len(set(tags)) != len(tags):
        raise DataError(f"{path}: duplicate tags")
    return tuple(sorted(tags))


def save_tag_universe(tags, path) -> None:
    with open(path, "w") as fh:
        for t in sorted(tags):
            fh.write(t + "\n")
