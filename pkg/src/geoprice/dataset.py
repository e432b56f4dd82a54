"""Listing datasets: CSV ingest, outlier pruning, splits, extreme labels.

The on-disk listing format is a comma-separated file whose header is
exactly

    id,lat,lon,price,bedrooms,bathrooms,receptions,floors,status

with status one of ``rent`` or ``sale``. A dataset never mixes the two.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .geo import GeoPoint, seeded_rng

LISTING_HEADER = (
    "id",
    "lat",
    "lon",
    "price",
    "bedrooms",
    "bathrooms",
    "receptions",
    "floors",
    "status",
)

STATUSES = ("rent", "sale")

HA_NAMES = ("bedrooms", "bathrooms", "receptions", "floors")

# above this fraction of malformed rows the file is rejected outright
MALFORMED_LIMIT = 0.10


@dataclass(frozen=True)
class Listing:
    """One property listing with its house attributes."""

    id: str
    location: GeoPoint
    price: float
    bedrooms: int
    bathrooms: int
    receptions: int
    floors: int
    status: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("empty listing id")
        if not math.isfinite(self.price) or self.price <= 0:
            raise ValueError(f"listing {self.id}: price must be positive, got {self.price!r}")
        for name in HA_NAMES:
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"listing {self.id}: {name} must be a count >= 0, got {v!r}")
        if self.status not in STATUSES:
            raise ValueError(f"listing {self.id}: status must be one of {STATUSES}, got {self.status!r}")


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable collection of listings of a single status.

    split holds one tag per listing: 'train', 'test' or 'none'.
    provenance records how the data came to be (file, filters, seeds).
    """

    listings: tuple[Listing, ...]
    split: tuple[str, ...] = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.listings:
            raise DataError("empty dataset")
        if not self.split:
            object.__setattr__(self, "split", ("none",) * len(self.listings))
        if len(self.split) != len(self.listings):
            raise ValueError("split tags must align with listings")
        for s in self.split:
            if s not in ("train", "test", "none"):
                raise ValueError(f"bad split tag {s!r}")
        seen = set()
        for li in self.listings:
            if li.id in seen:
                raise DataError(f"duplicate listing id {li.id!r}")
            seen.add(li.id)
        statuses = {li.status for li in self.listings}
        if len(statuses) > 1:
            raise DataError(f"dataset mixes statuses {sorted(statuses)}")

    @property
    def n(self) -> int:
        return len(self.listings)

    @property
    def status(self) -> str:
        return self.listings[0].status

    def ids(self) -> tuple[str, ...]:
        return tuple(li.id for li in self.listings)

    def prices(self) -> np.ndarray:
        return np.array([li.price for li in self.listings], dtype=np.float64)

    def lats(self) -> np.ndarray:
        return np.array([li.location.lat for li in self.listings], dtype=np.float64)

    def lons(self) -> np.ndarray:
        return np.array([li.location.lon for li in self.listings], dtype=np.float64)

    def points(self) -> list[GeoPoint]:
        return [li.location for li in self.listings]

    def ha_block(self) -> np.ndarray:
        """House-attribute matrix, one row per listing, columns HA_NAMES."""
        return np.array(
            [[li.bedrooms, li.bathrooms, li.receptions, li.floors] for li in self.listings],
            dtype=np.float64,
        )

    def mask(self, tag: str) -> np.ndarray:
        return np.array([s == tag for s in self.split], dtype=bool)

    def train_mask(self) -> np.ndarray:
        return self.mask("train")

    def test_mask(self) -> np.ndarray:
        return self.mask("test")

    def take(self, keep: np.ndarray, note: str) -> "Dataset":
        """New dataset of the rows where keep is True, order preserved."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.n,):
            raise ValueError("mask length mismatch")
        if not keep.any():
            raise DataError(f"{note}: no rows left")
        listings = tuple(li for li, k in zip(self.listings, keep) if k)
        split = tuple(s for s, k in zip(self.split, keep) if k)
        prov = dict(self.provenance)
        prov[note] = int(keep.sum())
        return Dataset(listings, split, prov)


def _parse_row(row: dict) -> Listing:
    loc = GeoPoint(float(row["lat"]), float(row["lon"]))
    return Listing(
        id=row["id"].strip(),
        location=loc,
        price=float(row["price"]),
        bedrooms=int(row["bedrooms"]),
        bathrooms=int(row["bathrooms"]),
        receptions=int(row["receptions"]),
        floors=int(row["floors"]),
        status=row["status"].strip(),
    )


def ingest_listings(path, status_filter: str) -> Dataset:
    """Read a listing CSV, keeping rows whose status matches the filter.

    Malformed rows (wrong field count, unparsable numbers, violated
    invariants, repeated ids) are counted and skipped; more than 10% of
    them rejects the whole file. Rows with the other status are merely
    filtered, not malformed.
    """
    if status_filter not in STATUSES:
        raise DataError(f"status filter must be one of {STATUSES}, got {status_filter!r}")
    path = str(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != LISTING_HEADER:
            raise DataError(
                f"{path}: header must be exactly {','.join(LISTING_HEADER)}, got {','.join(header)}"
            )
        kept: list[Listing] = []
        seen_ids: set[str] = set()
        total = 0
        malformed = 0
        for raw in reader:
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            total += 1
            if len(raw) != len(LISTING_HEADER):
                malformed += 1
                continue
            row = dict(zip(LISTING_HEADER, raw))
            try:
                li = _parse_row(row)
            except (ValueError, KeyError):
                malformed += 1
                continue
            if li.id in seen_ids:
                malformed += 1
                continue
            seen_ids.add(li.id)
            if li.status != status_filter:
                continue
            kept.append(li)
    if total == 0:
        raise DataError(f"{path}: no data rows")
    if malformed / total > MALFORMED_LIMIT:
        raise DataError(
            f"{path}: {malformed} of {total} rows malformed, over the {MALFORMED_LIMIT:.0%} limit"
        )
    if malformed:
        warnings.warn(f"{path}: skipped {malformed} malformed rows of {total}")
    if not kept:
        raise DataError(f"{path}: no rows with status {status_filter!r}")
    prov = {
        "source": path,
        "status_filter": status_filter,
        "rows_total": total,
        "rows_malformed": malformed,
        "rows_kept": len(kept),
    }
    return Dataset(tuple(kept), ("none",) * len(kept), prov)


def prune_outliers(d: Dataset, frac: float = 0.02) -> Dataset:
    """Drop the floor(frac*n) cheapest and most expensive listings.

    Ordering is by (price, id) ascending, so price ties resolve by id
    and the result is reproducible. frac must lie in [0, 0.5).
    """
    if not (0.0 <= frac < 0.5):
        raise DataError(f"prune fraction must be in [0, 0.5), got {frac!r}")
    m = int(math.floor(frac * d.n))
    if m == 0:
        return d
    order = sorted(range(d.n), key=lambda i: (d.listings[i].price, d.listings[i].id))
    drop = set(order[:m]) | set(order[-m:])
    if len(drop) >= d.n:
        raise DataError("pruning would empty the dataset")
    keep = np.array([i not in drop for i in range(d.n)], dtype=bool)
    out = d.take(keep, f"pruned_{frac}")
    out.provenance["prune_frac"] = frac
    out.provenance["pruned_each_side"] = m
    return out


def split(d: Dataset, test_frac: float = 0.10, seed: int = 0) -> Dataset:
    """Tag listings train/test at random, reproducibly from the seed."""
    if d.n < 2:
        raise DataError("need at least 2 listings to split")
    if not (0.0 < test_frac < 1.0):
        raise DataError(f"test fraction must be in (0, 1), got {test_frac!r}")
    n_test = int(round(test_frac * d.n))
    if n_test == 0:
        raise DataError(f"test fraction {test_frac} leaves an empty test set at n={d.n}")
    if n_test == d.n:
        raise DataError(f"test fraction {test_frac} leaves an empty train set at n={d.n}")
    rng = seeded_rng(seed, "split")
    perm = rng.permutation(d.n)
    tags = ["train"] * d.n
    for i in perm[:n_test]:
        tags[i] = "test"
    prov = dict(d.provenance)
    prov["split_seed"] = int(seed)
    prov["test_frac"] = test_frac
    prov["n_test"] = n_test
    return replace(d, split=tuple(tags), provenance=prov)


def label_extremes(d: Dataset, delta: float = 0.10) -> dict[str, str]:
    """Binary labels for the price tails of the training split.

    The cheapest floor(delta * n_train) listings get 'cheap', the most
    expensive the same count get 'expensive'. Ordering is (price, id).
    Requires at least 2 listings per class.
    """
    if not (0.0 < delta <= 0.5):
        raise DataError(f"delta must be in (0, 0.5], got {delta!r}")
    train_idx = [i for i, s in enumerate(d.split) if s == "train"]
    if not train_idx:
        raise DataError("no training split; run split() first")
    m = int(math.floor(delta * len(train_idx)))
    if m < 2:
        raise DataError(
            f"delta {delta} over {len(train_idx)} training rows yields {m} per class, need >= 2"
        )
    order = sorted(train_idx, key=lambda i: (d.listings[i].price, d.listings[i].id))
    labels: dict[str, str] = {}
    for i in order[:m]:
        labels[d.listings[i].id] = "cheap"
    for i in order[-m:]:
        labels[d.listings[i].id] = "expensive"
    return labels


def save_listings(d: Dataset, path) -> None:
    """Write a dataset back out in the standard listing format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LISTING_HEADER)
        for li in d.listings:
            w.writerow(
                [
                    li.id,
                    repr(li.location.lat),
                    repr(li.location.lon),
                    repr(li.price),
                    li.bedrooms,
                    li.bathrooms,
                    li.receptions,
                    li.floors,
                    li.status,
                ]
            )


def save_splits(d: Dataset, path) -> None:
    """Write the split tags as id,split rows (header included)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "split"])
        for li, s in zip(d.listings, d.split):
            w.writerow([li.id, s])


def load_splits(d: Dataset, path) -> Dataset:
    """Attach split tags from an id,split file to a dataset."""
    tags: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "split"]:
            raise DataError(f"{path}: header must be id,split")
        for raw in reader:
            if not raw:
                continue
            if len(raw) != 2 or raw[1] not in ("train", "test", "none"):
                raise DataError(f"{path}: bad row {raw!r}")
            tags[raw[0]] = raw[1]
    missing = [li.id for li in d.listings if li.id not in tags]
    if missing:
        raise DataError(f"{path}: missing split tags for ids {missing[:5]}")
    prov = dict(d.provenance)
    prov["splits_from"] = str(path)
    return replace(d, split=tuple(tags[li.id] for li in d.listings), provenance=prov)
