"""Cached map tile client.

Downloads one image per (location, zoom, size) request from a service
described only by a URL template, so no vendor library is pulled in.
Files land in a content-addressed cache directory keyed by a hash of
the request parameters; a request whose key is already present never
touches the network. Failures are retried with exponential backoff and
then recorded in a manifest instead of aborting the run.
"""

from __future__ import annotations

import hashlib
import http.client
import math
import os
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DataError

PLACEHOLDERS = ("{lat}", "{lon}", "{zoom}", "{size}")

DEFAULT_TILE_PX = 600
DEFAULT_WORKERS = 4
DEFAULT_RETRIES = 3


def cache_key(lat: float, lon: float, zoom: int, size: int) -> str:
    """Content address for one tile request.

    The digest is taken over the shortest round-trip decimal forms of
    the coordinates, so two requests collide exactly when they would
    produce the same URL.
    """
    text = f"{float(lat)!r},{float(lon)!r},{int(zoom):d},{int(size):d}"
    return hashlib.sha256(text.encode("ascii")).hexdigest()


@dataclass(frozen=True)
class FetchOutcome:
    """One manifest row: what happened to one (listing, zoom) request."""

    listing_id: str
    lat: float
    lon: float
    zoom: int
    size: int
    key: str
    status: str  # "ok" or "failed"
    detail: str  # empty for ok rows, failure reason otherwise

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class RateLimiter:
    """Global request pacer shared by all download workers.

    Hands out start slots spaced 1/rate apart on the monotonic clock;
    a caller that arrives early sleeps until its slot. Thread safe.
    """

    def __init__(self, per_second: float):
        per_second = float(per_second)
        if not math.isfinite(per_second) or per_second <= 0.0:
            raise ConfigError(f"rate limit must be a positive number of requests per second, got {per_second!r}")
        self._interval = 1.0 / per_second
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            start = now if now > self._next else self._next
            self._next = start + self._interval
            wait = start - now
        if wait > 0.0:
            time.sleep(wait)


class TileClient:
    """Rate limited, retrying, cache backed tile fetcher.

    url_template must contain all of {lat}, {lon}, {zoom}, {size}. With
    cache_only=True the network is never touched and cold keys are
    reported as failures in the manifest; the template may then be empty
    (an offline cache audit needs no URL).
    """

    def __init__(
        self,
        url_template: str,
        cache_dir,
        rate: float = 2.0,
        retries: int = DEFAULT_RETRIES,
        backoff_base: float = 0.5,
        workers: int = DEFAULT_WORKERS,
        cache_only: bool = False,
        timeout: float = 10.0,
    ):
        if not url_template and not cache_only:
            raise ConfigError("tile URL template is empty; set tile_url in the config or GEOPRICE_TILE_URL")
        if url_template:
            missing = [p for p in PLACEHOLDERS if p not in url_template]
            if missing:
                raise ConfigError(f"tile URL template is missing placeholders: {', '.join(missing)}")
            try:
                url_template.format(lat=0.0, lon=0.0, zoom=0, size=0)
            except (KeyError, IndexError, ValueError) as exc:
                raise ConfigError(f"tile URL template is malformed: {exc}") from exc
        if int(retries) < 0:
            raise ConfigError(f"retries must be >= 0, got {retries}")
        if int(workers) < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        if not math.isfinite(float(backoff_base)) or float(backoff_base) < 0.0:
            raise ConfigError(f"backoff base must be a nonnegative number of seconds, got {backoff_base!r}")
        if not math.isfinite(float(timeout)) or float(timeout) <= 0.0:
            raise ConfigError(f"timeout must be a positive number of seconds, got {timeout!r}")
        self.url_template = url_template
        self.cache_dir = Path(cache_dir)
        self.retries = int(retries)
        self.backoff_base = float(backoff_base)
        self.workers = int(workers)
        self.cache_only = bool(cache_only)
        self.timeout = float(timeout)
        self._limiter = RateLimiter(rate)

    def cache_path(self, key: str) -> Path:
        return self.cache_dir / key

    def url_for(self, lat: float, lon: float, zoom: int, size: int) -> str:
        return self.url_template.format(lat=float(lat), lon=float(lon), zoom=int(zoom), size=int(size))

    def fetch_tiles(self, listings, zooms, size: int = DEFAULT_TILE_PX) -> list:
        """Fetch one tile per (listing, zoom) pair.

        listings is a sequence of (id, lat, lon) triples. Returns one
        FetchOutcome per pair in input order; requests that share a
        cache key are downloaded once and reported once each.
        """
        listings = list(listings)
        zooms = [int(z) for z in zooms]
        if not listings:
            raise DataError("no listings to fetch tiles for")
        if not zooms:
            raise DataError("no zoom levels to fetch tiles for")
        if any(z < 0 for z in zooms):
            raise ConfigError(f"zoom levels must be nonnegative, got {zooms}")
        size = int(size)
        if size < 1:
            raise ConfigError(f"tile size must be >= 1 pixel, got {size}")

        jobs = []
        for lid, lat, lon in listings:
            for z in zooms:
                jobs.append((str(lid), float(lat), float(lon), z, cache_key(lat, lon, z, size)))

        self.cache_dir.mkdir(parents=True, exist_ok=True)
        # one download per distinct key, first-seen order
        unique = {}
        for _, lat, lon, z, key in jobs:
            if key not in unique:
                unique[key] = (lat, lon, z)
        results = {}
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = {
                pool.submit(self._fetch_one, lat, lon, z, size, key): key
                for key, (lat, lon, z) in unique.items()
            }
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()

        return [
            FetchOutcome(lid, lat, lon, z, size, key, *results[key])
            for lid, lat, lon, z, key in jobs
        ]

    def _fetch_one(self, lat: float, lon: float, zoom: int, size: int, key: str):
        path = self.cache_path(key)
        if path.exists():
            return ("ok", "")
        if self.cache_only:
            return ("failed", "not in cache")
        url = self.url_for(lat, lon, zoom, size)
        attempts = self.retries + 1
        last = None
        for i in range(attempts):
            if i > 0 and self.backoff_base > 0.0:
                time.sleep(self.backoff_base * (2.0 ** (i - 1)))
            self._limiter.acquire()
            try:
                body = self._download(url)
            except (OSError, http.client.HTTPException, ValueError) as exc:
                last = exc
                continue
            tmp = path.with_name(path.name + ".part")
            tmp.write_bytes(body)
            os.replace(tmp, path)
            return ("ok", "")
        return ("failed", f"{_describe(last)} (attempts={attempts})")

    def _download(self, url: str) -> bytes:
        req = urllib.request.Request(url, headers={"User-Agent": "geoprice-tiles/0.1"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            body = resp.read()
        if not body:
            raise ValueError("empty response body")
        return body


def _describe(exc) -> str:
    if isinstance(exc, urllib.error.HTTPError):
        text = f"http {exc.code}"
    elif isinstance(exc, urllib.error.URLError):
        text = f"unreachable: {exc.reason}"
    else:
        text = f"{type(exc).__name__}: {exc}"
    # keep the manifest one row per line, one field per comma
    return text.replace(",", ";").replace("\n", " ")


def write_manifest(rows, path) -> None:
    """Write fetch outcomes as CSV. No timestamps, so reruns with the
    same outcomes produce identical bytes."""
    lines = ["id,lat,lon,zoom,size,key,status,detail"]
    for r in rows:
        lines.append(
            f"{r.listing_id},{r.lat!r},{r.lon!r},{r.zoom},{r.size},{r.key},{r.status},{r.detail}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
