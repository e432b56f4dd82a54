"""Per-zoom feature stores, feature fusion, and zoom ablation.

A feature store holds one fixed-width embedding vector per listing id
for a single zoom level. On disk it is a text file whose first line is

    #GEOFEAT v1 zoom=<z> dim=<d>

followed by one row per listing: the id, then the vector components,
comma separated. Floats are written with repr so files round-trip to
the exact same bits.

Fusion concatenates, in this fixed order: house attributes, per-zoom
embeddings ascending by zoom, POI counts. Column names travel with the
matrix so downstream reports and model exports stay legible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .dataset import HA_NAMES, Dataset
from .errors import ConfigError, DataError
from .geo import ZOOM_MAX, ZOOM_MIN, derive_seed
from .regress import EstimatorSpec, EvalReport, repeated_eval

GEOFEAT_VERSION = "v1"


@dataclass(frozen=True)
class FeatureStore:
    zoom: int
    ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        if not (ZOOM_MIN <= self.zoom <= ZOOM_MAX):
            raise DataError(f"zoom {self.zoom} outside [{ZOOM_MIN}, {ZOOM_MAX}]")
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2:
            raise DataError("feature matrix must be 2-d")
        if len(self.ids) != m.shape[0]:
            raise DataError(f"{len(self.ids)} ids for {m.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate ids in feature store")
        if m.size and not np.all(np.isfinite(m)):
            raise DataError("non-finite feature values")
        object.__setattr__(self, "_pos", {i: j for j, i in enumerate(self.ids)})

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def n(self) -> int:
        return len(self.ids)

    def vector(self, listing_id: str) -> np.ndarray:
        j = self._pos.get(listing_id)
        if j is None:
            raise DataError(f"no features for id {listing_id!r} at zoom {self.zoom}")
        return self.matrix[j]

    def has(self, listing_id: str) -> bool:
        return listing_id in self._pos

    def block_for(self, ids) -> np.ndarray:
        """Rows for the given ids, in their order; missing ids error."""
        missing = [i for i in ids if i not in self._pos]
        if missing:
            raise DataError(
                f"zoom {self.zoom} store is missing {len(missing)} ids, "
                f"first few: {missing[:5]}"
            )
        rows = [self._pos[i] for i in ids]
        return self.matrix[rows]


def save_features(store: FeatureStore, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"#GEOFEAT {GEOFEAT_VERSION} zoom={store.zoom} dim={store.dim}\n")
        for i, lid in enumerate(store.ids):
            vals = ",".join(repr(float(v)) for v in store.matrix[i])
            fh.write(f"{lid},{vals}\n" if store.dim else f"{lid}\n")


def load_features(path) -> FeatureStore:
    path = str(path)
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if (
            len(parts) != 4
            or parts[0] != "#GEOFEAT"
            or not parts[2].startswith("zoom=")
            or not parts[3].startswith("dim=")
        ):
            raise DataError(f"{path}: bad header {header!r}")
        if parts[1] != GEOFEAT_VERSION:
            raise DataError(f"{path}: unsupported version {parts[1]!r}")
        try:
            zoom = int(parts[2][5:])
            dim = int(parts[3][4:])
        except ValueError:
            raise DataError(f"{path}: bad header {header!r}") from None
        if dim < 1:
            raise DataError(f"{path}: dim must be >= 1, got {dim}")
        ids: list[str] = []
        rows: list[list[float]] = []
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != dim + 1:
                raise DataError(
                    f"{path}:{ln}: row has {len(cells) - 1} values, header says dim={dim}"
                )
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError:
                raise DataError(f"{path}:{ln}: unparsable value") from None
            ids.append(cells[0])
    matrix = np.array(rows, dtype=np.float64) if rows else np.empty((0, dim))
    return FeatureStore(zoom=zoom, ids=tuple(ids), matrix=matrix)


@dataclass(frozen=True)
class FusionSpec:
    """Which feature sources enter the design, and how.

    standardize asks estimators that are scale-sensitive to z-score
    inputs by their training statistics; tree ensembles ignore it and
    the perceptron standardizes regardless.
    """

    use_ha: bool = True
    zooms: tuple[int, ...] = ()
    use_poi: bool = False
    standardize: bool = False

    def __post_init__(self):
        zooms = tuple(int(z) for z in self.zooms)
        object.__setattr__(self, "zooms", zooms)
        if not self.use_ha and not zooms and not self.use_poi:
            raise ConfigError("fusion needs at least one feature source")
        if len(set(zooms)) != len(zooms):
            raise ConfigError(f"duplicate zooms {zooms}")
        for z in zooms:
            if not (ZOOM_MIN <= z <= ZOOM_MAX):
                raise ConfigError(f"zoom {z} outside [{ZOOM_MIN}, {ZOOM_MAX}]")


def fuse(
    d: Dataset,
    spec: FusionSpec,
    stores: dict[int, FeatureStore] | None = None,
    poi_block: np.ndarray | None = None,
    poi_names=None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Concatenate the requested sources into one (n, K) block.

    Column order is fixed: house attributes, embeddings by ascending
    zoom, POI counts. Names come back alongside the matrix.
    """
    blocks: list[np.ndarray] = []
    names: list[str] = []
    if spec.use_ha:
        blocks.append(d.ha_block())
        names.extend(HA_NAMES)
    for z in sorted(spec.zooms):
        if stores is None or z not in stores:
            raise DataError(f"fusion requests zoom {z} but no store provides it")
        block = stores[z].block_for(d.ids())
        blocks.append(block)
        names.extend(f"df{z}_{j}" for j in range(block.shape[1]))
    if spec.use_poi:
        if poi_block is None:
            raise DataError("fusion requests poi counts but none were given")
        poi_block = np.asarray(poi_block, dtype=np.float64)
        if poi_block.shape[0] != d.n:
            raise DataError(
                f"poi block has {poi_block.shape[0]} rows, dataset has {d.n}"
            )
        blocks.append(poi_block)
        if poi_names is None:
            poi_names = tuple(f"poi_{j}" for j in range(poi_block.shape[1]))
        else:
            poi_names = tuple(f"poi_{t}" for t in poi_names)
            if len(poi_names) != poi_block.shape[1]:
                raise DataError(
                    f"{len(poi_names)} poi names for {poi_block.shape[1]} columns"
                )
        names.extend(poi_names)
    X = np.hstack(blocks)
    return X, tuple(names)


def evaluate_fusion(
    d: Dataset,
    fusion: FusionSpec,
    est: EstimatorSpec,
    stores: dict[int, FeatureStore] | None = None,
    poi_block: np.ndarray | None = None,
    poi_names=None,
    n_runs: int = 10,
) -> EvalReport:
    """Fuse features, split by the dataset's tags, run repeated eval."""
    X, _ = fuse(d, fusion, stores, poi_block, poi_names)
    tr = d.train_mask()
    te = d.test_mask()
    if not tr.any() or not te.any():
        raise DataError("dataset needs train and test tags; run split() first")
    y = d.prices()
    X_tr, X_te = X[tr], X[te]
    if fusion.standardize:
        mu = X_tr.mean(axis=0)
        sd = X_tr.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        X_tr = (X_tr - mu) / sd
        X_te = (X_te - mu) / sd
    if est.kind == "linear":
        # linear fits need the intercept column the other kinds absorb
        X_tr = np.hstack([np.ones((X_tr.shape[0], 1)), X_tr])
        X_te = np.hstack([np.ones((X_te.shape[0], 1)), X_te])
    return repeated_eval(X_tr, y[tr], X_te, y[te], est, n_runs=n_runs)


@dataclass(frozen=True)
class AblationRow:
    zooms: tuple[int, ...]
    report: EvalReport


def ablate_zooms(
    d: Dataset,
    stores: dict[int, FeatureStore],
    est: EstimatorSpec,
    n_runs: int = 10,
    zoom_sets: tuple[tuple[int, ...], ...] | None = None,
    use_ha: bool = True,
) -> list[AblationRow]:
    """Evaluate nested suffix sets of zooms: finest alone, then adding
    one coarser level at a time. Each cell reseeds from (seed, cell)."""
    if not stores:
        raise DataError("no feature stores to ablate")
    if zoom_sets is None:
        zs = sorted(stores.keys())
        zoom_sets = tuple(tuple(zs[i:]) for i in range(len(zs) - 1, -1, -1))
    rows: list[AblationRow] = []
    for ci, zooms in enumerate(zoom_sets):
        cell_est = dc_replace(est, seed=derive_seed(est.seed, "ablate", ci))
        fusion = FusionSpec(use_ha=use_ha, zooms=tuple(zooms))
        report = evaluate_fusion(d, fusion, cell_est, stores, n_runs=n_runs)
        rows.append(AblationRow(zooms=tuple(sorted(zooms)), report=report))
    return rows


def save_ablation_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zooms", "rmse_mean", "rmse_std", "r2_mean", "r2_std", "n_runs"])
        for row in rows:
            w.writerow(
                [
                    "|".join(str(z) for z in row.zooms),
                    repr(row.report.rmse_mean),
                    repr(row.report.rmse_std),
                    repr(row.report.r2_mean),
                    repr(row.report.r2_std),
                    row.report.n_runs,
                ]
            )


def render_ablation_table(rows) -> str:
    lines = ["zooms            r2 (mean +/- std)    rmse (mean +/- std)"]
    for row in rows:
        zs = ",".join(str(z) for z in row.zooms)
        r = row.report
        lines.append(
            f"{zs:<16} {r.r2_mean:7.4f} +/- {r.r2_std:6.4f}   {r.rmse_mean:10.4g} +/- {r.rmse_std:8.3g}"
        )
    return "\n".join(lines)
