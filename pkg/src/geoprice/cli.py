"""Command line front end.

Every experiment is driven by a flat key=value config file; a handful
of flags override single keys so sweeps do not need one file per run.
Each command reads and writes only the documented file formats under
the configured paths, prints a one line summary, and exits 0 on
success. Failures map to exit codes by kind: 2 for configuration, 3
for data, 4 for numerics, so shell scripts can branch without parsing
messages.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from dataclasses import dataclass, fields

import numpy as np
from scipy.linalg import qr as scipy_qr

from .contiguity import builder_from_spec, save_matrix_market
from .dataset import (
    HA_NAMES,
    ingest_listings,
    load_splits,
    prune_outliers,
    save_listings,
    save_splits,
    split,
)
from .errors import ConfigError, DataError, GeopriceError
from .features import (
    FusionSpec,
    ablate_zooms,
    fuse,
    load_features,
    render_ablation_table,
    save_ablation_csv,
    save_features,
)
from .poi import PoiIndex, featurize_dataset, load_poi_csv, load_tag_universe, save_poi_csv, save_tag_universe
from .regress import EstimatorSpec, fit_estimator, r2, rmse
from .report import heatmap_png, scatter_svg
from .geo import ZOOM_MAX, ZOOM_MIN
from .sar import DesignMatrix, fit_sar_ml, predict, save_model
from .synth import gen_nonlinear_city
from .tiles import TileClient, write_manifest

ENV_TILE_URL = "GEOPRICE_TILE_URL"

# short names accepted on the command line and in config files
ESTIMATOR_ALIASES = {
    "linear": "linear",
    "rf": "random_forest",
    "random_forest": "random_forest",
    "mlp": "mlp",
}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs, resolved from file plus flag overrides.

    Relative paths are taken relative to the config file's directory so
    a config bundle can be moved or checked in as one unit.
    """

    listings: str = ""
    poi: str = ""
    tags: str = ""
    features_dir: str = ""
    cache_dir: str = ""
    out_dir: str = "out"
    predictions: str = ""
    seed: int | None = None
    estimator: str = "linear"
    zooms: tuple[int, ...] = ()
    use_ha: bool = True
    use_poi: bool = False
    standardize: bool = False
    w: str = "knn:10"
    status: str = "sale"
    test_frac: float = 0.10
    prune_frac: float = 0.02
    poi_radius: float = 2.0
    n_runs: int = 10
    synth_n: int = 2000
    synth_poi: int = 4000
    tile_url: str = ""
    tile_size: int = 600
    tile_rate: float = 2.0
    tile_retries: int = 3
    tile_backoff: float = 0.5
    tile_workers: int = 4
    cache_only: bool = False


_PATH_KEYS = ("listings", "poi", "tags", "features_dir", "cache_dir", "out_dir", "predictions")


def parse_zooms(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"cannot parse zoom list from {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"cannot parse zoom list from {text!r}") from None


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {text!r}")


def _parse_estimator(text: str) -> str:
    low = str(text).strip().lower()
    if low not in ESTIMATOR_ALIASES:
        raise ConfigError(
            f"estimator must be one of {sorted(ESTIMATOR_ALIASES)}, got {text!r}"
        )
    return ESTIMATOR_ALIASES[low]


_PARSERS = {
    str: lambda v: v,
    int: int,
    float: float,
    bool: parse_bool,
}


def read_config(path) -> dict[str, str]:
    """Flat key=value file: one pair per line, # comments, no sections."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    raw: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            key = key.strip()
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = val.strip()
    return raw


def build_config(config_path, overrides: dict | None = None) -> PipelineConfig:
    """Typed config from file plus flag overrides; flags win."""
    raw = read_config(config_path)
    by_name = {f.name: f for f in fields(PipelineConfig)}
    values: dict = {}
    for key, text in raw.items():
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, text)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    if values.get("seed") is None:
        raise ConfigError("seed is mandatory: set seed= in the config or pass --seed")
    cfg = PipelineConfig(**values)
    base = os.path.dirname(os.path.abspath(config_path))
    resolved = {
        k: os.path.join(base, getattr(cfg, k))
        for k in _PATH_KEYS
        if getattr(cfg, k) and not os.path.isabs(getattr(cfg, k))
    }
    if resolved:
        cfg = PipelineConfig(**{**cfg.__dict__, **resolved})
    return cfg


def _convert(key: str, text: str):
    if key == "zooms":
        return parse_zooms(text)
    if key == "estimator":
        return _parse_estimator(text)
    if key == "seed":
        kind = int
    else:
        kind = type(getattr(PipelineConfig(), key))
    try:
        return _PARSERS[kind](text)
    except (ValueError, TypeError):
        raise ConfigError(f"config key {key}: cannot parse {text!r} as {kind.__name__}") from None


# ---------------------------------------------------------------- helpers


def _require(value: str, key: str) -> str:
    if not value:
        raise ConfigError(f"config key {key!r} is required for this command")
    return value


def _out_path(cfg: PipelineConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _tags_path(cfg: PipelineConfig) -> str:
    if cfg.tags:
        return cfg.tags
    return os.path.join(os.path.dirname(_require(cfg.poi, "poi")), "tags.txt")


def _predictions_path(cfg: PipelineConfig) -> str:
    return cfg.predictions or os.path.join(cfg.out_dir, "predictions.csv")


def _estimator_spec(cfg: PipelineConfig) -> EstimatorSpec:
    return EstimatorSpec(kind=cfg.estimator, seed=int(cfg.seed))


def _load_dataset(cfg: PipelineConfig):
    return ingest_listings(_require(cfg.listings, "listings"), cfg.status)


def _load_split_dataset(cfg: PipelineConfig):
    d = _load_dataset(cfg)
    path = os.path.join(cfg.out_dir, "splits.csv")
    if not os.path.exists(path):
        raise DataError(f"{path}: not found; run the split command first")
    return load_splits(d, path)


def _discover_zooms(features_dir: str) -> tuple[int, ...]:
    if not os.path.isdir(features_dir):
        raise DataError(f"feature directory not found: {features_dir}")
    found = []
    for name in os.listdir(features_dir):
        m = re.fullmatch(r"z(\d+)\.geofeat", name)
        if m:
            found.append(int(m.group(1)))
    if not found:
        raise DataError(f"no z*.geofeat files in {features_dir}")
    return tuple(sorted(found))


def _load_stores(cfg: PipelineConfig, zooms=None):
    fdir = _require(cfg.features_dir, "features_dir")
    zooms = tuple(zooms) if zooms else (cfg.zooms or _discover_zooms(fdir))
    stores = {}
    for z in zooms:
        path = os.path.join(fdir, f"z{z}.geofeat")
        if not os.path.exists(path):
            raise DataError(f"feature file not found: {path}")
        store = load_features(path)
        if store.zoom != z:
            raise DataError(f"{path}: header says zoom {store.zoom}, expected {z}")
        stores[z] = store
    return stores


def _poi_index(cfg: PipelineConfig) -> PoiIndex:
    records = load_poi_csv(_require(cfg.poi, "poi"))
    tags = load_tag_universe(_tags_path(cfg))
    return PoiIndex(records, tags)


def _write_predictions(ids, values, path) -> None:
    lines = ["id,prediction"]
    for lid, v in zip(ids, values):
        lines.append(f"{lid},{float(v)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_predictions(path):
    if not os.path.exists(path):
        raise DataError(f"predictions file not found: {path}")
    ids: list[str] = []
    vals: list[float] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "id,prediction":
            raise DataError(f"{path}: header must be id,prediction, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
            try:
                vals.append(float(parts[1]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad prediction {parts[1]!r}") from None
            ids.append(parts[0])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    return ids, np.array(vals, dtype=np.float64)


def _write_poi_counts(ids, tags, counts, path) -> None:
    lines = ["id," + ",".join(tags)]
    for i, lid in enumerate(ids):
        lines.append(lid + "," + ",".join(str(int(v)) for v in counts[i]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_poi_counts(path, ids):
    """POI count block reordered to the given listing ids."""
    if not os.path.exists(path):
        raise DataError(f"poi counts file not found: {path}; run the featurize command first")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) < 2 or header[0] != "id":
            raise DataError(f"{path}: header must be id,<tag>,...")
        names = tuple(header[1:])
        rows: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
            try:
                rows[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad count value") from None
    missing = [i for i in ids if i not in rows]
    if missing:
        raise DataError(f"{path}: missing counts for {len(missing)} ids, first few: {missing[:3]}")
    return np.array([rows[i] for i in ids]), names


def _independent_columns(X: np.ndarray) -> np.ndarray:
    """Keep mask for a maximal linearly independent column subset.

    Pivoted QR ranks columns by usefulness; everything past the
    numerical rank is aliased by what came before.
    """
    if X.shape[1] == 0:
        return np.zeros(0, dtype=bool)
    _, r, piv = scipy_qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = (diag.max() if diag.size else 0.0) * max(X.shape) * np.finfo(np.float64).eps
    rank = int((diag > tol).sum())
    keep = np.zeros(X.shape[1], dtype=bool)
    keep[piv[:rank]] = True
    return keep


def _fusion_spec(cfg: PipelineConfig) -> FusionSpec:
    return FusionSpec(
        use_ha=cfg.use_ha,
        zooms=tuple(cfg.zooms),
        use_poi=cfg.use_poi,
        standardize=cfg.standardize,
    )


def _fused_design(cfg: PipelineConfig, d):
    """Design block for the configured fusion, plus column names."""
    stores = _load_stores(cfg, cfg.zooms) if cfg.zooms else None
    poi_block = poi_names = None
    if cfg.use_poi:
        poi_block, poi_names = _read_poi_counts(os.path.join(cfg.out_dir, "poi_counts.csv"), d.ids())
    return fuse(d, _fusion_spec(cfg), stores, poi_block, poi_names)


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: PipelineConfig) -> int:
    city = gen_nonlinear_city(cfg.synth_n, n_poi=cfg.synth_poi, seed=int(cfg.seed))
    listings = _require(cfg.listings, "listings")
    poi = _require(cfg.poi, "poi")
    fdir = _require(cfg.features_dir, "features_dir")
    for p in (listings, poi, _tags_path(cfg)):
        os.makedirs(os.path.dirname(os.path.abspath(p)), exist_ok=True)
    os.makedirs(fdir, exist_ok=True)
    save_listings(city.dataset, listings)
    save_poi_csv(city.poi, poi)
    save_tag_universe(city.tags, _tags_path(cfg))
    for z, store in sorted(city.stores.items()):
        save_features(store, os.path.join(fdir, f"z{z}.geofeat"))
    print(
        f"synth: n={city.dataset.n} poi={len(city.poi)} zooms={','.join(str(z) for z in city.zooms)} seed={cfg.seed}"
    )
    return 0


def cmd_ingest(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    out = _out_path(cfg, "ingested.csv")
    save_listings(d, out)
    print(f"ingest: kept={d.n} status={cfg.status} -> {out}")
    return 0


def cmd_prune(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    pruned = prune_outliers(d, cfg.prune_frac)
    out = _out_path(cfg, "pruned.csv")
    save_listings(pruned, out)
    print(f"prune: kept={pruned.n} dropped={d.n - pruned.n} frac={cfg.prune_frac!r} -> {out}")
    return 0


def cmd_split(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    tagged = split(d, test_frac=cfg.test_frac, seed=int(cfg.seed))
    out = _out_path(cfg, "splits.csv")
    save_splits(tagged, out)
    n_te = int(tagged.test_mask().sum())
    print(f"split: train={tagged.n - n_te} test={n_te} seed={cfg.seed} -> {out}")
    return 0


def cmd_build_w(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    w = builder_from_spec(cfg.w)(d.points())
    out = _out_path(cfg, "w.mtx")
    save_matrix_market(w, out)
    print(f"build-w: spec={cfg.w} n={w.n} nnz={w.nnz} symmetric={w.is_symmetric_pattern()} -> {out}")
    return 0


def cmd_fit_sar(cfg: PipelineConfig) -> int:
    d = _load_split_dataset(cfg)
    build = builder_from_spec(cfg.w)
    tr = d.take(d.train_mask(), "train subset")
    te = d.take(d.test_mask(), "test subset")
    w_tr = build(tr.points()).row_normalize()
    model = fit_sar_ml(DesignMatrix.from_features(tr.ha_block(), HA_NAMES), tr.prices(), w_tr)
    model_out = _out_path(cfg, "sar_model.txt")
    save_model(model, model_out)
    w_te = build(te.points()).row_normalize()
    pred = predict(model, DesignMatrix.from_features(te.ha_block(), HA_NAMES), w_te)
    pred_out = _out_path(cfg, "sar_predictions.csv")
    _write_predictions(te.ids(), pred, pred_out)
    print(
        f"fit-sar: rho={model.rho!r} loglik={model.loglik!r} w={cfg.w} "
        f"test_rmse={rmse(te.prices(), pred)!r} -> {model_out}"
    )
    return 0


def cmd_poi_index(cfg: PipelineConfig) -> int:
    index = _poi_index(cfg)
    out = _out_path(cfg, "poi_tags.txt")
    save_tag_universe(index.tags, out)
    print(f"poi-index: records={index.n_records} rejected={index.n_rejected} tags={index.dim} -> {out}")
    return 0


def cmd_featurize(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    index = _poi_index(cfg)
    counts = featurize_dataset(d, index, r=cfg.poi_radius)
    out = _out_path(cfg, "poi_counts.csv")
    _write_poi_counts(d.ids(), index.tags, counts, out)
    print(f"featurize: n={d.n} tags={index.dim} radius_km={cfg.poi_radius!r} -> {out}")
    return 0


def cmd_fuse(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    X, names = _fused_design(cfg, d)
    out = _out_path(cfg, "design.csv")
    lines = ["id," + ",".join(names)]
    for i, lid in enumerate(d.ids()):
        lines.append(lid + "," + ",".join(repr(float(v)) for v in X[i]))
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"fuse: n={X.shape[0]} cols={X.shape[1]} -> {out}")
    return 0


def cmd_train(cfg: PipelineConfig) -> int:
    d = _load_split_dataset(cfg)
    X, names = _fused_design(cfg, d)
    tr = d.train_mask()
    te = d.test_mask()
    y = d.prices()
    X_tr, X_te = X[tr], X[te]
    if cfg.standardize:
        mu = X_tr.mean(axis=0)
        sd = X_tr.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        X_tr = (X_tr - mu) / sd
        X_te = (X_te - mu) / sd
    spec = _estimator_spec(cfg)
    dropped = 0
    if spec.kind == "linear":
        # aliased columns (constant, duplicated or otherwise collinear,
        # common for sparse poi counts at small n) carry nothing and only
        # break the least squares solve; keep a maximal independent set
        keep = _independent_columns(X_tr - X_tr.mean(axis=0))
        dropped = int((~keep).sum())
        if dropped:
            X_tr, X_te = X_tr[:, keep], X_te[:, keep]
            names = tuple(nm for nm, k in zip(names, keep) if k)
        X_tr = np.hstack([np.ones((X_tr.shape[0], 1)), X_tr])
        X_te = np.hstack([np.ones((X_te.shape[0], 1)), X_te])
        names = ("const",) + names
        model = fit_estimator(X_tr, y[tr], spec, names=names)
    else:
        model = fit_estimator(X_tr, y[tr], spec)
    pred = model.predict(X_te)
    out = _out_path(cfg, "predictions.csv")
    te_ids = tuple(np.array(d.ids(), dtype=object)[te])
    _write_predictions(te_ids, pred, out)
    print(
        f"train: kind={spec.kind} cols={X.shape[1]} dropped={dropped} "
        f"test_rmse={rmse(y[te], pred)!r} test_r2={r2(y[te], pred)!r} -> {out}"
    )
    return 0


def cmd_evaluate(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    ids, pred = _read_predictions(_predictions_path(cfg))
    price_by_id = dict(zip(d.ids(), d.prices()))
    missing = [i for i in ids if i not in price_by_id]
    if missing:
        raise DataError(f"predictions reference unknown listing ids, first few: {missing[:3]}")
    truth = np.array([price_by_id[i] for i in ids], dtype=np.float64)
    m_rmse = rmse(truth, pred)
    m_r2 = r2(truth, pred)
    out = _out_path(cfg, "eval.csv")
    with open(out, "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"rmse,{m_rmse!r}\n")
        fh.write(f"r2,{m_r2!r}\n")
    print(f"evaluate: n={len(ids)} rmse={m_rmse!r} r2={m_r2!r} -> {out}")
    return 0


def cmd_ablate_zooms(cfg: PipelineConfig) -> int:
    d = _load_split_dataset(cfg)
    stores = _load_stores(cfg)
    rows = ablate_zooms(d, stores, _estimator_spec(cfg), n_runs=cfg.n_runs, use_ha=cfg.use_ha)
    out = _out_path(cfg, "ablation.csv")
    save_ablation_csv(rows, out)
    print(render_ablation_table(rows))
    print(f"ablate-zooms: cells={len(rows)} n_runs={cfg.n_runs} -> {out}")
    return 0


def cmd_fetch_tiles(cfg: PipelineConfig) -> int:
    template = cfg.tile_url or os.environ.get(ENV_TILE_URL, "")
    if not template and not cfg.cache_only:
        raise ConfigError(f"no tile URL template: set tile_url= in the config or {ENV_TILE_URL}")
    d = _load_dataset(cfg)
    cache_dir = cfg.cache_dir or os.path.join(cfg.out_dir, "tile_cache")
    client = TileClient(
        template,
        cache_dir,
        rate=cfg.tile_rate,
        retries=cfg.tile_retries,
        backoff_base=cfg.tile_backoff,
        workers=cfg.tile_workers,
        cache_only=cfg.cache_only,
    )
    zooms = cfg.zooms or tuple(range(ZOOM_MIN, ZOOM_MAX + 1))
    triples = list(zip(d.ids(), d.lats(), d.lons()))
    rows = client.fetch_tiles(triples, zooms, size=cfg.tile_size)
    out = _out_path(cfg, "tile_manifest.csv")
    write_manifest(rows, out)
    n_ok = sum(r.ok for r in rows)
    print(f"fetch-tiles: requested={len(rows)} ok={n_ok} failed={len(rows) - n_ok} -> {out}")
    return 0


def cmd_report(cfg: PipelineConfig) -> int:
    d = _load_dataset(cfg)
    ids, pred = _read_predictions(_predictions_path(cfg))
    by_id = {lid: i for i, lid in enumerate(d.ids())}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"predictions reference unknown listing ids, first few: {missing[:3]}")
    rows = np.array([by_id[i] for i in ids], dtype=np.int64)
    truth = d.prices()[rows]
    scatter_out = _out_path(cfg, "scatter.svg")
    drawn = scatter_svg(pred, truth, scatter_out)
    heat_out = _out_path(cfg, "price_heatmap.png")
    heatmap_png(d.lats()[rows], d.lons()[rows], truth, heat_out)
    print(f"report: points={drawn} -> {scatter_out}, {heat_out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "prune": cmd_prune,
    "split": cmd_split,
    "build-w": cmd_build_w,
    "fit-sar": cmd_fit_sar,
    "poi-index": cmd_poi_index,
    "featurize": cmd_featurize,
    "fuse": cmd_fuse,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate-zooms": cmd_ablate_zooms,
    "fetch-tiles": cmd_fetch_tiles,
    "report": cmd_report,
}


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="geoprice",
        description="spatial house price pipeline: synthetic data, contiguity, SAR, fused regressors",
    )
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--zooms", default=None, help="comma separated zoom levels, e.g. 15,16,17")
    p.add_argument(
        "--estimator", default=None, choices=sorted(ESTIMATOR_ALIASES), help="estimator kind"
    )
    p.add_argument("--w", default=None, help="contiguity spec: knn:K, radius:R or delaunay")
    p.add_argument(
        "--cache-only",
        action="store_const",
        const=True,
        default=None,
        help="never touch the network; cold tiles become manifest failures",
    )
    return p


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "zooms": parse_zooms(args.zooms) if args.zooms is not None else None,
        "estimator": _parse_estimator(args.estimator) if args.estimator is not None else None,
        "w": args.w,
        "cache_only": args.cache_only,
    }
    try:
        cfg = build_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except GeopriceError as exc:
        print(f"error: {exc.exit_code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: 3: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
