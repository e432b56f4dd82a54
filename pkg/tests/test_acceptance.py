"""Acceptance gate: one test per promised behavior, one verdict line each.

Run with -s (or read captured stdout) for the [ACCEPT] lines. Budgets
are wall-clock on a laptop-scale machine; every threshold here is
frozen, so a failure means the library changed behavior, not the test.
"""

import itertools
import os
import time

import numpy as np
import pytest

from geoprice.contiguity import _project_azimuthal, build_delaunay
from geoprice.dataset import HA_NAMES, split
from geoprice.errors import NumericError
from geoprice.features import FusionSpec, ablate_zooms, evaluate_fusion
from geoprice.geo import GeoPoint, haversine, haversine_arrays, zoom_footprint
from geoprice.poi import PoiIndex, PoiRecord, featurize, featurize_dataset
from geoprice.regress import (
    EstimatorSpec,
    fit_ols,
    mlp_init,
    mlp_loss_and_grads,
    r2,
    rmse,
)
from geoprice.sar import DesignMatrix, fit_sar_ml, predict, solve_power_series
from geoprice.synth import gen_nonlinear_city, gen_sar_data


def _verdict(name: str, ok: bool, detail: str = "") -> None:
    print(f"[ACCEPT] {name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def city():
    return gen_nonlinear_city(2000, n_poi=4000, seed=0)


@pytest.fixture(scope="module")
def city_split(city):
    return split(city.dataset, test_frac=0.10, seed=0)


@pytest.fixture(scope="module")
def city_poi_counts(city):
    index = PoiIndex(city.poi, city.tags)
    return featurize_dataset(city.dataset, index, r=2.0), index.tags


# ---------------------------------------------------------------- sar


def test_sar_parameter_recovery_across_seeds():
    beta_true = np.array([1.0, 2.0, -1.0])
    t0 = time.monotonic()
    hits = 0
    for seed in range(20):
        sample = gen_sar_data(500, 0.5, beta_true, sigma=0.1, w_spec="knn:5", seed=seed)
        model = fit_sar_ml(sample.design, sample.y, sample.w)
        if abs(model.rho - 0.5) <= 0.05 and np.all(np.abs(model.beta - beta_true) <= 0.1):
            hits += 1
    elapsed = time.monotonic() - t0
    _verdict(
        "sar-recovery",
        hits >= 18 and elapsed < 30.0,
        f"{hits}/20 seeds within rho±0.05, beta±0.1 in {elapsed:.1f}s (budget 30s)",
    )


def test_sar_rho_zero_collapses_to_ols():
    sample = gen_sar_data(500, 0.0, [1.0, 2.0, -1.0], sigma=0.1, w_spec="knn:5", seed=1)
    free = fit_sar_ml(sample.design, sample.y, sample.w)
    fixed = fit_sar_ml(sample.design, sample.y, sample.w, rho_fixed=0.0)
    ols = fit_ols(sample.design.X, sample.y, sample.design.names)
    gap = float(np.abs(fixed.beta - ols.beta).max())
    _verdict(
        "sar-degenerate",
        abs(free.rho) < 0.03 and gap < 1e-6,
        f"|rho_hat|={abs(free.rho):.4f} (<0.03), max|beta-ols|={gap:.2e} (<1e-6)",
    )


def test_power_series_matches_direct_solver():
    sample = gen_sar_data(200, 0.7, [1.0, 0.5], sigma=1.0, w_spec="knn:5", seed=3)
    w = sample.w
    b = sample.design.X @ np.array([1.0, 0.5]) + sample.eps
    direct = sample.y  # generator solved (I - rho W) y = b directly
    series, terms = solve_power_series(0.7, w, b)
    gap = float(np.abs(series - direct).max())
    raised = 0
    for bad in (1.0, -1.0, 1.3):
        try:
            solve_power_series(bad, w, b)
        except NumericError:
            raised += 1
    _verdict(
        "power-series",
        gap < 1e-6 and raised == 3,
        f"max|series-direct|={gap:.2e} (<1e-6) at {terms} terms; divergence raised {raised}/3",
    )


# ---------------------------------------------------------------- geometry


def _circumcircle_edges(pts: np.ndarray) -> set:
    """Brute force oracle: edges of every empty-circumcircle triangle."""
    n = pts.shape[0]
    trips = np.array(list(itertools.combinations(range(n), 3)))
    a, b, c = pts[trips[:, 0]], pts[trips[:, 1]], pts[trips[:, 2]]
    d = 2.0 * (
        a[:, 0] * (b[:, 1] - c[:, 1])
        + b[:, 0] * (c[:, 1] - a[:, 1])
        + c[:, 0] * (a[:, 1] - b[:, 1])
    )
    ok = np.abs(d) > 1e-14
    d = np.where(ok, d, 1.0)
    a2 = (a * a).sum(axis=1)
    b2 = (b * b).sum(axis=1)
    c2 = (c * c).sum(axis=1)
    ux = (a2 * (b[:, 1] - c[:, 1]) + b2 * (c[:, 1] - a[:, 1]) + c2 * (a[:, 1] - b[:, 1])) / d
    uy = (a2 * (c[:, 0] - b[:, 0]) + b2 * (a[:, 0] - c[:, 0]) + c2 * (b[:, 0] - a[:, 0])) / d
    r2_ = (a[:, 0] - ux) ** 2 + (a[:, 1] - uy) ** 2
    dist2 = (pts[None, :, 0] - ux[:, None]) ** 2 + (pts[None, :, 1] - uy[:, None]) ** 2
    rows = np.arange(trips.shape[0])[:, None]
    dist2[rows, trips] = np.inf
    empty = ok & np.all(dist2 >= r2_[:, None] * (1.0 - 1e-9), axis=1)
    edges = set()
    for i, j, k in trips[empty]:
        edges.add((int(i), int(j)))
        edges.add((int(i), int(k)))
        edges.add((int(j), int(k)))
    return edges


def test_delaunay_matches_circumcircle_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    checked = 0
    for _ in range(100):
        n = int(rng.integers(4, 51))
        lats = rng.uniform(51.3, 51.7, n)
        lons = rng.uniform(-0.4, 0.2, n)
        pts = [GeoPoint(la, lo) for la, lo in zip(lats, lons)]
        w = build_delaunay(pts)
        got = {
            (i, int(j))
            for i in range(n)
            for j in w.indices[w.indptr[i]:w.indptr[i + 1]]
            if i < j
        }
        want = _circumcircle_edges(_project_azimuthal(lats, lons))
        assert got == want, f"edge mismatch at n={n}"
        checked += 1
    _verdict(
        "delaunay-oracle",
        checked == 100,
        f"{checked}/100 point sets (n<=50) match exactly in {time.monotonic() - t0:.1f}s",
    )


def test_poi_counts_match_linear_scan():
    rng = np.random.default_rng(99)
    tags = ("cafe", "school", "park", "station", "gym", "bank", "bar", "library")
    lats = rng.uniform(51.3, 51.7, 10_000)
    lons = rng.uniform(-0.4, 0.2, 10_000)
    owner = rng.integers(0, len(tags), 10_000)
    records = [
        PoiRecord(GeoPoint(la, lo), tags[t]) for la, lo, t in zip(lats, lons, owner)
    ]
    index = PoiIndex(records, tags)
    exact = 0
    for _ in range(100):
        q = GeoPoint(rng.uniform(51.3, 51.7), rng.uniform(-0.4, 0.2))
        r = float(rng.uniform(0.1, 5.0))
        got = featurize(q, r, index)
        want = np.zeros(len(index.tags), dtype=np.int64)
        for j, tag in enumerate(index.tags):
            sel = owner == tags.index(tag)
            d = haversine_arrays(q.lat, q.lon, lats[sel], lons[sel])
            want[j] = int((d < r).sum())
        if np.array_equal(got, want):
            exact += 1
    # boundary: a record exactly r away is excluded (strict inequality).
    # The count as a function of r must step up one float past the
    # record's own distance, not at it.
    q = GeoPoint(51.5, -0.1)
    target = records[0]
    r_edge = haversine(q, target.location)
    at_edge = index.count(target.tag, q, r_edge)
    below = index.count(target.tag, q, float(np.nextafter(r_edge, 0.0)))
    above = index.count(target.tag, q, float(np.nextafter(r_edge, np.inf)))
    _verdict(
        "poi-oracle",
        exact == 100 and at_edge == below and above == at_edge + 1,
        f"{exact}/100 queries integer-exact; count {below}/{at_edge}/{above} "
        f"one ulp below/at/above d=r (strict boundary)",
    )


REFERENCE_FOOTPRINTS_KM2 = (3.175, 0.794, 0.199, 0.048, 0.012, 0.003)
LONDON_LAT = 51.5074


def _footprint_errors():
    areas = [zoom_footprint(z, LONDON_LAT, 600) for z in range(15, 21)]
    return [
        (z, got, ref, abs(got - ref) / ref)
        for z, got, ref in zip(range(15, 21), areas, REFERENCE_FOOTPRINTS_KM2)
    ]


@pytest.mark.xfail(
    strict=True,
    reason=(
        "the reference series itself breaks exact quartering: 3.175/0.048 = 66.1 "
        "while any cos^2 resolution model gives exactly 64, so z=18 cannot land "
        "within 2% at a latitude that also matches z=15; at 51.5074 it sits 3.6% off"
    ),
)
def test_zoom_footprints_match_reference_within_2pct():
    rows = _footprint_errors()
    bad = [(z, err) for z, _, _, err in rows[:4] if err > 0.02]
    bad += [(z, err) for z, _, _, err in rows[4:] if err > 0.10]
    _verdict(
        "zoom-footprints",
        not bad,
        "; ".join(f"z{z} off {err:.1%}" for z, err in bad) or "all within tolerance",
    )


def test_zoom_footprints_consistent_agreement():
    rows = _footprint_errors()
    by_zoom = {z: err for z, _, _, err in rows}
    ok = (
        all(by_zoom[z] <= 0.02 for z in (15, 16, 17))
        and 0.02 < by_zoom[18] <= 0.05
        and all(by_zoom[z] <= 0.10 for z in (19, 20))
    )
    _verdict(
        "zoom-footprints-actual",
        ok,
        ", ".join(f"z{z}={err:.2%}" for z, err in sorted(by_zoom.items())),
    )


# ---------------------------------------------------------------- metrics


def test_metric_identities():
    y = np.array([3.0, 1.0, 4.0, 1.5])
    perfect = r2(y, y)
    mean_pred = r2(y, np.full(4, y.mean()))
    hand_rmse = rmse(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 4.0]))
    hand_r2 = r2(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 4.0]))
    ok = (
        perfect == 1.0
        and abs(mean_pred) <= 1e-12
        and abs(hand_rmse - 0.57735) <= 1e-5
        and abs(hand_r2 - 0.5) <= 1e-12
    )
    _verdict(
        "metric-identities",
        ok,
        f"perfect r2={perfect!r}, mean r2={mean_pred:.1e}, "
        f"rmse={hand_rmse:.6f} (0.57735±1e-5), r2={hand_r2!r} (0.5)",
    )


def test_mlp_gradient_check():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(24, 5))
    y = rng.normal(size=24)
    params = mlp_init(5, (8, 6), rng)
    _, grads = mlp_loss_and_grads(params, X, y)
    h = 1e-6
    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.ravel()
        for idx in range(0, flat.size, max(1, flat.size // 12)):
            orig = flat[idx]
            flat[idx] = orig + h
            up, _ = mlp_loss_and_grads(params, X, y)
            flat[idx] = orig - h
            dn, _ = mlp_loss_and_grads(params, X, y)
            flat[idx] = orig
            numeric = (up - dn) / (2.0 * h)
            analytic = grads[pi].ravel()[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    _verdict("mlp-gradient", worst < 1e-4, f"max relative error {worst:.2e} (<1e-4)")


# ---------------------------------------------------------------- city trends


def test_error_ordering_across_model_families(city, city_split, city_poi_counts):
    d = city_split
    poi_block, poi_tags = city_poi_counts
    tr_mask, te_mask = d.train_mask(), d.test_mask()
    poi_aligned = poi_block  # computed on the same dataset ordering

    tr = d.take(tr_mask, "train subset")
    te = d.take(te_mask, "test subset")
    w_tr = build_delaunay(tr.points()).row_normalize()
    sar = fit_sar_ml(DesignMatrix.from_features(tr.ha_block(), HA_NAMES), tr.prices(), w_tr)
    w_te = build_delaunay(te.points()).row_normalize()
    sar_pred = predict(sar, DesignMatrix.from_features(te.ha_block(), HA_NAMES), w_te)
    rmse_sar = rmse(te.prices(), sar_pred)

    all_zooms = tuple(range(15, 21))
    ols = evaluate_fusion(
        d,
        FusionSpec(use_ha=True, zooms=all_zooms, use_poi=True),
        EstimatorSpec(kind="linear", seed=0),
        city.stores,
        poi_aligned,
        poi_tags,
        n_runs=1,
    )
    rf = evaluate_fusion(
        d,
        FusionSpec(use_ha=True, zooms=all_zooms),
        EstimatorSpec(kind="random_forest", seed=0),
        city.stores,
        n_runs=1,
    )
    ordered = rmse_sar > ols.rmse_mean > rf.rmse_mean
    big_drop = rf.rmse_mean <= 0.70 * rmse_sar
    _verdict(
        "model-family-ordering",
        ordered and big_drop,
        f"rmse sar={rmse_sar:.0f} > ols={ols.rmse_mean:.0f} > rf={rf.rmse_mean:.0f}; "
        f"rf/sar={rf.rmse_mean / rmse_sar:.3f} (<=0.70)",
    )


def test_attribute_image_feature_complementarity(city, city_split):
    d = city_split
    rf = EstimatorSpec(kind="random_forest", seed=0)
    all_zooms = tuple(range(15, 21))
    ha = evaluate_fusion(d, FusionSpec(use_ha=True), rf, n_runs=1)
    df = evaluate_fusion(
        d, FusionSpec(use_ha=False, zooms=all_zooms), rf, city.stores, n_runs=1
    )
    both = evaluate_fusion(
        d, FusionSpec(use_ha=True, zooms=all_zooms), rf, city.stores, n_runs=1
    )
    floor = max(ha.r2_mean, df.r2_mean) + 0.05
    _verdict(
        "feature-complementarity",
        both.r2_mean > floor,
        f"r2 ha={ha.r2_mean:.3f}, df={df.r2_mean:.3f}, ha+df={both.r2_mean:.3f} "
        f"(> max+0.05 = {floor:.3f})",
    )


def test_zoom_ablation_improves_over_finest_alone(city, city_split):
    rows = ablate_zooms(
        city_split,
        city.stores,
        EstimatorSpec(kind="random_forest", seed=0),
        n_runs=10,
        zoom_sets=((20,), tuple(range(15, 21))),
    )
    finest = rows[0].report.rmse_mean
    full = rows[1].report.rmse_mean
    _verdict(
        "zoom-ablation",
        full <= 0.9 * finest,
        f"rmse all-zooms={full:.0f} vs z20-only={finest:.0f}, "
        f"ratio {full / finest:.3f} (<=0.9), mean over 10 runs",
    )


# ---------------------------------------------------------------- pipeline


E2E_CONFIG = """\
listings = city/listings.csv
poi = city/poi.csv
tags = city/tags.txt
features_dir = city/features
out_dir = out
seed = 0
synth_n = 2000
synth_poi = 4000
zooms = 15,16,17,18,19,20
estimator = rf
w = delaunay
test_frac = 0.10
"""

E2E_CHAIN = ("synth", "split", "build-w", "fit-sar", "train", "evaluate", "report")


def _run_chain(cfg_path) -> float:
    from geoprice.cli import main

    t0 = time.monotonic()
    for command in E2E_CHAIN:
        code = main([command, "--config", str(cfg_path)])
        assert code == 0, f"{command} exited {code}"
    return time.monotonic() - t0


def test_pipeline_rerun_bit_identical_under_budget(tmp_path):
    import hashlib

    cfg = tmp_path / "run.cfg"
    cfg.write_text(E2E_CONFIG)
    first_s = _run_chain(cfg)

    paths = []
    for sub in ("city", "city/features", "out"):
        base = tmp_path / sub
        paths += [base / f for f in os.listdir(base) if (base / f).is_file()]
    digests = {p: hashlib.sha256(p.read_bytes()).hexdigest() for p in paths}

    second_s = _run_chain(cfg)
    changed = [p.name for p, h in digests.items() if hashlib.sha256(p.read_bytes()).hexdigest() != h]
    ok = not changed and first_s < 60.0 and second_s < 60.0
    _verdict(
        "pipeline-determinism",
        ok,
        f"{len(digests)} files bit-identical after rerun; "
        f"runs {first_s:.1f}s / {second_s:.1f}s (budget 60s each)"
        + (f"; changed: {changed}" if changed else ""),
    )
