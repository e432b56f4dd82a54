"""Race the model families on one synthetic city.

The city's price law is deliberately nonlinear and multi-scale, so the
ranking it produces is the story: a spatial lag model on house
attributes alone trails a linear fit on the fused feature set, and a
random forest on attributes plus image features beats both. Numbers
are on the held out tenth of listings.
"""

import numpy as np

from geoprice.contiguity import build_delaunay
from geoprice.dataset import HA_NAMES, split
from geoprice.features import FusionSpec, evaluate_fusion
from geoprice.poi import PoiIndex, featurize_dataset
from geoprice.regress import EstimatorSpec, rmse
from geoprice.sar import DesignMatrix, fit_sar_ml, predict
from geoprice.synth import gen_nonlinear_city


def main():
    city = gen_nonlinear_city(2000, n_poi=4000, seed=0)
    d = split(city.dataset, test_frac=0.10, seed=0)
    index = PoiIndex(city.poi, city.tags)
    poi_block = featurize_dataset(d, index, r=2.0)
    zooms = city.zooms

    # spatial lag on attributes only, Delaunay W built per side
    tr = d.take(d.train_mask(), "train subset")
    te = d.take(d.test_mask(), "test subset")
    sar = fit_sar_ml(
        DesignMatrix.from_features(tr.ha_block(), HA_NAMES),
        tr.prices(),
        build_delaunay(tr.points()).row_normalize(),
    )
    sar_pred = predict(
        sar,
        DesignMatrix.from_features(te.ha_block(), HA_NAMES),
        build_delaunay(te.points()).row_normalize(),
    )
    rmse_sar = rmse(te.prices(), sar_pred)
    print(f"spatial lag, attributes only:   rho_hat = {sar.rho:.3f}, "
          f"test rmse = {rmse_sar:9.0f}")

    ols = evaluate_fusion(
        d,
        FusionSpec(use_ha=True, zooms=zooms, use_poi=True),
        EstimatorSpec(kind="linear", seed=0),
        city.stores,
        poi_block,
        index.tags,
        n_runs=1,
    )
    print(f"linear, attributes+image+poi:   test rmse = {ols.rmse_mean:9.0f}, "
          f"r2 = {ols.r2_mean:.3f}")

    rf = evaluate_fusion(
        d,
        FusionSpec(use_ha=True, zooms=zooms),
        EstimatorSpec(kind="random_forest", seed=0),
        city.stores,
        n_runs=1,
    )
    print(f"forest, attributes+image:       test rmse = {rf.rmse_mean:9.0f}, "
          f"r2 = {rf.r2_mean:.3f}")
    print()
    print(f"forest error is {100.0 * (1.0 - rf.rmse_mean / rmse_sar):.0f}% "
          f"below the spatial lag model")

    # neither block alone explains what the two do together
    est = EstimatorSpec(kind="random_forest", seed=0)
    ha = evaluate_fusion(d, FusionSpec(use_ha=True), est, n_runs=1)
    df = evaluate_fusion(d, FusionSpec(use_ha=False, zooms=zooms), est, city.stores, n_runs=1)
    both = evaluate_fusion(d, FusionSpec(use_ha=True, zooms=zooms), est, city.stores, n_runs=1)
    print()
    print("forest r2 by feature block:")
    print(f"  attributes alone   {ha.r2_mean:.3f}")
    print(f"  image alone        {df.r2_mean:.3f}")
    print(f"  both               {both.r2_mean:.3f}  "
          f"(+{both.r2_mean - max(ha.r2_mean, df.r2_mean):.3f} over the better single block)")


if __name__ == "__main__":
    main()
