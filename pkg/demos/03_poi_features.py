"""Count amenities around listings and size up image footprints.

Builds the tag indexed point set for a synthetic city, pulls strict
within-radius counts for a few listings, and prints how the counts
grow with the radius. The second half tabulates the ground area a
square map image covers at each zoom level, which is what makes the
coarse zooms neighborhood descriptors and the fine ones parcel
descriptors.
"""

import numpy as np

from geoprice.geo import ZOOM_MAX, ZOOM_MIN, zoom_footprint
from geoprice.poi import PoiIndex, featurize, featurize_dataset
from geoprice.synth import gen_nonlinear_city

CENTER_LAT = 51.5074


def main():
    city = gen_nonlinear_city(600, n_poi=2500, seed=2)
    index = PoiIndex(city.poi, city.tags)
    print(f"{len(city.poi)} pois across {len(index.tags)} tags")
    print()

    pts = city.dataset.points()
    print("counts around one listing as the radius grows:")
    p = pts[0]
    for r in (0.25, 0.5, 1.0, 2.0):
        counts = featurize(p, r, index)
        total = int(counts.sum())
        top = sorted(zip(counts, index.tags), reverse=True)[:3]
        tops = ", ".join(f"{t}={int(c)}" for c, t in top if c > 0)
        print(f"  r = {r:4.2f} km: {total:4d} total ({tops})")
    print()

    block = featurize_dataset(city.dataset, index, r=2.0)
    y = city.dataset.prices()
    print("tag count vs price correlation at r = 2 km:")
    order = np.argsort(-np.abs(np.corrcoef(block.T, y)[-1, :-1]))
    for j in order[:5]:
        c = np.corrcoef(block[:, j], y)[0, 1]
        print(f"  {index.tags[j]:12s} {c:+.3f}")
    print()

    print(f"ground footprint of a 600 px image at latitude {CENTER_LAT}:")
    print("zoom   km^2      side_m")
    for z in range(ZOOM_MIN, ZOOM_MAX + 1):
        a = zoom_footprint(z, CENTER_LAT, 600)
        print(f"{z:4d}   {a:7.3f}   {1000.0 * np.sqrt(a):7.1f}")
    ratio = zoom_footprint(ZOOM_MIN, CENTER_LAT) / zoom_footprint(ZOOM_MAX, CENTER_LAT)
    print(f"z{ZOOM_MIN} covers {ratio:.0f}x the area of z{ZOOM_MAX}")


if __name__ == "__main__":
    main()
