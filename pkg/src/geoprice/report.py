"""Static report graphics: a scatter file and a price heat map.

Both emitters are deterministic down to the byte. The scatter is a
standalone SVG written by hand (no plotting stack), predicted against
true price on log10 axes with the identity diagonal for reference. The
heat map bins listings onto a lat/lon grid, colors cell mean prices on
a fixed three-stop ramp, and saves a PNG through Pillow.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError

SVG_SIZE = 640
SVG_MARGIN = 56
POINT_RADIUS = 2.0

HEAT_EMPTY = (38, 38, 46)  # cells with no listings
# low -> mid -> high price color ramp
HEAT_STOPS = ((38, 66, 138), (222, 206, 80), (196, 46, 30))


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size == 0:
        raise DataError("no points to plot")
    if pred.shape != truth.shape:
        raise DataError(f"{pred.size} predictions vs {truth.size} truths")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise DataError("non-finite values in scatter input")
    return pred, truth


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def scatter_svg(pred, truth, path) -> int:
    """Write a log-log scatter of predicted vs true values.

    Points with a nonpositive coordinate cannot sit on a log axis;
    they are dropped and the count is recorded in the file. Returns
    the number of points drawn.
    """
    pred, truth = _check_pair(pred, truth)
    ok = (pred > 0) & (truth > 0)
    dropped = int((~ok).sum())
    if not ok.any():
        raise DataError("no positive points to plot on log axes")
    x = np.log10(truth[ok])
    y = np.log10(pred[ok])

    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.04 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    span = SVG_SIZE - 2 * SVG_MARGIN

    def sx(v):
        return SVG_MARGIN + (v - lo) / (hi - lo) * span

    def sy(v):
        return SVG_SIZE - SVG_MARGIN - (v - lo) / (hi - lo) * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f"<!-- dropped {dropped} nonpositive points -->",
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
        f'<rect x="{SVG_MARGIN}" y="{SVG_MARGIN}" width="{span}" height="{span}" '
        'fill="none" stroke="#888" stroke-width="1"/>',
    ]
    # decade ticks on both axes
    for d in range(math.ceil(lo), math.floor(hi) + 1):
        px = _fmt(sx(d))
        py = _fmt(sy(d))
        parts.append(
            f'<line x1="{px}" y1="{SVG_SIZE - SVG_MARGIN}" x2="{px}" '
            f'y2="{SVG_SIZE - SVG_MARGIN + 6}" stroke="#444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{px}" y="{SVG_SIZE - SVG_MARGIN + 20}" font-size="11" '
            f'text-anchor="middle" fill="#444">1e{d}</text>'
        )
        parts.append(
            f'<line x1="{SVG_MARGIN - 6}" y1="{py}" x2="{SVG_MARGIN}" y2="{py}" '
            'stroke="#444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{SVG_MARGIN - 9}" y="{py}" font-size="11" text-anchor="end" '
            f'dominant-baseline="middle" fill="#444">1e{d}</text>'
        )
    parts.append(
        f'<line x1="{_fmt(sx(lo))}" y1="{_fmt(sy(lo))}" x2="{_fmt(sx(hi))}" '
        f'y2="{_fmt(sy(hi))}" stroke="#c0392b" stroke-width="1" stroke-dasharray="5,4"/>'
    )
    for xi, yi in zip(x, y):
        parts.append(
            f'<circle cx="{_fmt(sx(xi))}" cy="{_fmt(sy(yi))}" r="{POINT_RADIUS}" '
            'fill="#2c5f8a" fill-opacity="0.55"/>'
        )
    parts.append(
        f'<text x="{SVG_SIZE // 2}" y="{SVG_SIZE - 12}" font-size="13" '
        'text-anchor="middle" fill="#222">true price (log10)</text>'
    )
    parts.append(
        f'<text x="16" y="{SVG_SIZE // 2}" font-size="13" text-anchor="middle" '
        f'fill="#222" transform="rotate(-90 16 {SVG_SIZE // 2})">predicted price (log10)</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return int(ok.sum())


def _ramp(t: np.ndarray) -> np.ndarray:
    """Map t in [0,1] through the three-stop color ramp."""
    t = np.clip(t, 0.0, 1.0)
    out = np.empty(t.shape + (3,), dtype=np.float64)
    a, b, c = (np.array(s, dtype=np.float64) for s in HEAT_STOPS)
    low = t < 0.5
    u = np.where(low, 2.0 * t, 2.0 * t - 1.0)[..., None]
    out[low] = (a + (b - a) * u[low])
    out[~low] = (b + (c - b) * u[~low])
    return np.round(out).astype(np.uint8)


def heatmap_png(lats, lons, values, path, grid: int = 64, cell_px: int = 8) -> None:
    """Color-mapped grid of mean values over the points' bounding box.

    North is up: the first pixel row is the highest-latitude bin. Cells
    containing no points keep a neutral background color.
    """
    from PIL import Image

    lats = np.asarray(lats, dtype=np.float64).ravel()
    lons = np.asarray(lons, dtype=np.float64).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    if lats.size == 0:
        raise DataError("no points to map")
    if not (lats.size == lons.size == values.size):
        raise DataError("lats, lons and values must align")
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite values in heat map input")
    if grid < 2:
        raise DataError(f"grid must be >= 2, got {grid}")

    lat_lo, lat_hi = float(lats.min()), float(lats.max())
    lon_lo, lon_hi = float(lons.min()), float(lons.max())
    lat_span = max(lat_hi - lat_lo, 1e-12)
    lon_span = max(lon_hi - lon_lo, 1e-12)
    gi = np.minimum((lats - lat_lo) / lat_span * grid, grid - 1).astype(np.int64)
    gj = np.minimum((lons - lon_lo) / lon_span * grid, grid - 1).astype(np.int64)

    total = np.zeros((grid, grid))
    count = np.zeros((grid, grid))
    np.add.at(total, (gi, gj), values)
    np.add.at(count, (gi, gj), 1.0)
    filled = count > 0

    img = np.empty((grid, grid, 3), dtype=np.uint8)
    img[:] = np.array(HEAT_EMPTY, dtype=np.uint8)
    if filled.any():
        means = total[filled] / count[filled]
        m_lo, m_hi = float(means.min()), float(means.max())
        t = (means - m_lo) / (m_hi - m_lo) if m_hi > m_lo else np.full(means.shape, 0.5)
        img[filled] = _ramp(t)

    img = np.flipud(img)  # row 0 = northernmost bin
    if cell_px > 1:
        img = np.repeat(np.repeat(img, cell_px, axis=0), cell_px, axis=1)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")
