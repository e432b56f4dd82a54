"""Spatial contiguity matrices: construction, normalization, file IO.

A contiguity matrix W is a sparse n x n nonnegative matrix with a zero
diagonal whose pattern says which observations are neighbors. Three
builders are provided:

* k nearest neighbors (asymmetric in general),
* all points strictly within a radius (symmetric),
* Delaunay triangulation adjacency (symmetric), computed by incremental
  insertion with a super-triangle on an azimuthal equidistant projection
  of the points.

Row normalization divides every nonempty row by its sum, after which
row sums are 1 and the spectral radius is at most 1.

On disk W is stored as Matrix Market coordinate format, raw 0/1 weights
before normalization; normalization is reapplied after loading.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .balltree import BallTree
from .errors import DataError, NumericError
from .geo import EARTH_RADIUS_KM, haversine_arrays

# above this order, dense eigenvalue extraction is off the table and
# likelihood code must fall back to sparse factorizations
EIG_DENSE_LIMIT = 5000

ROW_SUM_TOL = 1e-12


@dataclass
class SparseContiguity:
    """CSR weight matrix. Treat instances as immutable once built."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _eigvals: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.n < 1:
            raise DataError("contiguity matrix must have at least one row")
        if self.indptr.shape != (self.n + 1,) or self.indptr[0] != 0:
            raise DataError("malformed indptr")
        if self.indptr[-1] != self.indices.size or self.indices.size != self.data.size:
            raise DataError("indices and data must both match indptr[-1]")
        if np.any(np.diff(self.indptr) < 0):
            raise DataError("indptr must be nondecreasing")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.n:
                raise DataError("column index out of range")
            if np.any(self.data < 0):
                raise DataError("negative weight")
            if not np.all(np.isfinite(self.data)):
                raise DataError("non-finite weight")
        for i in range(self.n):
            row = self.indices[self.indptr[i]:self.indptr[i + 1]]
            if row.size:
                if np.any(np.diff(row) <= 0):
                    raise DataError(f"row {i}: columns must be strictly increasing")
                if np.any(row == i):
                    raise DataError(f"row {i}: nonzero diagonal")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.data.copy(), self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n)
        )

    @classmethod
    def from_scipy(cls, m) -> "SparseContiguity":
        m = sp.csr_matrix(m)
        m.sort_indices()
        m.sum_duplicates()
        m.eliminate_zeros()
        return cls(m.shape[0], m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.float64))

    @classmethod
    def from_edges(cls, n: int, rows, cols, vals=None) -> "SparseContiguity":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if vals is None:
            vals = np.ones(rows.size, dtype=np.float64)
        m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        return cls.from_scipy(m)

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.n)
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        np.add.at(out, rows, self.data)
        return out

    def row_normalize(self) -> "SparseContiguity":
        """Scale each nonempty row to sum 1. Empty rows stay empty."""
        sums = self.row_sums()
        data = self.data.copy()
        for i in range(self.n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            if hi > lo:
                s = sums[i]
                if s <= 0:
                    raise NumericError(f"row {i} has nonzero pattern but zero weight sum")
                data[lo:hi] /= s
        return SparseContiguity(self.n, self.indptr.copy(), self.indices.copy(), data)

    @property
    def is_row_normalized(self) -> bool:
        sums = self.row_sums()
        nonempty = np.diff(self.indptr) > 0
        return bool(np.all(np.abs(sums[nonempty] - 1.0) <= ROW_SUM_TOL))

    def eigenvalues(self) -> np.ndarray:
        """All eigenvalues (complex), dense path, cached after first call."""
        if self.n > EIG_DENSE_LIMIT:
            raise NumericError(
                f"dense eigenvalues refused for n={self.n} > {EIG_DENSE_LIMIT}; "
                "use the sparse log-determinant path"
            )
        if self._eigvals is None:
            dense = self.to_scipy().toarray()
            self._eigvals = np.linalg.eigvals(dense)
        return self._eigvals

    def checksum(self) -> str:
        """Stable digest of shape, pattern and weights."""
        h = hashlib.sha256()
        h.update(str(self.n).encode())
        h.update(self.indptr.tobytes())
        h.update(self.indices.tobytes())
        h.update(self.data.tobytes())
        return h.hexdigest()[:16]

    def is_symmetric_pattern(self) -> bool:
        a = self.to_scipy()
        a.data = np.ones_like(a.data)
        return (a != a.T).nnz == 0


def _pairwise_km(lats, lons) -> np.ndarray:
    return haversine_arrays(lats[:, None], lons[:, None], lats[None, :], lons[None, :])


def build_knn(points, k: int) -> SparseContiguity:
    """k nearest neighbors under great-circle distance, ties to the
    lower index. Weights are 1; the matrix is generally asymmetric."""
    n = len(points)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k >= n:
        raise DataError(f"k={k} needs at least k+1={k + 1} points, got {n}")
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])
    d = _pairwise_km(lats, lons)
    np.fill_diagonal(d, np.inf)
    rows = []
    cols = []
    order_key = np.arange(n)
    for i in range(n):
        # lexsort: distance first, index breaks ties deterministically
        order = np.lexsort((order_key, d[i]))
        rows.append(np.full(k, i, dtype=np.int64))
        cols.append(np.sort(order[:k]).astype(np.int64))
    return SparseContiguity.from_edges(n, np.concatenate(rows), np.concatenate(cols))


def build_radius(points, r: float) -> SparseContiguity:
    """All pairs strictly closer than r km. Symmetric by construction."""
    n = len(points)
    if r <= 0:
        raise DataError(f"radius must be positive, got {r!r}")
    if n < 1:
        raise DataError("no points")
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])
    tree = BallTree(lats, lons)
    rows = []
    cols = []
    for i in range(n):
        hit = tree.query_radius(lats[i], lons[i], r)
        hit = hit[hit != i]
        if hit.size:
            rows.append(np.full(hit.size, i, dtype=np.int64))
            cols.append(hit)
    if not rows:
        return SparseContiguity(n, np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0))
    return SparseContiguity.from_edges(n, np.concatenate(rows), np.concatenate(cols))


def _project_azimuthal(lats, lons) -> np.ndarray:
    """Azimuthal equidistant projection (km) about the spherical mean."""
    la = np.radians(lats)
    lo = np.radians(lons)
    x = np.mean(np.cos(la) * np.cos(lo))
    y = np.mean(np.cos(la) * np.sin(lo))
    z = np.mean(np.sin(la))
    norm = np.sqrt(x * x + y * y + z * z)
    if norm < 1e-12:
        raise NumericError("projection center undefined for this point cloud")
    lat0 = np.arcsin(np.clip(z / norm, -1, 1))
    lon0 = np.arctan2(y, x)
    c = np.arccos(
        np.clip(np.sin(lat0) * np.sin(la) + np.cos(lat0) * np.cos(la) * np.cos(lo - lon0), -1, 1)
    )
    k = np.where(c > 1e-15, c / np.maximum(np.sin(c), 1e-300), 1.0)
    px = EARTH_RADIUS_KM * k * np.cos(la) * np.sin(lo - lon0)
    py = EARTH_RADIUS_KM * k * (
        np.cos(lat0) * np.sin(la) - np.sin(lat0) * np.cos(la) * np.cos(lo - lon0)
    )
    return np.column_stack([px, py])


IN_CIRCLE_TOL = 1e-9


def _circumcircle(pts, tri):
    """Circumcenter and squared radius of triangle tri over pts (m, 2)."""
    ax, ay = pts[tri[0]]
    bx, by = pts[tri[1]]
    cx, cy = pts[tri[2]]
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        raise NumericError("degenerate triangle during triangulation")
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    r2 = (ax - ux) ** 2 + (ay - uy) ** 2
    return ux, uy, r2


# super-triangle vertex directions; the triangulation treats these
# vertices symbolically (as limits receding to infinity), so their
# actual placement never enters an in-circle decision
_SUPER_DIRS = np.array(
    [
        [0.0, 2.0],
        [-1.7320508075688772, -1.0],
        [1.7320508075688772, -1.0],
    ]
)


def _delaunay_edges(pts: np.ndarray) -> set[tuple[int, int]]:
    """Edge set of the Delaunay triangulation of pts (m >= 3, planar km).

    Incremental insertion: every new point deletes the triangles whose
    circumcircle contains it and retriangulates the boundary cavity.
    Triangles touching the enclosing super-triangle get symbolic
    in-circle tests (the half-plane limit as those vertices recede to
    infinity); a finite placement would bow the test circle across the
    hull and drop valid edges. Super vertices are stripped at the end.
    """
    m = pts.shape[0]
    span = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-9)
    base = pts.mean(axis=0)
    allpts = np.vstack([pts, base + 64.0 * span * _SUPER_DIRS])
    cap = 4 * m + 16
    tri = np.empty((cap, 3), dtype=np.int64)
    # per-slot in-circle data, by kind:
    #   0: finite circumcircle, p inside iff |p - cc|^2 <= cr2 (with slack)
    #   1: half-plane, p inside iff n.p > off; ties fall back to the
    #      stored segment (inside iff strictly between its endpoints)
    #   2: whole plane (the initial all-super triangle)
    kind = np.empty(cap, dtype=np.int8)
    ccx = np.empty(cap)
    ccy = np.empty(cap)
    cr2 = np.empty(cap)
    seg = np.zeros((cap, 4))
    alive = np.zeros(cap, dtype=bool)

    def add_triangle(slot, a, b, c):
        tri[slot] = (a, b, c)
        sup = [v for v in (a, b, c) if v >= m]
        if not sup:
            ux, uy, r2 = _circumcircle(allpts, (a, b, c))
            kind[slot] = 0
            ccx[slot] = ux
            ccy[slot] = uy
            cr2[slot] = r2
        elif len(sup) == 1:
            u, v = (x for x in (a, b, c) if x < m)
            ux, uy = allpts[u]
            tx, ty = allpts[v] - allpts[u]
            dx, dy = _SUPER_DIRS[sup[0] - m]
            side = tx * dy - ty * dx
            if side == 0.0:  # edge parallel to the recede direction
                side = tx * (base[1] - uy) - ty * (base[0] - ux)
            sgn = 1.0 if side > 0.0 else -1.0
            kind[slot] = 1
            ccx[slot] = -sgn * ty
            ccy[slot] = sgn * tx
            cr2[slot] = ccx[slot] * ux + ccy[slot] * uy
            seg[slot] = (ux, uy, tx, ty)
        elif len(sup) == 2:
            u = next(x for x in (a, b, c) if x < m)
            nx, ny = _SUPER_DIRS[sup[0] - m] + _SUPER_DIRS[sup[1] - m]
            kind[slot] = 1
            ccx[slot] = nx
            ccy[slot] = ny
            cr2[slot] = nx * allpts[u][0] + ny * allpts[u][1]
            seg[slot] = (allpts[u][0], allpts[u][1], 0.0, 0.0)
        else:
            kind[slot] = 2
        alive[slot] = True

    def on_line_inside(slot, px, py):
        # point exactly on a half-plane boundary: inside only when it
        # splits the stored real segment (collinear hull inputs)
        ux, uy, tx, ty = seg[slot]
        along = (px - ux) * tx + (py - uy) * ty
        return 0.0 < along < tx * tx + ty * ty

    free: list[int] = list(range(cap - 1, 0, -1))
    add_triangle(0, m, m + 1, m + 2)
    ntri_high = 1

    for p in range(m):
        px, py = allpts[p]
        live = np.nonzero(alive[:ntri_high])[0]
        k = kind[live]
        inside = np.empty(live.size, dtype=bool)
        fin = k == 0
        lf = live[fin]
        inside[fin] = (px - ccx[lf]) ** 2 + (py - ccy[lf]) ** 2 <= cr2[lf] * (
            1.0 + IN_CIRCLE_TOL
        )
        half = k == 1
        lh = live[half]
        margin = ccx[lh] * px + ccy[lh] * py - cr2[lh]
        inside[half] = margin > 0.0
        for w in np.nonzero(margin == 0.0)[0]:
            inside[np.nonzero(half)[0][w]] = on_line_inside(lh[w], px, py)
        inside[k == 2] = True
        bad = live[inside]
        if bad.size == 0:
            raise NumericError("point fell outside every circumcircle; triangulation lost")
        edge_count: dict[tuple[int, int], int] = {}
        edge_dir: dict[tuple[int, int], tuple[int, int]] = {}
        for t in bad:
            a, b, c = tri[t]
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                edge_count[key] = edge_count.get(key, 0) + 1
                edge_dir[key] = (u, v)
            alive[t] = False
            free.append(int(t))
        for key, cnt in edge_count.items():
            if cnt != 1:
                continue
            u, v = edge_dir[key]
            slot = free.pop()
            add_triangle(slot, u, v, p)
            if slot >= ntri_high:
                ntri_high = slot + 1

    edges: set[tuple[int, int]] = set()
    for t in np.nonzero(alive[:ntri_high])[0]:
        a, b, c = (int(x) for x in tri[t])
        if a >= m or b >= m or c >= m:
            continue
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((u, v) if u < v else (v, u))
    return edges


def build_delaunay(points) -> SparseContiguity:
    """Delaunay adjacency over an azimuthal equidistant projection.

    Exact duplicate coordinates are collapsed before triangulating;
    each duplicate then inherits its representative's neighbor set (and
    the neighbors gain the duplicate back, keeping the pattern
    symmetric). Collinear inputs are rejected.
    """
    n = len(points)
    if n < 3:
        raise DataError(f"triangulation needs >= 3 points, got {n}")
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])
    coords = np.column_stack([lats, lons])
    uniq, rep = np.unique(coords, axis=0, return_inverse=True)
    m = uniq.shape[0]
    if m < 3:
        raise DataError(f"triangulation needs >= 3 distinct points, got {m}")
    pts = _project_azimuthal(uniq[:, 0], uniq[:, 1])
    centered = pts - pts.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] <= 1e-12 * max(svals[0], 1.0):
        raise DataError("points are collinear; triangulation undefined")
    edges = _delaunay_edges(pts)

    # map unique-level edges back to the original indexing
    originals: list[list[int]] = [[] for _ in range(m)]
    for i, r in enumerate(rep):
        originals[r].append(i)
    rows: list[int] = []
    cols: list[int] = []
    for u, v in edges:
        for i in originals[u]:
            for j in originals[v]:
                rows.append(i)
                cols.append(j)
                rows.append(j)
                cols.append(i)
    if not rows:
        raise NumericError("triangulation produced no edges")
    return SparseContiguity.from_edges(n, rows, cols)


def restrict_columns(w: SparseContiguity, keep: np.ndarray) -> SparseContiguity:
    """Zero out columns where keep is False, preserving rows.

    Used to stop test observations from serving as anyone's neighbor;
    rows left with no neighbors stay empty (zero padded).
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (w.n,):
        raise DataError("keep mask length mismatch")
    m = w.to_scipy().tolil()
    drop = np.nonzero(~keep)[0]
    for j in drop:
        m[:, j] = 0
    return SparseContiguity.from_scipy(m.tocsr())


def lag_autocorrelation(w: SparseContiguity, y: np.ndarray) -> float:
    """Centered spatial lag correlation (y-ybar)'W(y-ybar) / (y-ybar)'(y-ybar)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (w.n,):
        raise DataError("y length mismatch")
    yc = y - y.mean()
    denom = float(yc @ yc)
    if denom == 0.0:
        raise NumericError("constant y has no autocorrelation")
    return float(yc @ (w.to_scipy() @ yc)) / denom


def save_matrix_market(w: SparseContiguity, path) -> None:
    """Write the raw pattern as Matrix Market 'real general' coordinates.

    Normalized weights are deliberately not persisted: the file keeps
    0/1 structure and loaders renormalize, so the artifact is stable
    under renumbering of float formats.
    """
    m = w.to_scipy().tocoo()
    raw = sp.coo_matrix(
        (np.ones(m.nnz, dtype=np.float64), (m.row, m.col)), shape=(w.n, w.n)
    )
    scipy.io.mmwrite(str(path), raw, symmetry="general", precision=17)


def load_matrix_market(path, normalize: bool = True) -> SparseContiguity:
    m = scipy.io.mmread(str(path))
    if m.shape[0] != m.shape[1]:
        raise DataError(f"{path}: matrix is {m.shape[0]}x{m.shape[1]}, must be square")
    w = SparseContiguity.from_scipy(sp.csr_matrix(m))
    return w.row_normalize() if normalize else w


_BUILDER_GRAMMAR = "knn:<k>, radius:<km> or delaunay"


def builder_from_spec(spec: str):
    """Parse 'knn:10', 'radius:2.0' or 'delaunay' into a builder callable."""
    s = spec.strip()
    if s == "delaunay":
        return build_delaunay
    if s.startswith("knn:"):
        try:
            k = int(s[4:])
        except ValueError:
            raise DataError(f"bad neighbor spec {spec!r}; expected {_BUILDER_GRAMMAR}") from None
        return lambda pts: build_knn(pts, k)
    if s.startswith("radius:"):
        try:
            r = float(s[7:])
        except ValueError:
            raise DataError(f"bad neighbor spec {spec!r}; expected {_BUILDER_GRAMMAR}") from None
        return lambda pts: build_radius(pts, r)
    raise DataError(f"bad neighbor spec {spec!r}; expected {_BUILDER_GRAMMAR}")
