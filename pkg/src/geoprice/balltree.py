"""A metric ball tree over latitude/longitude points.

Nodes are balls (center, radius) under great-circle distance. Queries
prune with the triangle inequality: a subtree whose ball lies entirely
at or beyond the query radius contributes nothing, one entirely inside
contributes all its members without further distance work.

Construction is deterministic: splits pivot on the two mutually far
points found from the node's first member, ties resolve to the lower
position, and empty splits fall back to an order split, so the same
input always builds the same tree.
"""

from __future__ import annotations

import numpy as np

from .geo import haversine_arrays

LEAF_SIZE = 32


class BallTree:
    def __init__(self, lats, lons, leaf_size: int = LEAF_SIZE):
        lats = np.asarray(lats, dtype=np.float64)
        lons = np.asarray(lons, dtype=np.float64)
        if lats.ndim != 1 or lats.shape != lons.shape:
            raise ValueError("lats and lons must be 1-d arrays of equal length")
        if lats.size == 0:
            raise ValueError("cannot build a ball tree over zero points")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.lats = lats
        self.lons = lons
        self.leaf_size = int(leaf_size)
        self.idx = np.arange(lats.size, dtype=np.int64)
        # node-parallel arrays, filled during the recursive build
        self._start: list[int] = []
        self._end: list[int] = []
        self._clat: list[float] = []
        self._clon: list[float] = []
        self._radius: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._build(0, lats.size)
        self.n_nodes = len(self._start)
        # freeze node attributes into arrays so queries can test a whole
        # frontier of nodes in one vector call
        self._start = np.array(self._start, dtype=np.int64)
        self._end = np.array(self._end, dtype=np.int64)
        self._clat = np.array(self._clat, dtype=np.float64)
        self._clon = np.array(self._clon, dtype=np.float64)
        self._radius = np.array(self._radius, dtype=np.float64)
        self._left = np.array(self._left, dtype=np.int64)
        self._right = np.array(self._right, dtype=np.int64)

    def _center(self, members) -> tuple[float, float]:
        # mean of unit vectors, projected back to the sphere
        la = np.radians(self.lats[members])
        lo = np.radians(self.lons[members])
        x = np.mean(np.cos(la) * np.cos(lo))
        y = np.mean(np.cos(la) * np.sin(lo))
        z = np.mean(np.sin(la))
        norm = np.sqrt(x * x + y * y + z * z)
        if norm < 1e-12:
            # antipodal degenerate cloud; any member serves as center
            return float(self.lats[members[0]]), float(self.lons[members[0]])
        return (
            float(np.degrees(np.arcsin(np.clip(z / norm, -1.0, 1.0)))),
            float(np.degrees(np.arctan2(y, x))),
        )

    def _build(self, lo: int, hi: int) -> int:
        node = len(self._start)
        members = self.idx[lo:hi]
        clat, clon = self._center(members)
        d_center = haversine_arrays(clat, clon, self.lats[members], self.lons[members])
        self._start.append(lo)
        self._end.append(hi)
        self._clat.append(clat)
        self._clon.append(clon)
        self._radius.append(float(d_center.max()))
        self._left.append(-1)
        self._right.append(-1)
        if hi - lo <= self.leaf_size:
            return node
        # pivot pair: farthest point from the node's first member, then
        # the farthest point from that one
        first = members[0]
        d0 = haversine_arrays(self.lats[first], self.lons[first], self.lats[members], self.lons[members])
        a = members[int(np.argmax(d0))]
        da = haversine_arrays(self.lats[a], self.lons[a], self.lats[members], self.lons[members])
        b = members[int(np.argmax(da))]
        db = haversine_arrays(self.lats[b], self.lons[b], self.lats[members], self.lons[members])
        to_left = da <= db  # ties join the first pivot's side
        n_left = int(to_left.sum())
        if n_left == 0 or n_left == hi - lo:
            # coincident or degenerate cloud: split by position instead
            n_left = (hi - lo) // 2
            to_left = np.zeros(hi - lo, dtype=bool)
            to_left[:n_left] = True
        # stable partition keeps construction order-deterministic
        self.idx[lo:hi] = np.concatenate([members[to_left], members[~to_left]])
        mid = lo + n_left
        left = self._build(lo, mid)
        right = self._build(mid, hi)
        self._left[node] = left
        self._right[node] = right
        return node

    def _frontier_walk(self, qlat: float, qlon: float, r: float):
        """Yield (all_inside_nodes, boundary_leaves) level by level.

        Walks the tree breadth first, testing every node on the current
        level in one vectorized distance call. Nodes whose ball lies
        entirely inside the query radius come back whole; leaves the
        radius cuts through come back for member-level testing.
        """
        frontier = np.array([0], dtype=np.int64)
        while frontier.size:
            dc = haversine_arrays(qlat, qlon, self._clat[frontier], self._clon[frontier])
            rad = self._radius[frontier]
            keep = dc - rad < r
            overlap = frontier[keep]
            inside = dc[keep] + rad[keep] < r
            whole = overlap[inside]
            rest = overlap[~inside]
            is_leaf = self._left[rest] < 0
            yield whole, rest[is_leaf]
            split = rest[~is_leaf]
            frontier = np.concatenate([self._left[split], self._right[split]])

    def count_within(self, qlat: float, qlon: float, r: float) -> int:
        """Number of points at strict distance < r km from the query."""
        return int(self.count_within_many([qlat], [qlon], r)[0])

    def count_within_many(self, qlats, qlons, r: float) -> np.ndarray:
        """count_within for a batch of queries in one tree walk.

        All queries descend together; each node prunes its own subset.
        Per-query results are identical to count_within, the batch just
        amortizes the distance calls across queries.
        """
        qlats = np.atleast_1d(np.asarray(qlats, dtype=np.float64))
        qlons = np.atleast_1d(np.asarray(qlons, dtype=np.float64))
        if qlats.shape != qlons.shape or qlats.ndim != 1:
            raise ValueError("query lats and lons must be 1-d and equal length")
        out = np.zeros(qlats.size, dtype=np.int64)
        self._count_many(0, qlats, qlons, np.arange(qlats.size), float(r), out)
        return out

    def _count_many(self, node, qlats, qlons, active, r, out) -> None:
        dc = haversine_arrays(qlats[active], qlons[active], self._clat[node], self._clon[node])
        rad = self._radius[node]
        keep = dc - rad < r
        active, dc = active[keep], dc[keep]
        if active.size == 0:
            return
        inside = dc + rad < r
        out[active[inside]] += self._end[node] - self._start[node]
        rest = active[~inside]
        if rest.size == 0:
            return
        if self._left[node] < 0:
            members = self.idx[self._start[node]:self._end[node]]
            d = haversine_arrays(
                qlats[rest, None], qlons[rest, None], self.lats[members], self.lons[members]
            )
            out[rest] += (d < r).sum(axis=1)
            return
        self._count_many(self._left[node], qlats, qlons, rest, r, out)
        self._count_many(self._right[node], qlats, qlons, rest, r, out)

    def query_radius(self, qlat: float, qlon: float, r: float) -> np.ndarray:
        """Indices of points at strict distance < r km, ascending order."""
        qlat, qlon, r = float(qlat), float(qlon), float(r)
        out: list[np.ndarray] = []
        for whole, leaves in self._frontier_walk(qlat, qlon, r):
            for node in whole:
                out.append(self.idx[self._start[node]:self._end[node]].copy())
            for node in leaves:
                members = self.idx[self._start[node]:self._end[node]]
                d = haversine_arrays(qlat, qlon, self.lats[members], self.lons[members])
                hit = members[d < r]
                if hit.size:
                    out.append(hit)
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(out))
