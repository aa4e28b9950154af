"""Deterministic 3D KD-tree for k-nearest-neighbour and fixed-radius queries.

The tree is built by median splitting on the axis of largest spread, with
ties in coordinate broken by original point index, so identical input always
produces an identical tree. Nodes are stored in flat arrays; leaves hold at
most ``LEAF_SIZE`` points as a contiguous range of ``perm``.

All distance comparisons are done on squared Euclidean distance computed as
``dx*dx + dy*dy + dz*dz`` (see :func:`squared_distances`). Ties in kNN
ordering are broken by the smaller original index.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from aerialseg.errors import SpatialError

LEAF_SIZE = 32


def squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared distances from each row of ``points`` (n, 3) to ``query`` (3,)."""
    dx = points[:, 0] - query[0]
    dy = points[:, 1] - query[1]
    dz = points[:, 2] - query[2]
    return dx * dx + dy * dy + dz * dz


def _as_positions(positions) -> np.ndarray:
    pts = np.ascontiguousarray(positions, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise SpatialError(f"positions must have shape (n, 3), got {pts.shape}")
    if len(pts) == 0:
        raise SpatialError("cannot build a KD-tree from an empty point set")
    if not np.isfinite(pts).all():
        bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
        raise SpatialError(f"non-finite coordinate at point {bad}")
    return pts


def _as_queries(queries) -> np.ndarray:
    qs = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(qs).all():
        raise SpatialError("non-finite query coordinate")
    return qs


def _as_query(query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape != (3,) or not np.isfinite(q).all():
        raise SpatialError(f"query must be a finite 3D point, got {query!r}")
    return q


class KdTree:
    """Immutable KD-tree over a fixed array of 3D points.

    Attributes:
        points: the (n, 3) float64 coordinates, in original order.
        perm: permutation of original indices; each leaf owns ``perm[start:end]``.
        axis, split, left, right, start, end: per-node arrays. ``axis`` is -1
            for leaves, ``left``/``right`` are -1 for leaves.
        lo, hi: per-node (n_nodes, 3) bounding boxes of the points below the node.
    """

    def __init__(self, positions, leaf_size: int = LEAF_SIZE):
        if leaf_size < 1:
            raise SpatialError("leaf_size must be >= 1")
        pts = _as_positions(positions)
        self.points = pts
        self.leaf_size = leaf_size
        self._build()
        for name in ("points", "perm", "axis", "split", "left", "right",
                     "start", "end", "lo", "hi", "leaves"):
            getattr(self, name).setflags(write=False)

    def _build(self) -> None:
        pts = self.points
        n = len(pts)
        perm = np.arange(n, dtype=np.int64)
        axis, split, left, right, start, end, lo, hi = ([] for _ in range(8))

        def new_node(s: int, e: int) -> int:
            sub = pts[perm[s:e]]
            axis.append(-1)
            split.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(s)
            end.append(e)
            lo.append(sub.min(axis=0))
            hi.append(sub.max(axis=0))
            return len(axis) - 1

        stack = [new_node(0, n)]
        while stack:
            node = stack.pop()
            s, e = start[node], end[node]
            if e - s <= self.leaf_size:
                continue
            spread = hi[node] - lo[node]
            ax = int(np.argmax(spread))  # first axis wins on equal spread
            idx = perm[s:e]
            order = np.lexsort((idx, pts[idx, ax]))
            perm[s:e] = idx[order]
            mid = s + (e - s) // 2
            axis[node] = ax
            split[node] = float(pts[perm[mid], ax])
            left[node] = new_node(s, mid)
            right[node] = new_node(mid, e)
            stack.append(right[node])
            stack.append(left[node])

        self.perm = perm
        self.axis = np.asarray(axis, dtype=np.int8)
        self.split = np.asarray(split, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.end = np.asarray(end, dtype=np.int64)
        self.lo = np.asarray(lo, dtype=np.float64).reshape(-1, 3)
        self.hi = np.asarray(hi, dtype=np.float64).reshape(-1, 3)
        self.leaves = np.flatnonzero(self.axis < 0)

    # -- basic properties -------------------------------------------------

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_nodes(self) -> int:
        return len(self.axis)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo[0], self.hi[0]

    def leaf_indices(self, node: int) -> np.ndarray:
        return self.perm[self.start[node]:self.end[node]]

    def same_as(self, other: "KdTree") -> bool:
        """True when both trees have identical structure and point data."""
        names = ("points", "perm", "axis", "split", "left", "right", "start", "end", "lo", "hi")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in names)

    # -- single-point queries ---------------------------------------------

    def _ball(self, q: np.ndarray, r2: float) -> tuple[np.ndarray, np.ndarray]:
        """Original indices and squared distances of points with d2 <= r2."""
        frontier = np.zeros(1, dtype=np.int64)
        found_idx: list[np.ndarray] = []
        found_d2: list[np.ndarray] = []
        while frontier.size:
            lo = self.lo[frontier]
            hi = self.hi[frontier]
            gap = np.maximum(lo - q, 0.0) + np.maximum(q - hi, 0.0)
            near = gap[:, 0] * gap[:, 0] + gap[:, 1] * gap[:, 1] + gap[:, 2] * gap[:, 2]
            frontier = frontier[near <= r2]
            if not frontier.size:
                break
            is_leaf = self.axis[frontier] < 0
            if is_leaf.any():
                idx = self._gather(frontier[is_leaf])
                d2 = squared_distances(self.points[idx], q)
                hit = d2 <= r2
                found_idx.append(idx[hit])
                found_d2.append(d2[hit])
            inner = frontier[~is_leaf]
            frontier = np.concatenate([self.left[inner], self.right[inner]])
        if not found_idx:
            return np.empty(0, dtype=np.int64), np.empty(0)
        return np.concatenate(found_idx), np.concatenate(found_d2)

    def radius_query(self, query, r: float) -> np.ndarray:
        """All original indices within distance ``r`` (inclusive), ascending."""
        q = _as_query(query)
        if not r >= 0:
            raise SpatialError(f"radius must be non-negative, got {r}")
        idx, _ = self._ball(q, float(r) * float(r))
        return np.sort(idx)

    def _anchor(self, q: np.ndarray, k: int) -> int:
        """Deepest node on q's descent path that still holds at least k points."""
        node = 0
        while self.axis[node] >= 0:
            child = self.left[node] if q[self.axis[node]] < self.split[node] else self.right[node]
            if self.end[child] - self.start[child] < k:
                break
            node = child
        return int(node)

    def knn(self, query, k: int, return_distance: bool = False):
        """The ``k`` nearest original indices, by nondecreasing distance.

        Distance ties are broken by smaller original index. With
        ``return_distance`` the Euclidean distances are returned as well.
        """
        q = _as_query(query)
        k = int(k)
        if not 1 <= k <= len(self.points):
            raise SpatialError(f"k must be in [1, {len(self.points)}], got {k}")
        # k actual points give an upper bound on the k-th distance.
        anchor = self._anchor(q, k)
        cand = self.perm[self.start[anchor]:self.end[anchor]]
        d2 = squared_distances(self.points[cand], q)
        bound = np.partition(d2, k - 1)[k - 1]
        idx, d2 = self._ball(q, float(bound))
        order = np.lexsort((idx, d2))[:k]
        if return_distance:
            return idx[order], np.sqrt(d2[order])
        return idx[order]

    # -- batched queries --------------------------------------------------

    def _leaf_of(self, queries: np.ndarray) -> np.ndarray:
        node = np.zeros(len(queries), dtype=np.int64)
        active = np.flatnonzero(self.axis[node] >= 0)
        while active.size:
            cur = node[active]
            ax = self.axis[cur].astype(np.int64)
            go_left = queries[active, ax] < self.split[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.axis[node[active]] >= 0]
        return node

    def _gather(self, nodes: np.ndarray) -> np.ndarray:
        """Concatenated ``perm`` ranges of ``nodes``."""
        starts = self.start[nodes]
        counts = self.end[nodes] - starts
        total = int(counts.sum())
        offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
        return self.perm[offsets + np.arange(total)]

    def _anchors(self, queries: np.ndarray, k: int) -> np.ndarray:
        """Vectorized :meth:`_anchor` over many queries."""
        size = self.end - self.start
        node = np.zeros(len(queries), dtype=np.int64)
        active = np.flatnonzero(self.axis[node] >= 0)
        while active.size:
            cur = node[active]
            ax = self.axis[cur].astype(np.int64)
            child = np.where(queries[active, ax] < self.split[cur], self.left[cur], self.right[cur])
            ok = size[child] >= k
            active = active[ok]
            node[active] = child[ok]
            active = active[self.axis[node[active]] >= 0]
        return node

    def _group_size(self, n_queries: int, k: int) -> int:
        """Subtree size at which queries are grouped: about a leaf's worth of
        queries per group when the queries are a sparse subset of the points."""
        per_query = len(self.points) / max(1, n_queries)
        if per_query < 4:
            return k
        return int(min(len(self.points), max(k, math.ceil(self.leaf_size * per_query))))

    def _candidates(self, gq: np.ndarray, reach: float) -> np.ndarray:
        """Ascending original indices of every leaf within ``reach`` of the query box."""
        qlo = gq.min(axis=0) - reach
        qhi = gq.max(axis=0) + reach
        leaf_lo = self.lo[self.leaves]
        leaf_hi = self.hi[self.leaves]
        overlap = np.all((leaf_lo <= qhi) & (leaf_hi >= qlo), axis=1)
        return np.sort(self._gather(self.leaves[overlap]))

    def _pair_d2(self, gq: np.ndarray, cand: np.ndarray) -> np.ndarray:
        cp = self.points[cand]
        dx = gq[:, None, 0] - cp[None, :, 0]
        dy = gq[:, None, 1] - cp[None, :, 1]
        dz = gq[:, None, 2] - cp[None, :, 2]
        return dx * dx + dy * dy + dz * dz

    def query_groups(self, queries, radius) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Group ``queries`` by leaf and yield candidate neighbourhoods.

        Yields ``(query_ids, candidate_indices, d2)`` where
        ``candidate_indices`` are ascending original indices that include
        every point within ``radius`` of each query, and ``d2`` is the
        (len(query_ids), len(candidates)) matrix of squared distances.
        Callers filter ``d2 <= radius**2`` themselves.
        """
        qs = _as_queries(queries)
        if not radius >= 0:
            raise SpatialError(f"radius must be non-negative, got {radius}")
        reach = float(radius) * (1.0 + 1e-12)
        home = self._anchors(qs, self._group_size(len(qs), 1))
        order = np.argsort(home, kind="stable")
        cuts = np.flatnonzero(np.diff(home[order])) + 1
        for group in np.split(order, cuts):
            gq = qs[group]
            cand = self._candidates(gq, reach)
            yield group, cand, self._pair_d2(gq, cand)

    def knn_many(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched exact kNN; returns (indices, distances), each of shape (m, k).

        Same ordering and tie-breaking as :meth:`knn`.
        """
        qs = _as_queries(queries)
        k = int(k)
        if not 1 <= k <= len(self.points):
            raise SpatialError(f"k must be in [1, {len(self.points)}], got {k}")
        out_idx = np.empty((len(qs), k), dtype=np.int64)
        out_d2 = np.empty((len(qs), k))
        anchor = self._anchors(qs, self._group_size(len(qs), k))
        order = np.argsort(anchor, kind="stable")
        cuts = np.flatnonzero(np.diff(anchor[order])) + 1
        for group in np.split(order, cuts):
            gq = qs[group]
            node = anchor[group[0]]
            own = self.perm[self.start[node]:self.end[node]]
            # k real points bound each query's k-th distance from above
            bound = np.partition(self._pair_d2(gq, own), k - 1, axis=1)[:, k - 1]
            reach = float(np.sqrt(bound.max())) * (1.0 + 1e-12)
            cand = self._candidates(gq, reach)
            d2 = self._pair_d2(gq, cand)
            sel = _smallest_k(d2, k)
            out_idx[group] = cand[sel]
            out_d2[group] = np.take_along_axis(d2, sel, axis=1)
        return out_idx, np.sqrt(out_d2)


def _smallest_k(d2: np.ndarray, k: int) -> np.ndarray:
    """Column positions of the k smallest entries per row, ordered by (value, column)."""
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1:k]
    below = d2 < kth
    tied = d2 == kth
    need = k - below.sum(axis=1, keepdims=True)
    keep = below | (tied & (np.cumsum(tied, axis=1) <= need))
    cols = np.nonzero(keep)[1].reshape(len(d2), k)
    order = np.argsort(np.take_along_axis(d2, cols, axis=1), axis=1, kind="stable")
    return np.take_along_axis(cols, order, axis=1)


def build_kdtree(positions, leaf_size: int = LEAF_SIZE) -> KdTree:
    return KdTree(positions, leaf_size=leaf_size)
