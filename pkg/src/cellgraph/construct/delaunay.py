"""Spatial edge construction: Delaunay triangulation and distance pruning."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.spatial import Delaunay as _SciDelaunay
from scipy.spatial import QhullError

from ..graphdata import EDGE_WEIGHT_CAP_UM


def _orientation_exact(a, b, c):
    """Sign of the cross product (b-a) x (c-a), evaluated exactly."""
    ax, ay = Fraction(float(a[0])), Fraction(float(a[1]))
    bx, by = Fraction(float(b[0])), Fraction(float(b[1]))
    cx, cy = Fraction(float(c[0])), Fraction(float(c[1]))
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (det > 0) - (det < 0)


def _all_collinear(points):
    a = points[0]
    for b in points[1:]:
        if not np.array_equal(a, b):
            break
    else:
        return True
    return all(_orientation_exact(a, b, p) == 0 for p in points)


def _collinear_chain(points):
    # nearest-neighbour chain along the line: sort by projection
    direction = None
    a = points[0]
    for b in points[1:]:
        if not np.array_equal(a, b):
            direction = b - a
            break
    proj = (points - a) @ direction
    order = np.argsort(proj, kind="stable")
    return [(min(int(order[k]), int(order[k + 1])), max(int(order[k]), int(order[k + 1])))
            for k in range(len(order) - 1)]


def delaunay(points):
    """Edge list of the Delaunay triangulation of 2-D points (micrometres).

    Points must be pairwise distinct. Two points give the single edge;
    fully collinear inputs degrade to a chain of consecutive edges along
    the line.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < 2:
        raise ValueError("need at least 2 points")
    if n == 2:
        return [(0, 1)]
    if _all_collinear(points):
        return _collinear_chain(points)
    try:
        tri = _SciDelaunay(points)
    except QhullError as exc:
        raise ValueError(f"triangulation failed: {exc}") from exc
    edges = set()
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                i, j = int(simplex[a]), int(simplex[b])
                edges.add((min(i, j), max(i, j)))
    return sorted(edges)


def prune_and_weight(edges, centroids):
    """Keep edges strictly shorter than 100 um; weight = Euclidean distance.

    Returns (edge_index (E, 2) int64, edge_weight (E,) float32).
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    if not edges:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.float32)
    ei = np.asarray(edges, dtype=np.int64)
    d = np.linalg.norm(centroids[ei[:, 0]] - centroids[ei[:, 1]], axis=1)
    w32 = d.astype(np.float32)
    # filter on the stored float32 value so the (0, 100) bound survives rounding
    keep = (w32 > 0) & (w32 < EDGE_WEIGHT_CAP_UM)
    ei, w32 = ei[keep], w32[keep]
    order = np.lexsort((ei[:, 1], ei[:, 0]))
    return ei[order], w32[order]
