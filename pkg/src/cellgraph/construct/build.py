"""Assemble a CellGraph from an image and an instance mask."""

from __future__ import annotations

import numpy as np

from ..graphdata import CellGraph
from .delaunay import delaunay, prune_and_weight
from .descriptors import FEATURE_DIM, extract_descriptors


def spatial_edges(centroids):
    """Delaunay edges pruned at 100 um, weighted by distance.

    Coincident centroids are merged for the triangulation; edges attach to
    the first cell at each location.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    n = len(centroids)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.float32)
    uniq, rep = np.unique(centroids, axis=0, return_index=True)
    if len(uniq) < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.float32)
    raw = delaunay(uniq)
    edges = [(min(rep[a], rep[b]), max(rep[a], rep[b])) for a, b in raw]
    return prune_and_weight(edges, centroids)


def build_cell_graph(image, mask, probabilities=None, magnification=""):
    """Full pipeline: descriptors + centroids, Delaunay edges, pruning."""
    feats, centroids = extract_descriptors(image, mask, probabilities)
    if len(feats) == 0:
        return CellGraph(
            node_features=np.zeros((0, FEATURE_DIM), dtype=np.float32),
            node_positions=np.zeros((0, 2), dtype=np.float32),
            edge_index=np.zeros((0, 2), dtype=np.int64),
            edge_weight=np.zeros(0, dtype=np.float32),
            magnification=magnification)
    edge_index, edge_weight = spatial_edges(centroids)
    return CellGraph(node_features=feats, node_positions=centroids,
                     edge_index=edge_index, edge_weight=edge_weight,
                     magnification=magnification).validate()
