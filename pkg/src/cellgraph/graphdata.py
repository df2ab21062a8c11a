"""Core graph data model: attributed cell graphs and block-diagonal batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import CsrMatrix

EDGE_WEIGHT_CAP_UM = 100.0


@dataclass
class CellGraph:
    """Undirected, edge-weighted graph of one image patch or region.

    Edges are stored once with i < j; weights are Euclidean distances in
    micrometres, strictly inside (0, 100).
    """

    node_features: np.ndarray            # (n, F) float32
    node_positions: np.ndarray           # (n, 2) float32, micrometres
    edge_index: np.ndarray               # (E, 2) int64, i < j
    edge_weight: np.ndarray              # (E,) float32
    node_labels: Optional[np.ndarray] = None
    graph_label: Optional[int] = None
    survival: Optional[tuple] = None     # (time_days, event_flag)
    magnification: str = ""
    virtual_index: Optional[int] = None  # set after virtual-node augmentation

    @property
    def num_nodes(self):
        return int(self.node_features.shape[0])

    @property
    def num_edges(self):
        return int(self.edge_index.shape[0])

    @property
    def feature_dim(self):
        return int(self.node_features.shape[1])

    def validate(self, check_weights=True):
        n = self.num_nodes
        if self.node_positions.shape != (n, 2):
            raise ValueError("positions shape mismatch")
        ei = self.edge_index
        if ei.size:
            if np.any(ei[:, 0] >= ei[:, 1]):
                raise ValueError("edges must satisfy i < j (no self-loops)")
            if ei.max() >= n or ei.min() < 0:
                raise ValueError("edge endpoint out of range")
            keys = ei[:, 0] * n + ei[:, 1]
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate edges")
            w = self.edge_weight.astype(np.float64)
            if np.any(w <= 0) or np.any(w >= EDGE_WEIGHT_CAP_UM):
                # virtual-node edges may carry a mean weight instead of the
                # geometric distance, but must still be positive
                if self.virtual_index is None:
                    raise ValueError("edge weights must lie in (0, 100)")
                if np.any(w <= 0):
                    raise ValueError("edge weights must be positive")
            if check_weights and self.virtual_index is None:
                d = np.linalg.norm(
                    self.node_positions[ei[:, 0]].astype(np.float64)
                    - self.node_positions[ei[:, 1]].astype(np.float64), axis=1)
                if np.any(np.abs(d - w) > 1e-4):
                    raise ValueError("edge weight does not match endpoint distance")
        if self.node_labels is not None and len(self.node_labels) != n:
            raise ValueError("node_labels length mismatch")
        return self


@dataclass
class GraphBatch:
    """Block-diagonal merge of several cell graphs."""

    features: np.ndarray                 # (N, F)
    adjacency: CsrMatrix                 # symmetric (N, N)
    offsets: np.ndarray                  # (G + 1,) node offsets
    graphs: list = field(default_factory=list)
    virtual_indices: Optional[np.ndarray] = None  # (G,) global indices

    @property
    def num_graphs(self):
        return len(self.offsets) - 1

    @property
    def num_nodes(self):
        return int(self.offsets[-1])

    def real_node_mask(self):
        mask = np.ones(self.num_nodes, dtype=bool)
        if self.virtual_indices is not None:
            mask[self.virtual_indices] = False
        return mask

    def graph_slice(self, g):
        return slice(int(self.offsets[g]), int(self.offsets[g + 1]))


def batch_graphs(graphs):
    """Merge graphs into one block-diagonal batch; ordering = input order."""
    if not graphs:
        raise ValueError("cannot batch an empty graph list")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ValueError(f"feature dimension mismatch across graphs: {sorted(dims)}")
    counts = [g.num_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    n_total = int(offsets[-1])
    features = (np.concatenate([g.node_features for g in graphs], axis=0)
                if n_total else np.zeros((0, graphs[0].feature_dim), dtype=np.float32))

    rows, cols, vals = [], [], []
    for g, off in zip(graphs, offsets[:-1]):
        if g.num_edges:
            i = g.edge_index[:, 0] + off
            j = g.edge_index[:, 1] + off
            rows.append(np.concatenate([i, j]))
            cols.append(np.concatenate([j, i]))
            vals.append(np.concatenate([g.edge_weight, g.edge_weight]))
    if rows:
        adjacency = CsrMatrix.from_coo(
            n_total, n_total,
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
    else:
        adjacency = CsrMatrix(n_total, n_total, np.zeros(n_total + 1, dtype=np.int64),
                              np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float32))

    virtual = None
    if all(g.virtual_index is not None for g in graphs):
        virtual = np.array([off + g.virtual_index for g, off in zip(graphs, offsets[:-1])],
                           dtype=np.int64)
    return GraphBatch(features=features, adjacency=adjacency, offsets=offsets,
                      graphs=list(graphs), virtual_indices=virtual)


def unbatch(batch):
    """Inverse of batch_graphs; reconstructs the input graphs bit-exactly."""
    out = []
    for g_idx in range(batch.num_graphs):
        src = batch.graphs[g_idx]
        sl = batch.graph_slice(g_idx)
        out.append(CellGraph(
            node_features=batch.features[sl].copy(),
            node_positions=src.node_positions.copy(),
            edge_index=src.edge_index.copy(),
            edge_weight=src.edge_weight.copy(),
            node_labels=None if src.node_labels is None else src.node_labels.copy(),
            graph_label=src.graph_label,
            survival=src.survival,
            magnification=src.magnification,
            virtual_index=src.virtual_index,
        ))
    return out
