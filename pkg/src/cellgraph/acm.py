"""Adaptive channel-mixing GNN: random-walk filters, gated three-channel
layers, virtual-node augmentation, and jumping-knowledge readout."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .graphdata import CellGraph, GraphBatch, batch_graphs
from .numerics import (
    CsrMatrix, Tape, Tensor, add, affine, concat_cols, matmul, mul, param,
    relu, row_softmax, sigmoid, spmm, take_cols,
)

CHANNELS = ("L", "H", "I")


def random_walk(a):
    """D^{-1} A row normalization; isolated nodes keep an all-zero row."""
    if np.any(a.data < 0):
        raise ValueError("adjacency weights must be nonnegative")
    row_ids = np.repeat(np.arange(a.rows), np.diff(a.indptr))
    degree = np.zeros(a.rows, dtype=np.float64)
    np.add.at(degree, row_ids, a.data.astype(np.float64))
    scale = np.ones(a.rows)
    nz = degree > 0
    scale[nz] = 1.0 / degree[nz]
    data = (a.data.astype(np.float64) * scale[row_ids]).astype(a.data.dtype)
    return CsrMatrix(a.rows, a.cols, a.indptr, a.indices, data)


def channel_filters(a_rw):
    """Low-pass (I + A_rw)/2 and high-pass (I - A_rw)/2; their sum is the
    identity exactly on the merged sparsity pattern."""
    eye = CsrMatrix.identity(a_rw.rows, dtype=a_rw.data.dtype)
    a_l = eye.add(a_rw).scale(0.5)
    a_h = eye.add(a_rw.scale(-1.0)).scale(0.5)
    return a_l, a_h


def add_virtual_node(graph, mean_edge_weight):
    """Append one zero-feature node connected to every real node."""
    if mean_edge_weight <= 0:
        raise ValueError("mean edge weight must be positive")
    n = graph.num_nodes
    feats = np.vstack([graph.node_features,
                       np.zeros((1, graph.feature_dim), dtype=graph.node_features.dtype)])
    pos = np.vstack([graph.node_positions,
                     np.zeros((1, 2), dtype=graph.node_positions.dtype)])
    if n:
        v_edges = np.stack([np.arange(n, dtype=np.int64),
                            np.full(n, n, dtype=np.int64)], axis=1)
        edge_index = np.vstack([graph.edge_index, v_edges])
        edge_weight = np.concatenate([
            graph.edge_weight,
            np.full(n, mean_edge_weight, dtype=graph.edge_weight.dtype)])
    else:
        edge_index = graph.edge_index.copy()
        edge_weight = graph.edge_weight.copy()
    return CellGraph(node_features=feats, node_positions=pos,
                     edge_index=edge_index, edge_weight=edge_weight,
                     node_labels=graph.node_labels, graph_label=graph.graph_label,
                     survival=graph.survival, magnification=graph.magnification,
                     virtual_index=n)


def mean_edge_weight(graphs):
    """Dataset-level mean edge weight, used for virtual edges."""
    total, count = 0.0, 0
    for g in graphs:
        total += float(g.edge_weight.astype(np.float64).sum())
        count += g.num_edges
    return total / count if count else 1.0


@dataclass
class AcmConfig:
    in_dim: int
    hidden_dim: int
    out_dim: int
    num_layers: int
    mlp_depth: int = 2
    temperature: float = 1.0


class AcmModel:
    """Stack of adaptive channel-mixing layers + jumping-knowledge projection.

    Parameters are plain float32 arrays keyed by name; a forward pass wraps
    them on a tape so gradients can be taken.
    """

    def __init__(self, config, rng):
        self.config = config
        self.params = {}
        cfg = config

        def glorot(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)

        for k in range(cfg.num_layers):
            d_in = cfg.in_dim if k == 0 else cfg.hidden_dim
            for c in CHANNELS:
                for m in range(cfg.mlp_depth):
                    fi = d_in if m == 0 else cfg.hidden_dim
                    self.params[f"layer{k}.{c}.mlp{m}.W"] = glorot(fi, cfg.hidden_dim)
                    self.params[f"layer{k}.{c}.mlp{m}.b"] = np.zeros((1, cfg.hidden_dim),
                                                                     dtype=np.float32)
                self.params[f"layer{k}.{c}.gate"] = glorot(cfg.hidden_dim, 1)
            self.params[f"layer{k}.Wmix"] = glorot(3, 3)
        self.params["jk.W"] = glorot(cfg.num_layers * cfg.hidden_dim, cfg.out_dim)
        self.params["jk.b"] = np.zeros((1, cfg.out_dim), dtype=np.float32)

    def num_parameters(self):
        return sum(int(v.size) for v in self.params.values())

    def as_tensors(self, tape):
        return {name: param(value, tape, name=name) for name, value in self.params.items()}


def _layer_forward(k, pt, x, a_l, a_h, temperature, mlp_depth, force_channel=None):
    channel_inputs = {"L": spmm(a_l, x), "H": spmm(a_h, x), "I": x}
    hc = {}
    for c in CHANNELS:
        h = channel_inputs[c]
        for m in range(mlp_depth):
            h = relu(add(matmul(h, pt[f"layer{k}.{c}.mlp{m}.W"]), pt[f"layer{k}.{c}.mlp{m}.b"]))
        hc[c] = h
    if force_channel is not None:
        return hc[force_channel]
    gates = concat_cols([sigmoid(matmul(hc[c], pt[f"layer{k}.{c}.gate"])) for c in CHANNELS])
    alpha = row_softmax(affine(matmul(gates, pt[f"layer{k}.Wmix"]), 1.0 / temperature))
    out = None
    for idx, c in enumerate(CHANNELS):
        term = mul(take_cols(alpha, idx, idx + 1), hc[c])
        out = term if out is None else add(out, term)
    return out


def forward(model, features, a_l, a_h, tape=None, param_tensors=None, force_channel=None):
    """Run all layers; returns (final embedding, per-layer outputs).

    features may be a Tensor (already on a tape) or a raw array.
    """
    cfg = model.config
    own_tape = tape or Tape()
    pt = param_tensors or model.as_tensors(own_tape)
    x = features if isinstance(features, Tensor) else Tensor(features, tape=own_tape)
    layer_outputs = []
    for k in range(cfg.num_layers):
        x = _layer_forward(k, pt, x, a_l, a_h, cfg.temperature, cfg.mlp_depth,
                           force_channel=force_channel)
        layer_outputs.append(x)
    jk = concat_cols(layer_outputs) if len(layer_outputs) > 1 else layer_outputs[0]
    h = add(matmul(jk, pt["jk.W"]), pt["jk.b"])
    return h, layer_outputs


def batch_filters(batch):
    a_rw = random_walk(batch.adjacency)
    return channel_filters(a_rw)


def encode(model, batch, force_channel=None):
    """Inference-mode node embeddings (N, out_dim) for a batch."""
    a_l, a_h = batch_filters(batch)
    h, _ = forward(model, batch.features, a_l, a_h, force_channel=force_channel)
    return h.value


def region_embedding(h, batch):
    """Per-graph mean over real-cell rows; the virtual node is excluded.

    Graphs without real cells map to the zero vector.
    """
    real = batch.real_node_mask()
    out = np.zeros((batch.num_graphs, h.shape[1]), dtype=h.dtype)
    for g in range(batch.num_graphs):
        sl = batch.graph_slice(g)
        rows = h[sl][real[sl]]
        if len(rows):
            out[g] = rows.mean(axis=0)
    return out


def config_dict(config):
    return asdict(config)


def config_from_dict(d):
    return AcmConfig(**d)
