import numpy as np
import pytest

from cellgraph.graphdata import CellGraph
from cellgraph.numerics import Tape, grad, param


def finite_difference(f, params, h=1e-6):
    """Central-difference gradients of a scalar-valued f(dict of arrays)."""
    out = {}
    for name, value in params.items():
        g = np.zeros_like(value, dtype=np.float64)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = f(params)
            flat[k] = orig - h
            dn = f(params)
            flat[k] = orig
            gflat[k] = (up - dn) / (2.0 * h)
        out[name] = g
    return out


def check_gradients(build, params, tol=1e-3, h=1e-6):
    """build(param_tensors, tape) -> scalar loss Tensor. Compares autodiff
    gradients against central finite differences in float64."""
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    pt = {k: param(v.copy(), tape, name=k) for k, v in params.items()}
    loss = build(pt, tape)
    auto = grad(tape, loss, pt)

    def scalar(p):
        t2 = Tape()
        pt2 = {k: param(v.copy(), t2, name=k) for k, v in p.items()}
        return float(build(pt2, t2).value)

    numeric = finite_difference(scalar, params, h=h)
    for name in params:
        a, n = auto[name], numeric[name]
        denom = max(np.abs(n).max(), np.abs(a).max(), 1e-8)
        err = np.abs(a - n).max() / denom
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.2e}"


def random_graph(rng, n_min=3, n_max=12, feature_dim=5, with_labels=False,
                 graph_label=None, survival=None):
    """Valid random CellGraph with Delaunay-free dense-ish random edges."""
    n = int(rng.integers(n_min, n_max + 1))
    pos = rng.uniform(0, 60, size=(n, 2)).astype(np.float32)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    d = np.linalg.norm(pos[:, None, :].astype(np.float64)
                       - pos[None, :, :].astype(np.float64), axis=2)
    edges = [(i, j) for i, j in pairs
             if 0 < np.float32(d[i, j]) < 100 and rng.random() < 0.4]
    if edges:
        ei = np.array(edges, dtype=np.int64)
        w = d[ei[:, 0], ei[:, 1]].astype(np.float32)
    else:
        ei = np.zeros((0, 2), dtype=np.int64)
        w = np.zeros(0, dtype=np.float32)
    labels = rng.integers(0, 3, size=n) if with_labels else None
    return CellGraph(node_features=rng.normal(size=(n, feature_dim)).astype(np.float32),
                     node_positions=pos, edge_index=ei, edge_weight=w,
                     node_labels=labels, graph_label=graph_label,
                     survival=survival).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
