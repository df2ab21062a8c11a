"""CSR sparse matrices and sparse @ dense products with autodiff support."""

from __future__ import annotations

import numpy as np

from .tensor import _make


class CsrMatrix:
    """Compressed sparse row matrix. Column indices are strictly
    increasing within each row and no explicit zeros are stored."""

    __slots__ = ("rows", "cols", "indptr", "indices", "data")

    def __init__(self, rows, cols, indptr, indices, data):
        self.rows = int(rows)
        self.cols = int(cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data)
        if self.indptr.shape != (self.rows + 1,):
            raise ValueError("indptr length must be rows + 1")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be monotone non-decreasing")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.cols):
            raise ValueError("column index out of bounds")

    @property
    def nnz(self):
        return int(self.indices.size)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @classmethod
    def from_coo(cls, rows, cols, row_idx, col_idx, values, dtype=np.float32):
        """Build from coordinate triplets; duplicates are summed and
        resulting zeros dropped."""
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if row_idx.size:
            order = np.lexsort((col_idx, row_idx))
            row_idx, col_idx, values = row_idx[order], col_idx[order], values[order]
            # collapse duplicates
            key_change = np.ones(row_idx.size, dtype=bool)
            key_change[1:] = (np.diff(row_idx) != 0) | (np.diff(col_idx) != 0)
            group = np.cumsum(key_change) - 1
            summed = np.zeros(group[-1] + 1, dtype=np.float64)
            np.add.at(summed, group, values)
            row_idx = row_idx[key_change]
            col_idx = col_idx[key_change]
            values = summed
            keep = values != 0.0
            row_idx, col_idx, values = row_idx[keep], col_idx[keep], values[keep]
        counts = np.bincount(row_idx, minlength=rows)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(rows, cols, indptr, col_idx, values.astype(dtype))

    @classmethod
    def identity(cls, n, dtype=np.float32):
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n, dtype=dtype))

    def to_dense(self):
        out = np.zeros((self.rows, self.cols), dtype=self.data.dtype)
        row_ids = np.repeat(np.arange(self.rows), np.diff(self.indptr))
        out[row_ids, self.indices] = self.data
        return out

    def to_coo(self):
        row_ids = np.repeat(np.arange(self.rows), np.diff(self.indptr))
        return row_ids, self.indices.copy(), self.data.copy()

    def transpose(self):
        r, c, v = self.to_coo()
        return CsrMatrix.from_coo(self.cols, self.rows, c, r, v, dtype=self.data.dtype)

    def scale(self, factor):
        return CsrMatrix(self.rows, self.cols, self.indptr, self.indices,
                         (self.data.astype(np.float64) * factor).astype(self.data.dtype))

    def add(self, other):
        """Entrywise sum on the merged sparsity pattern (zeros kept out)."""
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        r1, c1, v1 = self.to_coo()
        r2, c2, v2 = other.to_coo()
        return CsrMatrix.from_coo(self.rows, self.cols,
                                  np.concatenate([r1, r2]),
                                  np.concatenate([c1, c2]),
                                  np.concatenate([v1, v2]),
                                  dtype=self.data.dtype)


def spmm_raw(s, dense):
    """S @ D for a CsrMatrix and a numpy array; float64 accumulation."""
    if s.cols != dense.shape[0]:
        raise ValueError(f"spmm dim mismatch: {s.shape} @ {dense.shape}")
    out = np.zeros((s.rows, dense.shape[1]), dtype=np.float64)
    if s.nnz:
        row_ids = np.repeat(np.arange(s.rows), np.diff(s.indptr))
        contrib = s.data.astype(np.float64)[:, None] * dense[s.indices].astype(np.float64)
        np.add.at(out, row_ids, contrib)
    return out.astype(dense.dtype)


def spmm(s, d):
    """Sparse @ dense where d is a Tensor; gradient flows into d only."""
    v = spmm_raw(s, d.value)
    st = s.transpose()
    return _make(v, [(d, lambda g: spmm_raw(st, g))])
