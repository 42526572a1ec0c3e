"""Compressed sparse row matrices for adjacency storage and subgraph products.

Rows index destination nodes everywhere in this package, so a message
passing step is a row gather. Integer data carries edge multiplicities,
float data carries normalization weights.
"""

from __future__ import annotations

import numpy as np

# Largest admissible product magnitude before an int64 accumulation is refused.
_INT_SAFE = np.int64(1) << 62


class CSRMatrix:
    """Minimal CSR matrix: construction accumulates duplicates, rows stay sorted."""

    __slots__ = ("n_rows", "n_cols", "indptr", "indices", "data")

    def __init__(self, n_rows, n_cols, indptr, indices, data):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data)
        if self.indptr.shape != (self.n_rows + 1,):
            raise ValueError("indptr must have length n_rows + 1")
        if self.indices.shape != self.data.shape:
            raise ValueError("indices and data must have equal length")

    # -- construction -------------------------------------------------------

    @classmethod
    def zeros(cls, n_rows, n_cols, dtype=np.int64):
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64),
                   np.empty(0, dtype=np.int64), np.empty(0, dtype=dtype))

    @classmethod
    def from_edges(cls, rows, cols, n_rows, n_cols, data=None):
        """Build from parallel (row, col) arrays; duplicate cells accumulate."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must have equal length")
        if data is None:
            data = np.ones(rows.shape[0], dtype=np.int64)
        else:
            data = np.asarray(data)
        if rows.size == 0:
            return cls.zeros(n_rows, n_cols, dtype=data.dtype)
        if rows.min() < 0 or rows.max() >= n_rows:
            raise ValueError("row index out of range")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise ValueError("column index out of range")
        order = np.lexsort((cols, rows))
        r, c, d = rows[order], cols[order], data[order]
        new_cell = np.empty(r.shape[0], dtype=bool)
        new_cell[0] = True
        new_cell[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        starts = np.flatnonzero(new_cell)
        merged = np.add.reduceat(d, starts)
        r_u, c_u = r[starts], c[starts]
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(indptr, r_u + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n_rows, n_cols, indptr, c_u, merged)

    # -- views and conversions ----------------------------------------------

    @property
    def nnz(self):
        return int(self.indices.shape[0])

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def expanded_rows(self):
        """Row id of every stored entry, in storage order (sorted by row)."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64),
                         np.diff(self.indptr))

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols), dtype=self.data.dtype)
        out[self.expanded_rows(), self.indices] = self.data
        return out

    def binarized(self):
        """Same sparsity pattern with all stored entries set to 1."""
        return CSRMatrix(self.n_rows, self.n_cols, self.indptr, self.indices,
                         np.ones(self.nnz, dtype=np.int64))

    def astype(self, dtype):
        return CSRMatrix(self.n_rows, self.n_cols, self.indptr, self.indices,
                         self.data.astype(dtype))

    def copy(self):
        return CSRMatrix(self.n_rows, self.n_cols, self.indptr.copy(),
                         self.indices.copy(), self.data.copy())

    # -- algebra --------------------------------------------------------------

    def row_sums(self):
        out = np.zeros(self.n_rows, dtype=self.data.dtype)
        nonempty = self.indptr[:-1] < self.indptr[1:]
        if self.nnz:
            out[nonempty] = np.add.reduceat(self.data, self.indptr[:-1][nonempty])
        return out

    def col_sums(self):
        out = np.zeros(self.n_cols, dtype=self.data.dtype)
        np.add.at(out, self.indices, self.data)
        return out

    def transpose(self):
        rows = self.expanded_rows()
        order = np.lexsort((rows, self.indices))
        indptr = np.zeros(self.n_cols + 1, dtype=np.int64)
        np.add.at(indptr, self.indices + 1, 1)
        np.cumsum(indptr, out=indptr)
        return CSRMatrix(self.n_cols, self.n_rows, indptr, rows[order],
                         self.data[order])

    def matmul(self, other: "CSRMatrix") -> "CSRMatrix":
        """Row-wise sparse product; integer inputs stay integer, overflow-checked."""
        if self.n_cols != other.n_rows:
            raise ValueError(
                f"shape mismatch: ({self.n_rows},{self.n_cols}) @ "
                f"({other.n_rows},{other.n_cols})")
        int_result = (np.issubdtype(self.data.dtype, np.integer)
                      and np.issubdtype(other.data.dtype, np.integer))
        if int_result and self.nnz and other.nnz:
            bound = (int(np.abs(self.data).max()) * int(np.abs(other.data).max())
                     * max(1, self.n_cols))
            if bound > int(_INT_SAFE):
                raise OverflowError("sparse product may overflow int64 counts")
        dtype = np.int64 if int_result else np.float64
        out_indptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        out_idx_parts = []
        out_val_parts = []
        for i in range(self.n_rows):
            s, e = self.indptr[i], self.indptr[i + 1]
            if s == e:
                out_indptr[i + 1] = out_indptr[i]
                continue
            chunks_idx = []
            chunks_val = []
            for pos in range(s, e):
                k = self.indices[pos]
                v = self.data[pos]
                bs, be = other.indptr[k], other.indptr[k + 1]
                if bs == be:
                    continue
                chunks_idx.append(other.indices[bs:be])
                chunks_val.append(v * other.data[bs:be].astype(dtype, copy=False))
            if not chunks_idx:
                out_indptr[i + 1] = out_indptr[i]
                continue
            cat_idx = np.concatenate(chunks_idx)
            cat_val = np.concatenate(chunks_val)
            order = np.argsort(cat_idx, kind="stable")
            cat_idx = cat_idx[order]
            cat_val = cat_val[order]
            boundary = np.empty(cat_idx.shape[0], dtype=bool)
            boundary[0] = True
            boundary[1:] = cat_idx[1:] != cat_idx[:-1]
            starts = np.flatnonzero(boundary)
            out_idx_parts.append(cat_idx[starts])
            out_val_parts.append(np.add.reduceat(cat_val, starts))
            out_indptr[i + 1] = out_indptr[i] + starts.shape[0]
        if out_idx_parts:
            indices = np.concatenate(out_idx_parts)
            data = np.concatenate(out_val_parts)
        else:
            indices = np.empty(0, dtype=np.int64)
            data = np.empty(0, dtype=dtype)
        if int_result and data.size and data.min() < 0:
            raise OverflowError("sparse product overflowed int64 counts")
        return CSRMatrix(self.n_rows, other.n_cols, out_indptr, indices, data)

    def __matmul__(self, other):
        return self.matmul(other)

    # -- comparison -----------------------------------------------------------

    def equals(self, other: "CSRMatrix") -> bool:
        return (self.shape == other.shape
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data))

    def __repr__(self):
        return (f"CSRMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz}, "
                f"dtype={self.data.dtype})")


def freeze(csr: CSRMatrix) -> CSRMatrix:
    """Mark the backing arrays read-only (shared across parallel trials)."""
    for arr in (csr.indptr, csr.indices, csr.data):
        arr.flags.writeable = False
    return csr
