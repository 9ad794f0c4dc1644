"""Sparse and dense linear-algebra primitives.

A :class:`CsrMatrix` is a compressed-sparse-row batch with ``int64`` index
arrays and ``float64`` values; columns are sorted and unique within each row.
:class:`InteractionMatrix` wraps a binary CsrMatrix together with external
user/item IDs and optional per-interaction timestamps.

All matrices are immutable after construction (treat the arrays as frozen);
operations here are pure functions, safe to call from multiple threads.
"""

from dataclasses import dataclass, field

import numpy as np

from beekit import kernels
from beekit.errors import DataError, DimensionMismatch


@dataclass
class CsrMatrix:
    """Sparse row batch in CSR layout.

    ``indptr`` has ``n_rows + 1`` entries; row ``i`` occupies
    ``indices[indptr[i]:indptr[i+1]]`` with matching ``data`` values.
    Column indices are strictly increasing within a row.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def shape(self) -> tuple:
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, dedup="error"):
        """Build a canonical CSR matrix from coordinate triples.

        dedup: "error" rejects duplicate (row, col) pairs, "sum" accumulates
        them, "first" keeps the first occurrence in input order.
        """
        n_rows, n_cols = shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise DimensionMismatch("rows, cols and vals must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise DataError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise DataError("column index out of range")

        order = np.argsort(rows * np.int64(n_cols) + cols, kind="stable")
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                if dedup == "error":
                    raise DataError("duplicate (row, col) pairs")
                keep = np.concatenate([[True], ~dup])
                if dedup == "sum":
                    group = np.cumsum(keep) - 1
                    summed = np.bincount(group, weights=vals)
                    rows, cols = rows[keep], cols[keep]
                    vals = summed
                elif dedup == "first":
                    rows, cols, vals = rows[keep], cols[keep], vals[keep]
                else:
                    raise ValueError(f"unknown dedup mode {dedup!r}")
        counts = np.bincount(rows, minlength=n_rows)
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(n_rows, n_cols, indptr, cols, np.ascontiguousarray(vals))

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(rows, cols, dense[rows, cols], dense.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def row(self, i) -> tuple:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def take_rows(self, row_indices) -> "CsrMatrix":
        """Row-sliced copy; rows appear in the requested order."""
        row_indices = np.asarray(row_indices, dtype=np.int64)
        if row_indices.size and (row_indices.min() < 0 or row_indices.max() >= self.n_rows):
            raise DataError("row index out of range")
        lengths = self.indptr[row_indices + 1] - self.indptr[row_indices]
        indptr = np.zeros(row_indices.size + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int64)
        data = np.empty(indptr[-1], dtype=np.float64)
        for j, r in enumerate(row_indices):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            indices[indptr[j]:indptr[j + 1]] = self.indices[lo:hi]
            data[indptr[j]:indptr[j + 1]] = self.data[lo:hi]
        return CsrMatrix(row_indices.size, self.n_cols, indptr, indices, data)

    def scale_rows(self, factors) -> "CsrMatrix":
        factors = np.asarray(factors, dtype=np.float64)
        scaled = self.data * np.repeat(factors, np.diff(self.indptr))
        return CsrMatrix(self.n_rows, self.n_cols, self.indptr, self.indices, scaled)

    def row_norms(self) -> np.ndarray:
        sq = np.zeros(self.n_rows)
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        np.add.at(sq, rows, self.data ** 2)
        return np.sqrt(sq)


@dataclass
class InteractionMatrix:
    """Binary user-item interaction matrix with ID maps.

    Stored values are exactly 1.0; ``timestamps`` (seconds since epoch,
    int64) align with ``csr.data`` when present.
    """

    csr: CsrMatrix
    user_ids: list
    item_ids: list
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        if len(self.user_ids) != self.csr.n_rows:
            raise DataError("user_ids length must equal n_users")
        if len(self.item_ids) != self.csr.n_cols:
            raise DataError("item_ids length must equal n_items")
        if len(set(self.user_ids)) != len(self.user_ids):
            raise DataError("duplicate external user IDs")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise DataError("duplicate external item IDs")
        if self.csr.data.size and not np.all(self.csr.data == 1.0):
            raise DataError("interaction values must all be 1.0")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
            if self.timestamps.shape != self.csr.data.shape:
                raise DataError("timestamps must align with interactions")

    @property
    def n_users(self) -> int:
        return self.csr.n_rows

    @property
    def n_items(self) -> int:
        return self.csr.n_cols

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def density(self) -> float:
        return self.nnz / (self.n_users * self.n_items)

    @classmethod
    def from_pairs(cls, user_idx, item_idx, n_users, n_items,
                   user_ids=None, item_ids=None, timestamps=None):
        """Canonicalize (user, item) pairs into a binary matrix.

        Duplicate pairs collapse to one interaction keeping the earliest
        timestamp (first occurrence when timestamps are absent).
        """
        user_idx = np.asarray(user_idx, dtype=np.int64)
        item_idx = np.asarray(item_idx, dtype=np.int64)
        ts = None if timestamps is None else np.asarray(timestamps, dtype=np.int64)
        if ts is not None:
            order = np.lexsort((ts, item_idx, user_idx))
        else:
            order = np.argsort(user_idx * np.int64(max(n_items, 1)) + item_idx,
                               kind="stable")
        user_idx, item_idx = user_idx[order], item_idx[order]
        if ts is not None:
            ts = ts[order]
        if user_idx.size:
            keep = np.concatenate(
                [[True], (user_idx[1:] != user_idx[:-1]) | (item_idx[1:] != item_idx[:-1])])
            user_idx, item_idx = user_idx[keep], item_idx[keep]
            if ts is not None:
                ts = ts[keep]
        csr = CsrMatrix.from_coo(user_idx, item_idx, np.ones(user_idx.size),
                                 (n_users, n_items))
        if user_ids is None:
            user_ids = list(range(n_users))
        if item_ids is None:
            item_ids = list(range(n_items))
        return cls(csr, list(user_ids), list(item_ids), ts)


def normalize_rows(m):
    """L2-normalize each row; zero rows stay zero.

    Accepts a dense 2-D array or a CsrMatrix and returns the same kind.
    """
    if isinstance(m, CsrMatrix):
        norms = m.row_norms()
        inv = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
        return m.scale_rows(inv)
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    zero = norms == 0
    return np.where(zero, 0.0, m / np.where(zero, 1.0, norms))


def spmm(x, a) -> np.ndarray:
    """Sparse-dense product ``x @ a`` for a CSR row batch."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if x.n_cols != a.shape[0]:
        raise DimensionMismatch(
            f"spmm: x has {x.n_cols} columns but a has {a.shape[0]} rows")
    out = np.zeros((x.n_rows, a.shape[1]))
    return kernels.csr_dense(x.indptr, x.indices, x.data, a, out)


def spmm_t(x, g) -> np.ndarray:
    """Transposed product ``x.T @ g`` for a CSR row batch."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    if x.n_rows != g.shape[0]:
        raise DimensionMismatch(
            f"spmm_t: x has {x.n_rows} rows but g has {g.shape[0]} rows")
    out = np.zeros((x.n_cols, g.shape[1]))
    return kernels.csr_t_dense(x.indptr, x.indices, x.data, g, out)


def gather_columns(x, items) -> CsrMatrix:
    """Restrict a CSR batch (or InteractionMatrix) to the given columns.

    Column ``j`` of the result corresponds to ``items[j]``; row order is
    preserved. Indices must be unique and in range.
    """
    csr = x.csr if isinstance(x, InteractionMatrix) else x
    items = np.asarray(items, dtype=np.int64)
    if items.size and (items.min() < 0 or items.max() >= csr.n_cols):
        raise DataError("gather_columns: item index out of range")
    if np.unique(items).size != items.size:
        raise DataError("gather_columns: item indices must be unique")

    position = np.full(csr.n_cols, -1, dtype=np.int64)
    position[items] = np.arange(items.size)
    mapped = position[csr.indices]
    keep = mapped >= 0
    rows = np.repeat(np.arange(csr.n_rows), np.diff(csr.indptr))[keep]
    return CsrMatrix.from_coo(rows, mapped[keep], csr.data[keep],
                              (csr.n_rows, items.size))


def zero_columns(x: CsrMatrix, items) -> CsrMatrix:
    """Drop all entries in the given columns, keeping the full width."""
    items = np.asarray(items, dtype=np.int64)
    drop = np.zeros(x.n_cols, dtype=bool)
    drop[items] = True
    keep = ~drop[x.indices]
    rows = np.repeat(np.arange(x.n_rows), np.diff(x.indptr))[keep]
    return CsrMatrix.from_coo(rows, x.indices[keep], x.data[keep], x.shape)
