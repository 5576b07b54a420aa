"""Per-relation sparse probability matrix.

Row-major CSR layout plus a column-major companion built once at
construction, since both forward projection (row scans) and backward
assignment recovery (column scans) need fast access. Values live in (0, 1];
exact zeros are never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SparseMatrixError(Exception):
    pass


@dataclass
class SparseRelationMatrix:
    relation: int
    dim: int
    indptr: np.ndarray  # int64, len dim+1
    cols: np.ndarray    # int32, sorted within each row
    vals: np.ndarray    # float64 in (0, 1]

    csc_indptr: np.ndarray = field(init=False)
    csc_rows: np.ndarray = field(init=False)
    csc_vals: np.ndarray = field(init=False)

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int32)
        self.vals = np.ascontiguousarray(self.vals, dtype=np.float64)
        if len(self.indptr) != self.dim + 1:
            raise SparseMatrixError("indptr length must be dim + 1")
        if self.indptr[-1] != len(self.cols) or len(self.cols) != len(self.vals):
            raise SparseMatrixError("indptr/cols/vals lengths disagree")
        if len(self.vals) and (self.vals.min() <= 0.0 or self.vals.max() > 1.0):
            raise SparseMatrixError("values must lie in (0, 1]")
        if len(self.cols) > 1:
            # strictly ascending within each row; equality would be a duplicate
            inside_row = np.ones(len(self.cols) - 1, dtype=bool)
            starts = self.indptr[1:-1]
            inside_row[starts[(starts > 0) & (starts < len(self.cols))] - 1] = False
            if np.any(np.diff(self.cols.astype(np.int64))[inside_row] <= 0):
                raise SparseMatrixError("columns must be strictly ascending within each row")
        self._build_csc()

    def _build_csc(self):
        nnz = len(self.cols)
        rows = np.repeat(np.arange(self.dim, dtype=np.int32), np.diff(self.indptr))
        order = np.lexsort((rows, self.cols))
        sorted_cols = self.cols[order]
        self.csc_rows = rows[order]
        self.csc_vals = self.vals[order]
        counts = np.bincount(sorted_cols, minlength=self.dim)
        self.csc_indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        assert self.csc_indptr[-1] == nnz

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @classmethod
    def from_entries(cls, relation: int, dim: int, rows, cols, vals) -> "SparseRelationMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        keep = vals > 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows) > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                raise SparseMatrixError("duplicate (row, col) entry")
        indptr = np.concatenate(([0], np.cumsum(np.bincount(rows, minlength=dim)))).astype(np.int64)
        return cls(relation=relation, dim=dim, indptr=indptr, cols=cols.astype(np.int32), vals=vals)

    @classmethod
    def from_dense(cls, relation: int, dense: np.ndarray) -> "SparseRelationMatrix":
        rows, cols = np.nonzero(dense)
        return cls.from_entries(relation, dense.shape[0], rows, cols, dense[rows, cols])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.indptr[i], self.indptr[i + 1]
        return self.cols[s:e], self.vals[s:e]

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.csc_indptr[j], self.csc_indptr[j + 1]
        return self.csc_rows[s:e], self.csc_vals[s:e]

    def dense_row(self, i: int) -> np.ndarray:
        out = np.zeros(self.dim)
        cols, vals = self.row(i)
        out[cols] = vals
        return out

    def dense_column(self, j: int) -> np.ndarray:
        out = np.zeros(self.dim)
        rows, vals = self.column(j)
        out[rows] = vals
        return out

    def get(self, i: int, j: int) -> float:
        cols, vals = self.row(i)
        k = np.searchsorted(cols, j)
        if k < len(cols) and cols[k] == j:
            return float(vals[k])
        return 0.0

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for i in range(self.dim):
            cols, vals = self.row(i)
            out[i, cols] = vals
        return out

    def scaled(self, alpha: float) -> "SparseRelationMatrix":
        """Copy with entries min(1, alpha * value); the original is untouched."""
        return SparseRelationMatrix(
            relation=self.relation,
            dim=self.dim,
            indptr=self.indptr.copy(),
            cols=self.cols.copy(),
            vals=np.minimum(1.0, alpha * self.vals),
        )

    def equals(self, other: "SparseRelationMatrix") -> bool:
        return (
            self.dim == other.dim
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
        )
