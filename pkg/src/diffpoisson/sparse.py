"""Compressed sparse row matrices and a conjugate gradient solver."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver misses its tolerance."""

    def __init__(self, message, residual_norm=None):
        super().__init__(message)
        self.residual_norm = residual_norm


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for a in (self.row_ptr, self.col_idx, self.values):
            a.setflags(write=False)

    @classmethod
    def from_triplets(cls, n_rows, n_cols, rows, cols=None, values=None):
        """Build from coordinate entries, summing duplicates.

        Accepts either three parallel arrays or a single iterable of
        ``(row, col, value)`` tuples as ``rows``.
        """
        if cols is None and values is None:
            entries = list(rows)
            if entries:
                r, c, v = zip(*entries)
            else:
                r, c, v = (), (), ()
            rows, cols, values = r, c, v
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("triplet arrays must have equal length")
        if rows.size and (
            rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols
        ):
            raise IndexError("triplet index out of range")

        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size:
            new = np.empty(rows.size, dtype=bool)
            new[0] = True
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            values = np.add.reduceat(values, starts)
            rows, cols = rows[starts], cols[starts]
        row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=row_ptr[1:])
        return cls(int(n_rows), int(n_cols), row_ptr, cols, values)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls.from_triplets(n, n, idx, idx, np.ones(n))

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return self.values.size

    @cached_property
    def _rows(self):
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))
        rows.setflags(write=False)
        return rows

    def _entry_rows(self):
        return self._rows

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_cols,):
            raise ValueError(f"matvec expects shape ({self.n_cols},), got {x.shape}")
        return np.bincount(
            self._entry_rows(), weights=self.values * x[self.col_idx], minlength=self.n_rows
        )

    def matvec_transpose(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_rows,):
            raise ValueError(
                f"matvec_transpose expects shape ({self.n_rows},), got {x.shape}"
            )
        return np.bincount(
            self.col_idx, weights=self.values * x[self._entry_rows()], minlength=self.n_cols
        )

    def __matmul__(self, x):
        return self.matvec(x)

    def transpose(self) -> CsrMatrix:
        return CsrMatrix.from_triplets(
            self.n_cols, self.n_rows, self.col_idx, self._entry_rows(), self.values
        )

    @property
    def T(self):
        return self.transpose()

    def scale(self, c) -> CsrMatrix:
        return CsrMatrix(self.n_rows, self.n_cols, self.row_ptr, self.col_idx, c * self.values)

    def submatrix(self, rows, cols) -> CsrMatrix:
        """Extract ``A[rows][:, cols]`` for sorted unique index arrays."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        row_map = np.full(self.n_rows, -1)
        row_map[rows] = np.arange(rows.size)
        col_map = np.full(self.n_cols, -1)
        col_map[cols] = np.arange(cols.size)
        r = row_map[self._entry_rows()]
        c = col_map[self.col_idx]
        keep = (r >= 0) & (c >= 0)
        return CsrMatrix.from_triplets(rows.size, cols.size, r[keep], c[keep], self.values[keep])

    def toarray(self):
        out = np.zeros(self.shape)
        np.add.at(out, (self._entry_rows(), self.col_idx), self.values)
        return out

    def is_symmetric(self, tol=1e-12) -> bool:
        if self.n_rows != self.n_cols:
            return False
        diff = self.toarray() - self.toarray().T
        return bool(np.all(np.abs(diff) <= tol * max(1.0, np.abs(self.values).max(initial=0.0))))


class SolveCounter:
    """Counts linear solves issued while active."""

    def __init__(self):
        self.calls = 0
        self.iterations = 0


_active_counters: list[SolveCounter] = []


@contextlib.contextmanager
def count_solves():
    counter = SolveCounter()
    _active_counters.append(counter)
    try:
        yield counter
    finally:
        _active_counters.remove(counter)


def cg_solve(A: CsrMatrix, b, rel_tol=1e-12, max_iter=None, transpose=False, check_symmetry=False):
    """Unpreconditioned conjugate gradients for SPD ``A``.

    Stops once ``||A x - b|| <= rel_tol * ||b||``. With ``transpose=True``
    the operator is applied through ``matvec_transpose``, i.e. the system
    ``A^T x = b`` is solved.

    Raises
    ------
    ConvergenceError
        If the tolerance is not reached within ``max_iter`` iterations
        (default ``10 * n``).
    """
    if A.n_rows != A.n_cols:
        raise ValueError("cg_solve needs a square matrix")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.n_rows,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({A.n_rows},)")
    if check_symmetry and not A.is_symmetric():
        raise ValueError("cg_solve requires a symmetric matrix")
    if max_iter is None:
        max_iter = 10 * max(A.n_rows, 1)
    for counter in _active_counters:
        counter.calls += 1

    op = A.matvec_transpose if transpose else A.matvec
    x = np.zeros_like(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return x
    target = rel_tol * b_norm

    r = b.copy()
    p = r.copy()
    rr = r @ r
    it = 0
    while True:
        while np.sqrt(rr) > target:
            if it >= max_iter:
                raise ConvergenceError(
                    f"CG did not converge in {max_iter} iterations "
                    f"(residual {np.sqrt(rr):.3e}, target {target:.3e})",
                    residual_norm=float(np.sqrt(rr)),
                )
            Ap = op(p)
            pAp = p @ Ap
            if pAp <= 0.0:
                raise ConvergenceError(
                    "CG met non-positive curvature; the matrix is not SPD",
                    residual_norm=float(np.sqrt(rr)),
                )
            alpha = rr / pAp
            x += alpha * p
            r -= alpha * Ap
            rr_new = r @ r
            p = r + (rr_new / rr) * p
            rr = rr_new
            it += 1
        # the recursive residual drifts from the true one; restart on it
        r = b - op(x)
        rr = r @ r
        if np.sqrt(rr) <= target:
            break
        p = r.copy()
    for counter in _active_counters:
        counter.iterations += it
    return x
