"""Implicit matrices and matrix-vector query accounting.

Every estimator in this package touches matrix data only through
:func:`apply`, which charges the operator's declared query cost to a
:class:`QueryLedger`. Operators accept a single vector of shape ``(n,)`` or a
block of vectors of shape ``(n, k)``; a block counts as ``k`` queries.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""


class QueryLedger:
    """Running count of matrix-vector queries, broken down by label."""

    def __init__(self):
        self._counts: dict[str, int] = defaultdict(int)

    def charge(self, count: int, label: str = "default") -> None:
        if count < 0:
            raise ValueError("query count must be nonnegative")
        self._counts[label] += int(count)

    @property
    def total(self) -> int:
        return sum(self._counts.values())

    @property
    def counts(self) -> dict[str, int]:
        return dict(self._counts)

    def __getitem__(self, label: str) -> int:
        return self._counts.get(label, 0)

    def reset(self) -> None:
        self._counts.clear()

    def __repr__(self):
        return f"QueryLedger(total={self.total}, counts={dict(self._counts)})"


class LinearOperator:
    """Square implicit matrix of dimension ``dim``.

    Subclasses implement ``_matmat`` on an ``(n, k)`` block and set ``cost``,
    the number of base queries one application consumes.
    """

    cost: int = 1

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = int(dim)

    def _matmat(self, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        """Materialize the matrix. Test and benchmark use only."""
        raise TypeError(f"{type(self).__name__} has no dense representation")

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class DenseSymmetricOperator(LinearOperator):
    """Dense float64 matrix, symmetrized on construction."""

    def __init__(self, entries):
        A = np.asarray(entries, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {A.shape}")
        # (a + b) / 2 is commutative in floating point, so the result is exactly symmetric
        A = (A + A.T) / 2.0
        A.setflags(write=False)
        super().__init__(A.shape[0])
        self.entries = A

    def _matmat(self, V):
        return self.entries @ V

    def to_dense(self):
        return self.entries.copy()


class DiagonalOperator(LinearOperator):
    def __init__(self, diagonal):
        d = np.asarray(diagonal, dtype=np.float64).ravel()
        d.setflags(write=False)
        super().__init__(d.size)
        self.diagonal = d

    def _matmat(self, V):
        if V.ndim == 1:
            return self.diagonal * V
        return self.diagonal[:, None] * V

    def to_dense(self):
        return np.diag(self.diagonal)


class IdentityOperator(DiagonalOperator):
    def __init__(self, dim: int):
        super().__init__(np.ones(int(dim)))

    def _matmat(self, V):
        return V.copy()


class SparseSymmetricOperator(LinearOperator):
    """Sparse symmetric matrix in CSR form (graph adjacency path)."""

    def __init__(self, matrix):
        M = sp.csr_matrix(matrix, dtype=np.float64)
        if M.shape[0] != M.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {M.shape}")
        super().__init__(M.shape[0])
        self.matrix = M

    def _matmat(self, V):
        return self.matrix @ V

    def to_dense(self):
        return self.matrix.toarray()


class PowerOperator(LinearOperator):
    """``base`` raised to a positive integer power by repeated application."""

    def __init__(self, base: LinearOperator, exponent: int):
        if int(exponent) < 1:
            raise ValueError(f"exponent must be a positive integer, got {exponent}")
        super().__init__(base.dim)
        self.base = base
        self.exponent = int(exponent)
        self.cost = self.exponent * base.cost

    def _matmat(self, V):
        for _ in range(self.exponent):
            V = self.base._matmat(V)
        return V

    def to_dense(self):
        return np.linalg.matrix_power(self.base.to_dense(), self.exponent)


class DifferenceOperator(LinearOperator):
    """``left - right``; each application queries both endpoints."""

    def __init__(self, left: LinearOperator, right: LinearOperator):
        if left.dim != right.dim:
            raise DimensionError(f"dimension mismatch: {left.dim} vs {right.dim}")
        super().__init__(left.dim)
        self.left = left
        self.right = right
        self.cost = left.cost + right.cost

    def _matmat(self, V):
        return self.left._matmat(V) - self.right._matmat(V)

    def to_dense(self):
        return self.left.to_dense() - self.right.to_dense()


def _as_block(op: LinearOperator, v) -> np.ndarray:
    V = np.asarray(v, dtype=np.float64)
    if V.ndim not in (1, 2) or V.shape[0] != op.dim:
        raise DimensionError(f"operator has dim {op.dim}, got input of shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("input contains non-finite entries")
    return V


def apply(op: LinearOperator, v, ledger: QueryLedger | None = None,
          label: str = "default") -> np.ndarray:
    """Return ``op @ v`` and charge ``op.cost`` queries per column of ``v``."""
    V = _as_block(op, v)
    ncols = 1 if V.ndim == 1 else V.shape[1]
    out = op._matmat(V)
    if ledger is not None:
        ledger.charge(op.cost * ncols, label)
    return out


def difference(a: LinearOperator, b: LinearOperator) -> DifferenceOperator:
    return DifferenceOperator(a, b)


def exact_trace(op: LinearOperator) -> float:
    """Sum of the diagonal of a materializable operator. Never touches a ledger."""
    if isinstance(op, DiagonalOperator):
        return float(op.diagonal.sum())
    if isinstance(op, DenseSymmetricOperator):
        return float(np.trace(op.entries))
    if isinstance(op, SparseSymmetricOperator):
        return float(op.matrix.diagonal().sum())
    return float(np.trace(op.to_dense()))


def schatten_norm(A: np.ndarray, p: float = 1.0) -> float:
    """Schatten-p norm of a dense symmetric matrix via its eigenvalues."""
    s = np.abs(np.linalg.eigvalsh(np.asarray(A, dtype=np.float64)))
    if np.isinf(p):
        return float(s.max(initial=0.0))
    return float(np.sum(s ** p) ** (1.0 / p))


def common_dim(ops: Iterable[LinearOperator]) -> int:
    """Dimension shared by all ``ops``; raises on an empty or ragged sequence."""
    dim = None
    for i, op in enumerate(ops):
        if dim is None:
            dim = op.dim
        elif op.dim != dim:
            raise DimensionError(f"operator {i} has dim {op.dim}, expected {dim}")
    if dim is None:
        raise ValueError("empty operator sequence")
    return dim
