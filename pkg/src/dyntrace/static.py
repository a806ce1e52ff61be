"""Static trace estimators: Hutchinson and Hutch++ with a Schatten-p schedule."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .oracle import (
    DimensionError,
    LinearOperator,
    QueryLedger,
    apply,
)

HUTCHINSON_CONSTANT = 4.0
DROP_TOL = 1e-10


class ProbeKind(str, enum.Enum):
    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class StaticParams:
    """Accuracy target ``|t - tr A| <= eps * ||A||_p`` with probability ``1 - delta``.

    ``eps`` may exceed 1: the tree estimator asks for loose relative accuracy
    on its small difference nodes.
    """

    eps: float
    delta: float
    p: float = 1.0

    def __post_init__(self):
        _check_eps_delta(self.eps, self.delta)
        if not 1.0 <= self.p <= 2.0:
            raise ValueError(f"p must lie in [1, 2], got {self.p}")


@dataclass(frozen=True)
class TraceEstimate:
    value: float
    queries_used: int


def _check_eps_delta(eps, delta):
    if not (eps > 0 and math.isfinite(eps)):
        raise ValueError(f"eps must be positive, got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def draw_probes(rng: np.random.Generator, n: int, k: int,
                kind: ProbeKind | str = ProbeKind.RADEMACHER) -> np.ndarray:
    """``(n, k)`` block of i.i.d. sign or standard normal entries."""
    kind = ProbeKind(kind)
    if kind is ProbeKind.RADEMACHER:
        return rng.integers(0, 2, size=(n, k)).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal((n, k))


def hutchinson(op: LinearOperator, num_probes: int,
               kind: ProbeKind | str = ProbeKind.RADEMACHER,
               rng: np.random.Generator | None = None,
               ledger: QueryLedger | None = None,
               label: str = "hutchinson") -> TraceEstimate:
    """Mean of ``q^T A q`` over ``num_probes`` random probes."""
    if int(num_probes) < 1:
        raise ValueError("num_probes must be at least 1")
    rng = np.random.default_rng(rng)
    ledger = QueryLedger() if ledger is None else ledger
    before = ledger.total
    G = draw_probes(rng, op.dim, int(num_probes), kind)
    AG = apply(op, G, ledger, label)
    value = float(np.einsum("ij,ij->", G, AG) / num_probes)
    return TraceEstimate(value, ledger.total - before)


def hutch_budget(eps: float, delta: float, C: float = HUTCHINSON_CONSTANT) -> int:
    """Probe count ``ceil(C ln(1/delta) / eps^2)`` for Frobenius-norm error."""
    if not 0.0 < eps < 1.0 + 1e-12:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    # round away float noise before the ceiling, e.g. 4 * 1.0000000000000002
    return max(1, math.ceil(round(C * math.log(1.0 / delta) / eps ** 2, 9)))


def schatten_schedule(eps: float, delta: float, p: float = 1.0) -> tuple[int, int]:
    """Sketch width and residual probe count for Hutch++ at ``eps ||A||_p``.

    Both equal ``max(ceil((sqrt(ln(1/delta)) / eps)^p), ceil(ln(1/delta)))``.
    """
    StaticParams(eps, delta, p)
    log_term = math.log(1.0 / delta)
    main = math.ceil(round((math.sqrt(log_term) / eps) ** p, 9))
    floor = math.ceil(round(log_term, 9))
    k = max(main, floor, 1)
    return k, k


def orthonormalize(Y: np.ndarray, tol: float = DROP_TOL) -> np.ndarray:
    """Orthonormal basis for the columns of ``Y``.

    Column-pivoted QR; a column whose norm after projection onto the
    complement of the earlier ones falls below ``tol`` times the largest
    column norm is dropped, so the result may have fewer columns than ``Y``.
    """
    if Y.shape[1] == 0:
        return Y[:, :0].copy()
    Q, R, _ = scipy.linalg.qr(Y, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return Q[:, :0]
    return Q[:, : int(np.count_nonzero(d >= tol * d[0]))]


def range_finder(op: LinearOperator, width: int,
                 rng: np.random.Generator | None = None,
                 ledger: QueryLedger | None = None,
                 label: str = "range_finder") -> np.ndarray:
    """Orthonormal basis of ``op @ S`` for a ``width``-column sign sketch ``S``."""
    if not 1 <= int(width) <= op.dim:
        raise DimensionError(f"sketch width {width} must lie in [1, {op.dim}]")
    rng = np.random.default_rng(rng)
    S = draw_probes(rng, op.dim, int(width), ProbeKind.RADEMACHER)
    return orthonormalize(apply(op, S, ledger, label))


class DeflatedOperator(LinearOperator):
    """``(I - QQ^T) A (I - QQ^T)`` for an orthonormal ``Q``; one base query per apply."""

    def __init__(self, op: LinearOperator, Q: np.ndarray):
        super().__init__(op.dim)
        self.op = op
        self.Q = Q
        self.cost = op.cost

    def _project(self, V):
        return V - self.Q @ (self.Q.T @ V)

    def _matmat(self, V):
        return self._project(self.op._matmat(self._project(V)))

    def to_dense(self):
        P = np.eye(self.dim) - self.Q @ self.Q.T
        return P @ self.op.to_dense() @ P


def _basis_trace(op, ledger, label, chunk=256):
    # exact trace from the n standard basis vectors
    total = 0.0
    for start in range(0, op.dim, chunk):
        stop = min(op.dim, start + chunk)
        E = np.zeros((op.dim, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        total += float(np.trace(apply(op, E, ledger, label)[start:stop]))
    return total


def hutch_pp(op: LinearOperator, params: StaticParams,
             rng: np.random.Generator | None = None,
             ledger: QueryLedger | None = None,
             kind: ProbeKind | str = ProbeKind.RADEMACHER,
             exact_fallback: bool = False,
             label: str = "hutch_pp") -> TraceEstimate:
    """Hutch++ with sketch width and probe count from :func:`schatten_schedule`.

    The trace of the sketched part ``Q^T A Q`` is computed exactly and
    Hutchinson runs on the two-sided deflation. If the schedule needs more
    queries than probing the ``n`` basis vectors, ``exact_fallback=True``
    returns the exact trace at ``n`` queries; otherwise a schedule wider than
    ``op.dim`` raises :class:`DimensionError`.
    """
    rng = np.random.default_rng(rng)
    ledger = QueryLedger() if ledger is None else ledger
    before = ledger.total
    k, ell = schatten_schedule(params.eps, params.delta, params.p)
    if exact_fallback and 2 * k + ell >= op.dim:
        value = _basis_trace(op, ledger, label)
        return TraceEstimate(value, ledger.total - before)
    if k > op.dim:
        raise DimensionError(
            f"dimension below schedule: sketch width {k} exceeds dim {op.dim}")
    Q = range_finder(op, k, rng, ledger, label)
    sketched = 0.0
    if Q.shape[1]:
        AQ = apply(op, Q, ledger, label)
        sketched = float(np.einsum("ij,ij->", Q, AQ))
    residual = hutchinson(DeflatedOperator(op, Q), ell, kind, rng, ledger, label)
    return TraceEstimate(sketched + residual.value, ledger.total - before)


def predict_hutch_pp_queries(dim: int, params: StaticParams, cost: int = 1,
                             exact_fallback: bool = True) -> int:
    """Queries :func:`hutch_pp` spends when no sketch column is dropped."""
    k, ell = schatten_schedule(params.eps, params.delta, params.p)
    if exact_fallback and 2 * k + ell >= dim:
        return dim * cost
    return (2 * k + ell) * cost
