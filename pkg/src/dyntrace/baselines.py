"""Comparison estimators: independent per-step Hutchinson and DiffSum."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamic import StepEstimate
from .oracle import LinearOperator, QueryLedger, common_dim, difference
from .static import ProbeKind, hutchinson


class BudgetError(ValueError):
    """Raised when a query budget cannot give every step at least one probe."""


@dataclass(frozen=True)
class BudgetPolicy:
    """DiffSum allocation: ``ceil(first_fraction * total_budget)`` queries for
    the first step, the rest split equally over the differences."""

    total_budget: int
    first_fraction: float = 0.2

    def __post_init__(self):
        if int(self.total_budget) < 1:
            raise BudgetError(f"total_budget must be positive, got {self.total_budget}")
        if not 0.0 < self.first_fraction <= 1.0:
            raise ValueError(f"first_fraction must lie in (0, 1], got {self.first_fraction}")

    @property
    def first_allocation(self) -> int:
        return math.ceil(self.first_fraction * self.total_budget)


def split_evenly(total: int, parts: int) -> list[int]:
    """``total`` split into ``parts`` integers; the remainder goes to the earliest parts."""
    q, r = divmod(int(total), int(parts))
    return [q + (i < r) for i in range(parts)]


def per_step_hutchinson(stream: Sequence[LinearOperator], probes_per_step: int,
                        rng=None, ledger: QueryLedger | None = None,
                        kind: ProbeKind | str = ProbeKind.RADEMACHER,
                        label: str = "hutch") -> list[StepEstimate]:
    ops = list(stream)
    if not ops:
        raise ValueError("empty stream")
    common_dim(ops)
    rng = np.random.default_rng(rng)
    ledger = QueryLedger() if ledger is None else ledger
    out = []
    for i, op in enumerate(ops):
        est = hutchinson(op, probes_per_step, kind, rng, ledger, label)
        out.append(StepEstimate(i + 1, est.value, ledger.total))
    return out


def diffsum_allocation(stream: Sequence[LinearOperator], policy: BudgetPolicy) -> list[int]:
    """Probe counts: first step, then one entry per difference ``A_i - A_{i-1}``."""
    ops = list(stream)
    first_cost = ops[0].cost
    if len(ops) == 1:
        probes = [policy.total_budget // first_cost]
    else:
        first = policy.first_allocation // first_cost
        remaining = policy.total_budget - first * first_cost
        diff_cost = ops[1].cost + ops[0].cost
        probes = [first] + split_evenly(remaining // diff_cost, len(ops) - 1)
    if min(probes) < 1:
        raise BudgetError(
            f"budget {policy.total_budget} leaves a step without a probe "
            f"({len(ops)} steps)")
    return probes


def diffsum(stream: Sequence[LinearOperator], policy: BudgetPolicy, rng=None,
            ledger: QueryLedger | None = None,
            kind: ProbeKind | str = ProbeKind.RADEMACHER,
            label: str = "diffsum") -> list[StepEstimate]:
    """``t_i = t_1 + sum_{j <= i} d_j`` with every term a separate Hutchinson estimate."""
    ops = list(stream)
    if not ops:
        raise ValueError("empty stream")
    common_dim(ops)
    probes = diffsum_allocation(ops, policy)
    rng = np.random.default_rng(rng)
    ledger = QueryLedger() if ledger is None else ledger
    t = hutchinson(ops[0], probes[0], kind, rng, ledger, label).value
    out = [StepEstimate(1, t, ledger.total)]
    for i in range(1, len(ops)):
        t += hutchinson(difference(ops[i], ops[i - 1]), probes[i], kind, rng, ledger,
                        label).value
        out.append(StepEstimate(i + 1, t, ledger.total))
    return out
