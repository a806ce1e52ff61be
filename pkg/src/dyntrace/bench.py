"""Experiment harness: synthetic perturbation streams, dynamic triangle
counting, comparison runs and error metrics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .baselines import BudgetPolicy, diffsum, per_step_hutchinson
from .dynamic import (
    DriftParams,
    Mode,
    StepEstimate,
    StreamSource,
    dynamic_estimate,
    fit_eps_to_budget,
)
from .formats import GraphStream
from .oracle import (
    DenseSymmetricOperator,
    LinearOperator,
    PowerOperator,
    QueryLedger,
    SparseSymmetricOperator,
    exact_trace,
    schatten_norm,
)
from .static import ProbeKind

LOW_SCALE = 5e-5
HIGH_RANK = 20
ENUMERATION_LIMIT = 2000


class EstimatorError(RuntimeError):
    """An estimator failed during an experiment; the message names it."""


# --- synthetic streams -------------------------------------------------------

def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def gen_synthetic_base(n: int, rng: np.random.Generator) -> DenseSymmetricOperator:
    """``U diag(lam) U^T`` with Haar ``U`` and ``lam`` uniform on [-1, 1]."""
    if n < 2:
        raise ValueError("n must be at least 2")
    U = random_orthogonal(n, rng)
    lam = rng.uniform(-1.0, 1.0, n)
    return DenseSymmetricOperator((U * lam) @ U.T)


def gen_perturbation(regime: str, n: int, rng: np.random.Generator,
                     high_scale: float | None = None) -> DenseSymmetricOperator:
    """One step update.

    ``low``: ``5e-5 r g g^T`` with a random sign ``r``.
    ``high``: sum of 20 terms ``c g_i g_i^T`` with ``c = 5e-3 / n`` by default.
    """
    if regime == "low":
        g = rng.standard_normal(n)
        r = rng.choice((-1.0, 1.0))
        return DenseSymmetricOperator(LOW_SCALE * r * np.outer(g, g))
    if regime == "high":
        if n < HIGH_RANK:
            raise ValueError(f"high regime needs n >= {HIGH_RANK}, got {n}")
        c = 5e-3 / n if high_scale is None else high_scale
        G = rng.standard_normal((n, HIGH_RANK))
        return DenseSymmetricOperator(c * (G @ G.T))
    raise ValueError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 200
    steps: int = 100
    regime: str = "low"
    seed: int = 0
    high_scale: float | None = None

    def instance(self, trial: int) -> "Instance":
        return synthetic_instance(self, trial)


@dataclass
class Instance:
    """A concrete stream together with its exact traces."""

    operators: list[LinearOperator]
    truth: np.ndarray
    dense: list[np.ndarray] | None = None
    _stats: dict = field(default_factory=dict, repr=False)

    @property
    def steps(self) -> int:
        return len(self.operators)

    @property
    def dim(self) -> int:
        return self.operators[0].dim

    @property
    def cost(self) -> int:
        return self.operators[0].cost

    @cached_property
    def scale(self) -> float:
        """Largest ``|tr A_i|``; the denominator of the relative error."""
        return float(np.max(np.abs(self.truth)))

    def drift_stats(self, p: float = 1.0) -> tuple[float, float, float]:
        """``(max ||A_{i+1} - A_i||_p, ||A_1||_p, max_i ||A_i||_p upper bound)``."""
        if p not in self._stats:
            mats = self.dense if self.dense is not None else [op.to_dense() for op in self.operators]
            steps = [schatten_norm(b - a, p) for a, b in zip(mats, mats[1:])]
            alpha = max(steps, default=0.0)
            first = schatten_norm(mats[0], p)
            self._stats[p] = (alpha, first, first + sum(steps))
        return self._stats[p]


def synthetic_instance(config: SyntheticConfig, trial: int = 0) -> Instance:
    rng = np.random.default_rng([config.seed, trial])
    A = gen_synthetic_base(config.n, rng)
    mats = [A.entries]
    truth = [exact_trace(A)]
    for _ in range(config.steps - 1):
        D = gen_perturbation(config.regime, config.n, rng, config.high_scale)
        mats.append(mats[-1] + D.entries)
        truth.append(truth[-1] + exact_trace(D))
    ops = [DenseSymmetricOperator(M) for M in mats]
    return Instance(ops, np.array(truth), dense=[op.entries for op in ops])


def synthetic_stream(config: SyntheticConfig, trial: int = 0) -> StreamSource:
    inst = synthetic_instance(config, trial)
    return StreamSource(inst.operators, alpha=inst.drift_stats(1.0)[0], p=1.0)


# --- dynamic graphs ----------------------------------------------------------

def random_graph_stream(nodes: int, steps: int, edge_prob: float,
                        rng: np.random.Generator, max_clique: int = 6) -> GraphStream:
    """Erdos-Renyi start graph and ``steps`` random cliques of size 2..max_clique."""
    iu, ju = np.triu_indices(nodes, k=1)
    keep = rng.random(iu.size) < edge_prob
    edges = set(zip(iu[keep].tolist(), ju[keep].tolist()))
    events = []
    for _ in range(steps):
        size = int(rng.integers(2, max_clique + 1))
        events.append(tuple(sorted(rng.choice(nodes, size, replace=False).tolist())))
    return GraphStream(nodes, edges, events)


def collaboration_graph_stream(nodes: int, steps: int, papers: int,
                               rng: np.random.Generator, max_clique: int = 6,
                               tail: float = 2.0) -> GraphStream:
    """Co-authorship style start graph: the union of ``papers`` cliques whose
    members are drawn with Pareto(``tail``) popularity weights, then ``steps``
    uniformly random cliques of size 2..max_clique."""
    w = rng.pareto(tail, nodes) + 1.0
    w /= w.sum()
    edges: set[tuple[int, int]] = set()
    for _ in range(papers):
        size = int(rng.integers(2, max_clique + 1))
        edges.update(_clique_edges(sorted(rng.choice(nodes, size, replace=False, p=w).tolist())))
    events = []
    for _ in range(steps):
        size = int(rng.integers(2, max_clique + 1))
        events.append(tuple(sorted(rng.choice(nodes, size, replace=False).tolist())))
    return GraphStream(nodes, edges, events)


def _clique_edges(clique):
    return [(u, v) if u < v else (v, u) for i, u in enumerate(clique) for v in clique[i + 1:]]


def edge_sets(g: GraphStream) -> list[set[tuple[int, int]]]:
    """Edge set after events ``1..i`` for ``i = 0..len(events)``."""
    cur = set(g.initial_edges)
    out = [set(cur)]
    for clique in g.step_events:
        cur.update(_clique_edges(clique))
        out.append(set(cur))
    return out


def adjacency(n: int, edges) -> sp.csr_matrix:
    if not edges:
        return sp.csr_matrix((n, n))
    e = np.array(sorted(edges))
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def count_triangles(n: int, edges) -> int:
    """Triangles by enumeration: for each edge ``u < v``, common neighbours ``w > v``."""
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for u, v in edges:
        nbrs[u].add(v)
        nbrs[v].add(u)
    count = 0
    for u, v in edges:
        a, b = (u, v) if u < v else (v, u)
        count += sum(1 for w in nbrs[a] & nbrs[b] if w > b)
    return count


def graph_to_stream(g: GraphStream) -> StreamSource:
    """Cubed adjacency operators, one per step (the initial graph first)."""
    return StreamSource([PowerOperator(SparseSymmetricOperator(adjacency(g.node_count, e)), 3)
                         for e in edge_sets(g)])


def graph_traces(g: GraphStream) -> np.ndarray:
    """``tr A_i^3 = 6 * triangles``, maintained incrementally from the start graph."""
    n = g.node_count
    cur = set(g.initial_edges)
    if n <= ENUMERATION_LIMIT:
        tri = count_triangles(n, cur)
    else:
        A = adjacency(n, cur).toarray()
        tri = int(round(np.trace(A @ A @ A) / 6))
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for u, v in cur:
        nbrs[u].add(v)
        nbrs[v].add(u)
    out = [6 * tri]
    for clique in g.step_events:
        for u, v in _clique_edges(clique):
            if (u, v) in cur:
                continue
            tri += len(nbrs[u] & nbrs[v])
            cur.add((u, v))
            nbrs[u].add(v)
            nbrs[v].add(u)
        out.append(6 * tri)
    return np.array(out, dtype=np.float64)


@dataclass(frozen=True)
class GraphConfig:
    """Dynamic graph experiment; ``model`` is ``"collab"`` (clique union with
    heavy-tailed popularity, ``papers`` cliques) or ``"gnp"`` (``edge_prob``)."""

    nodes: int = 500
    steps: int = 50
    model: str = "collab"
    papers: int = 600
    edge_prob: float = 0.02
    seed: int = 0
    max_clique: int = 6

    def __post_init__(self):
        if self.model not in ("collab", "gnp"):
            raise ValueError(f"unknown graph model {self.model!r}")

    def instance(self, trial: int) -> Instance:
        rng = np.random.default_rng([self.seed, trial])
        if self.model == "collab":
            g = collaboration_graph_stream(self.nodes, self.steps, self.papers, rng,
                                           self.max_clique)
        else:
            g = random_graph_stream(self.nodes, self.steps, self.edge_prob, rng,
                                    self.max_clique)
        return graph_instance(g)


def graph_instance(g: GraphStream) -> Instance:
    return Instance(graph_to_stream(g).operators, graph_traces(g))


@dataclass(frozen=True)
class FixedConfig:
    """A single fixed stream (e.g. read from a file), identical in every trial."""

    instance_: Instance

    def instance(self, trial: int) -> Instance:
        return self.instance_

    @classmethod
    def from_operators(cls, operators: Sequence[LinearOperator]) -> "FixedConfig":
        ops = list(operators)
        dense = [op.to_dense() for op in ops]
        return cls(Instance(ops, np.array([np.trace(M) for M in dense]), dense=dense))


# --- estimators under comparison --------------------------------------------

@dataclass(frozen=True)
class TreeEstimator:
    """Grouped binary-tree estimator.

    ``alpha`` and ``norm_bound`` default to the values measured on the stream.
    With ``relative=True``, ``eps`` is a fraction of ``|tr A_1|``. With
    ``fit_budget=True`` the error target is tightened or loosened until the
    predicted query count matches the experiment budget.
    """

    eps: float = 0.05
    delta: float = 0.1
    p: float = 1.0
    mode: str = "partitioned"
    groups: int | None = None
    alpha: float | None = None
    norm_bound: float | None = None
    relative: bool = False
    fit_budget: bool = False
    alpha_safety: float = 1.1
    label: str = "tree"

    @property
    def sets_budget(self) -> bool:
        return not self.fit_budget

    def drift_for(self, inst: Instance) -> DriftParams:
        alpha, first, bound = (None, None, None)
        if self.alpha is None or self.norm_bound is None:
            alpha, first, bound = inst.drift_stats(self.p)
        a = self.alpha if self.alpha is not None else max(alpha * self.alpha_safety, 1e-12)
        if self.norm_bound is not None:
            r = self.norm_bound
        else:
            r = first if Mode(self.mode) is Mode.FLAT else bound
        eps = self.eps * abs(inst.truth[0]) if self.relative else self.eps
        return DriftParams(a, eps, self.delta, self.p, max(r, 1e-12))

    def __call__(self, inst: Instance, rng, ledger: QueryLedger,
                 budget: int | None = None) -> list[StepEstimate]:
        drift = self.drift_for(inst)
        if self.fit_budget:
            if budget is None:
                raise ValueError("fit_budget needs an experiment budget")
            drift = fit_eps_to_budget(inst.steps, drift, inst.dim, budget, inst.cost,
                                      self.mode, self.groups)
        return dynamic_estimate(inst.operators, drift, self.mode, rng, ledger,
                                groups=self.groups, label=self.label)


@dataclass(frozen=True)
class HutchinsonEstimator:
    """Independent Hutchinson per step at ``budget / steps`` queries each."""

    kind: str = "rademacher"
    label: str = "hutch"
    sets_budget = False

    def __call__(self, inst, rng, ledger, budget=None):
        if budget is None:
            raise ValueError("per-step Hutchinson needs a budget")
        probes = budget // inst.steps // inst.cost
        if probes < 1:
            raise ValueError(f"budget {budget} gives no probe per step")
        return per_step_hutchinson(inst.operators, probes, rng, ledger, ProbeKind(self.kind),
                                   label=self.label)


@dataclass(frozen=True)
class DiffSumEstimator:
    first_fraction: float = 0.2
    kind: str = "rademacher"
    label: str = "diffsum"
    sets_budget = False

    def __call__(self, inst, rng, ledger, budget=None):
        if budget is None:
            raise ValueError("DiffSum needs a budget")
        return diffsum(inst.operators, BudgetPolicy(budget, self.first_fraction), rng, ledger,
                       ProbeKind(self.kind), label=self.label)


@dataclass(frozen=True)
class ExactEstimator:
    """Exact traces at zero queries (a harness sanity reference)."""

    label: str = "exact"
    sets_budget = False
    needs_budget = False

    def __call__(self, inst, rng, ledger, budget=None):
        return [StepEstimate(i + 1, float(t), 0) for i, t in enumerate(inst.truth)]


ESTIMATORS = {
    "tree": TreeEstimator,
    "hutch": HutchinsonEstimator,
    "diffsum": DiffSumEstimator,
    "exact": ExactEstimator,
}


# --- running and scoring -----------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    step: int
    estimator: str
    estimate: float
    true_value: float
    abs_error: float
    rel_error: float
    queries_cumulative: int
    trial_seed: int
    trial: int = 0


def trial_seed(master_seed: int, trial: int) -> int:
    state = np.random.SeedSequence(master_seed, spawn_key=(trial,)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def score(estimates: Sequence[StepEstimate], inst: Instance, label: str,
          seed: int, trial: int) -> list[RunRecord]:
    scale = inst.scale
    out = []
    for est, truth in zip(estimates, inst.truth):
        err = abs(est.value - float(truth))
        rel = err / scale if scale > 0 else math.nan
        out.append(RunRecord(est.step, label, est.value, float(truth), err, rel,
                             est.queries_cumulative, seed, trial))
    return out


def run_trial(config, estimators: Sequence, trial: int, master_seed: int = 0,
              budget: int | None = None) -> tuple[list[RunRecord], dict[str, int]]:
    """One trial: every estimator on the same stream with its own rng stream.

    Without an explicit ``budget`` the budget-setting estimators (the tree at
    its own schedule) run first and the others get the largest query total.
    """
    inst = config.instance(trial)
    seed = trial_seed(master_seed, trial)
    order = sorted(range(len(estimators)),
                   key=lambda i: not getattr(estimators[i], "sets_budget", False))
    records: dict[int, list[RunRecord]] = {}
    totals: dict[str, int] = {}
    for i in order:
        est = estimators[i]
        if (budget is None and not getattr(est, "sets_budget", False)
                and getattr(est, "needs_budget", True)):
            if not totals:
                raise EstimatorError(f"{est.label}: no budget given and no tree to set one")
            budget = max(totals.values())
        ledger = QueryLedger()
        try:
            steps = est(inst, np.random.default_rng([seed, i]), ledger, budget)
        except Exception as exc:
            raise EstimatorError(f"{est.label}: {exc}") from exc
        totals[est.label] = ledger.total
        records[i] = score(steps, inst, est.label, seed, trial)
    return [r for i in range(len(estimators)) for r in records[i]], totals


def run_experiment(config, estimators: Sequence, trials: int = 1, master_seed: int = 0,
                   budget: int | None = None, jobs: int = 1) -> list[RunRecord]:
    """Records for every (trial, step, estimator); identical for any ``jobs``."""
    if not estimators:
        raise ValueError("at least one estimator is required")
    if trials < 1:
        raise ValueError("trials must be positive")

    def one(t):
        return run_trial(config, estimators, t, master_seed, budget)[0]

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(one, range(trials)))
    else:
        parts = [one(t) for t in range(trials)]
    return [r for part in parts for r in part]


def summarize(records: Sequence[RunRecord]) -> dict[str, dict[str, float]]:
    """Per-estimator mean absolute/relative error, final-quartile error and mean queries."""
    out: dict[str, dict[str, float]] = {}
    for label in sorted({r.estimator for r in records}):
        rows = [r for r in records if r.estimator == label]
        last = max(r.step for r in rows)
        tail = [r.abs_error for r in rows if r.step > 0.75 * last]
        finals: dict[int, int] = {}
        for r in rows:
            finals[r.trial] = max(finals.get(r.trial, 0), r.queries_cumulative)
        out[label] = {
            "mean_abs_error": float(np.mean([r.abs_error for r in rows])),
            "mean_rel_error": float(np.mean([r.rel_error for r in rows])),
            "max_rel_error": float(np.max([r.rel_error for r in rows])),
            "final_quartile_abs_error": float(np.mean(tail)),
            "mean_queries": float(np.mean(list(finals.values()))),
        }
    return out
