"""Text formats for matrix sequences, dynamic graphs and result records.

Sequence file::

    DYNTRACE-SEQ 1
    n <n> steps <m>
    MATRIX 0
    <n lines of n floats>
    SPARSE 1 <k>
    <k lines "i j value">      # A_t = A_{t-1} + value (e_i e_j^T + e_j e_i^T)
    ...

A diagonal entry ``i == j`` in a SPARSE block adds ``value`` once.

Graph file::

    DYNTRACE-GRAPH 1
    nodes <n>
    E u v                      # initial edges
    CLIQUE u1 u2 ... uk        # one line per step, 2 <= k <= 6
"""

from __future__ import annotations

import csv
import io
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SEQ_MAGIC = "DYNTRACE-SEQ 1"
GRAPH_MAGIC = "DYNTRACE-GRAPH 1"
MAX_CLIQUE = 6
CSV_HEADER = ("step", "estimator", "estimate", "true_value", "abs_error", "rel_error",
              "queries_cumulative", "trial_seed")


class FormatError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


@dataclass
class GraphStream:
    """Simple undirected graph plus a list of clique insertions.

    Edges are stored as ``(u, v)`` with ``u < v``; inserting an existing edge
    is a no-op.
    """

    node_count: int
    initial_edges: set[tuple[int, int]] = field(default_factory=set)
    step_events: list[tuple[int, ...]] = field(default_factory=list)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        self.initial_edges = {self._edge(u, v) for u, v in self.initial_edges}
        self.step_events = [self._clique(c) for c in self.step_events]

    def _edge(self, u, v):
        u, v = int(u), int(v)
        for x in (u, v):
            if not 0 <= x < self.node_count:
                raise ValueError(f"vertex {x} out of range [0, {self.node_count})")
        if u == v:
            raise ValueError(f"self-loop at vertex {u}")
        return (u, v) if u < v else (v, u)

    def _clique(self, vertices):
        vs = tuple(int(x) for x in vertices)
        if not 2 <= len(vs) <= MAX_CLIQUE or len(set(vs)) != len(vs):
            raise ValueError(f"clique must have 2..{MAX_CLIQUE} distinct vertices, got {vs}")
        for x in vs:
            if not 0 <= x < self.node_count:
                raise ValueError(f"vertex {x} out of range [0, {self.node_count})")
        return vs


def _open_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def _floats(path, lineno, tokens, expected):
    if len(tokens) != expected:
        raise FormatError(path, lineno, f"expected {expected} values, got {len(tokens)}")
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise FormatError(path, lineno, str(exc)) from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError(path, lineno, "non-finite value")
    return vals


def read_sequence_matrices(path) -> list[np.ndarray]:
    """Dense matrices ``A_0..A_{m-1}`` from a sequence file."""
    lines = _open_lines(path)
    lineno, line = next(lines, (1, ""))
    if line != SEQ_MAGIC:
        raise FormatError(path, lineno, f"expected header {SEQ_MAGIC!r}")
    lineno, line = next(lines, (lineno + 1, ""))
    tok = line.split()
    if len(tok) != 4 or tok[0] != "n" or tok[2] != "steps":
        raise FormatError(path, lineno, "expected 'n <n> steps <m>'")
    try:
        n, m = int(tok[1]), int(tok[3])
    except ValueError:
        raise FormatError(path, lineno, "n and steps must be integers") from None
    if n < 1 or m < 1:
        raise FormatError(path, lineno, "n and steps must be positive")

    mats: list[np.ndarray] = []
    for t in range(m):
        lineno, line = next(lines, (lineno + 1, None))
        if line is None:
            raise FormatError(path, lineno, f"missing block for step {t}")
        tok = line.split()
        if tok[0] == "MATRIX" and len(tok) == 2 and tok[1] == str(t):
            A = np.empty((n, n))
            for r in range(n):
                lineno, line = next(lines, (lineno + 1, None))
                if line is None:
                    raise FormatError(path, lineno,
                                      f"MATRIX {t} truncated: expected {n} rows, got {r}")
                A[r] = _floats(path, lineno, line.split(), n)
        elif tok[0] == "SPARSE" and len(tok) == 3 and tok[1] == str(t):
            if t == 0:
                raise FormatError(path, lineno, "step 0 must be a MATRIX block")
            try:
                k = int(tok[2])
            except ValueError:
                raise FormatError(path, lineno, "SPARSE entry count must be an integer") from None
            A = mats[-1].copy()
            for _ in range(k):
                lineno, line = next(lines, (lineno + 1, None))
                if line is None:
                    raise FormatError(path, lineno, f"SPARSE {t} truncated: expected {k} entries")
                parts = line.split()
                if len(parts) != 3:
                    raise FormatError(path, lineno, "expected 'i j value'")
                try:
                    i, j = int(parts[0]), int(parts[1])
                except ValueError:
                    raise FormatError(path, lineno, "indices must be integers") from None
                if not (0 <= i < n and 0 <= j < n):
                    raise FormatError(path, lineno, f"index out of range for n={n}")
                (v,) = _floats(path, lineno, parts[2:], 1)
                A[i, j] += v
                if i != j:
                    A[j, i] += v
        else:
            raise FormatError(path, lineno, f"expected 'MATRIX {t}' or 'SPARSE {t} <k>'")
        mats.append(A)
    extra = next(lines, None)
    if extra is not None:
        raise FormatError(path, extra[0], "unexpected content after last step")
    return mats


def read_sequence_file(path):
    """Sequence file as a :class:`~dyntrace.dynamic.StreamSource` of dense operators."""
    from .dynamic import StreamSource
    from .oracle import DenseSymmetricOperator

    return StreamSource([DenseSymmetricOperator(A) for A in read_sequence_matrices(path)])


def write_sequence_file(path, matrices: Sequence[np.ndarray], sparse: bool = False) -> None:
    """Write matrices; with ``sparse=True`` later steps are stored as upper-triangle deltas."""
    mats = [np.asarray(A, dtype=np.float64) for A in matrices]
    n = mats[0].shape[0]
    with open(path, "w") as fh:
        fh.write(f"{SEQ_MAGIC}\nn {n} steps {len(mats)}\n")
        for t, A in enumerate(mats):
            if A.shape != (n, n):
                raise ValueError(f"step {t} has shape {A.shape}, expected {(n, n)}")
            if sparse and t > 0:
                D = np.triu(A - mats[t - 1])
                ii, jj = np.nonzero(D)
                fh.write(f"SPARSE {t} {len(ii)}\n")
                for i, j in zip(ii, jj):
                    fh.write(f"{i} {j} {float(D[i, j])!r}\n")
            else:
                fh.write(f"MATRIX {t}\n")
                for row in A:
                    fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_graph_file(path) -> GraphStream:
    lines = _open_lines(path)
    lineno, line = next(lines, (1, ""))
    if line != GRAPH_MAGIC:
        raise FormatError(path, lineno, f"expected header {GRAPH_MAGIC!r}")
    lineno, line = next(lines, (lineno + 1, ""))
    tok = line.split()
    if len(tok) != 2 or tok[0] != "nodes":
        raise FormatError(path, lineno, "expected 'nodes <n>'")
    try:
        g = GraphStream(int(tok[1]))
    except ValueError as exc:
        raise FormatError(path, lineno, str(exc)) from None
    for lineno, line in lines:
        tok = line.split()
        try:
            if tok[0] == "E" and len(tok) == 3:
                if g.step_events:
                    raise ValueError("edge line after the first CLIQUE line")
                g.initial_edges.add(g._edge(int(tok[1]), int(tok[2])))
            elif tok[0] == "CLIQUE":
                g.step_events.append(g._clique(int(x) for x in tok[1:]))
            else:
                raise ValueError(f"unrecognized line {line!r}")
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
    return g


def write_graph_file(path, graph: GraphStream) -> None:
    with open(path, "w") as fh:
        fh.write(f"{GRAPH_MAGIC}\nnodes {graph.node_count}\n")
        for u, v in sorted(graph.initial_edges):
            fh.write(f"E {u} {v}\n")
        for clique in graph.step_events:
            fh.write("CLIQUE " + " ".join(map(str, clique)) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_records(records: Iterable, destination) -> None:
    """CSV of run records, sorted by (estimator, trial, step).

    ``destination`` is a path, ``"-"`` for standard output, or a text stream.
    """
    rows = sorted(records, key=lambda r: (r.estimator, r.trial, r.step))
    if destination == "-":
        _write_csv(rows, sys.stdout)
    elif isinstance(destination, (str, os.PathLike)):
        with open(destination, "w", newline="") as fh:
            _write_csv(rows, fh)
    else:
        _write_csv(rows, destination)


def _write_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])


def read_records(source) -> list[dict]:
    """Parse a results CSV back into dictionaries with typed values."""
    text = open(source).read() if isinstance(source, (str, os.PathLike)) else source.read()
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append({
            "step": int(row["step"]),
            "estimator": row["estimator"],
            "estimate": float(row["estimate"]),
            "true_value": float(row["true_value"]),
            "abs_error": float(row["abs_error"]),
            "rel_error": float(row["rel_error"]),
            "queries_cumulative": int(row["queries_cumulative"]),
            "trial_seed": int(row["trial_seed"]),
        })
    return out
