import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyntrace.oracle import (
    DenseSymmetricOperator,
    DiagonalOperator,
    DimensionError,
    IdentityOperator,
    PowerOperator,
    QueryLedger,
    apply,
    exact_trace,
    schatten_norm,
)
from dyntrace.static import (
    DeflatedOperator,
    ProbeKind,
    StaticParams,
    draw_probes,
    hutch_budget,
    hutch_pp,
    hutchinson,
    orthonormalize,
    predict_hutch_pp_queries,
    range_finder,
    schatten_schedule,
)


def random_symmetric(n, rng):
    G = rng.standard_normal((n, n))
    return (G + G.T) / 2


def low_rank(n, r, rng):
    U = rng.standard_normal((n, r))
    return U @ np.diag(rng.standard_normal(r)) @ U.T


# --- hutchinson --------------------------------------------------------------

@pytest.mark.parametrize("probes", [1, 3, 17])
def test_hutchinson_identity_exact(probes):
    est = hutchinson(IdentityOperator(5), probes, rng=0)
    assert est.value == 5.0
    assert est.queries_used == probes


def test_hutchinson_zero():
    assert hutchinson(DenseSymmetricOperator(np.zeros((4, 4))), 3, rng=1).value == 0.0


def test_hutchinson_gaussian_diag():
    est = hutchinson(DiagonalOperator([1.0, 2.0, 3.0]), 10_000, ProbeKind.GAUSSIAN, rng=5)
    assert abs(est.value - 6.0) <= 3 * math.sqrt(2 * 14 / 1e4)


def test_hutchinson_rejects_zero_probes():
    with pytest.raises(ValueError):
        hutchinson(IdentityOperator(2), 0)


def test_hutchinson_charges_operator_cost():
    led = QueryLedger()
    est = hutchinson(PowerOperator(DiagonalOperator([1.0, 2.0]), 3), 4, rng=0, ledger=led)
    assert est.queries_used == 12 == led.total


def test_probe_kinds():
    rng = np.random.default_rng(0)
    R = draw_probes(rng, 50, 20, "rademacher")
    assert set(np.unique(R)) == {-1.0, 1.0}
    G = draw_probes(rng, 2000, 50, "gaussian")
    assert abs(G.mean()) < 0.01 and abs(G.std() - 1) < 0.01


def test_hutchinson_unbiased():
    rng = np.random.default_rng(11)
    A = DenseSymmetricOperator(random_symmetric(50, rng))
    vals = np.array([hutchinson(A, 1, rng=rng).value for _ in range(10_000)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - exact_trace(A)) <= 4 * se


# --- budgets and schedules ---------------------------------------------------

def test_hutch_budget_examples():
    assert hutch_budget(1.0, math.exp(-1)) == 4
    assert hutch_budget(0.5, math.exp(-1)) == 16


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.001, 0.999))
def test_hutch_budget_monotone(e1, e2, delta):
    lo, hi = sorted((e1, e2))
    assert hutch_budget(lo, delta) >= hutch_budget(hi, delta)


@pytest.mark.parametrize("eps,delta", [(0.0, 0.1), (1.5, 0.1), (0.1, 0.0), (0.1, 1.0)])
def test_hutch_budget_rejects(eps, delta):
    with pytest.raises(ValueError):
        hutch_budget(eps, delta)


@pytest.mark.parametrize("eps,delta,p,expected", [
    (0.1, math.exp(-1), 2, 100),
    (0.1, math.exp(-1), 1, 10),
    (0.5, math.exp(-9), 1, 9),
])
def test_schatten_schedule_examples(eps, delta, p, expected):
    assert schatten_schedule(eps, delta, p) == (expected, expected)


@pytest.mark.parametrize("eps,delta,p", [(0.1, 0.1, 0.5), (0.1, 0.1, 2.5), (-1, 0.1, 1),
                                         (0.1, 1.0, 1)])
def test_schatten_schedule_rejects(eps, delta, p):
    with pytest.raises(ValueError):
        schatten_schedule(eps, delta, p)


# --- range finder ------------------------------------------------------------

def test_range_finder_rank_one():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(30)
    A = np.outer(v, v)
    for width in (1, 3):
        Q = range_finder(DenseSymmetricOperator(A), width, rng)
        assert np.linalg.norm(A - Q @ Q.T @ A) < 1e-8
        np.testing.assert_allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-8)


def test_range_finder_zero_matrix():
    Q = range_finder(DenseSymmetricOperator(np.zeros((5, 5))), 2, rng=0)
    A = np.zeros((5, 5))
    assert np.linalg.norm(A - Q @ Q.T @ A) == 0.0


def test_range_finder_near_best_rank_two():
    d = np.array([10.0, 1.0, 0.1, 0.01])
    A = np.diag(d)
    best = np.linalg.norm(d[2:])
    Q = range_finder(DiagonalOperator(d), 2, rng=3)
    assert np.linalg.norm(A - Q @ Q.T @ A) <= 10 * best


def test_range_finder_width_and_queries():
    led = QueryLedger()
    A = DenseSymmetricOperator(random_symmetric(20, np.random.default_rng(1)))
    Q = range_finder(A, 7, 0, led)
    assert Q.shape == (20, 7) and led.total == 7
    np.testing.assert_allclose(Q.T @ Q, np.eye(7), atol=1e-8)
    with pytest.raises(DimensionError):
        range_finder(A, 21)


def test_orthonormalize_drops_dependent_columns():
    v = np.random.default_rng(0).standard_normal((10, 1))
    Q = orthonormalize(np.hstack([v, 2 * v, -v]))
    assert Q.shape == (10, 1)


# --- hutch++ -----------------------------------------------------------------

def test_hutch_pp_rank_one_exact():
    rng = np.random.default_rng(4)
    v = rng.standard_normal(40)
    v *= math.sqrt(7) / np.linalg.norm(v)
    est = hutch_pp(DenseSymmetricOperator(np.outer(v, v)), StaticParams(0.5, 0.3), rng)
    assert abs(est.value - 7.0) < 1e-8


def test_hutch_pp_zero():
    est = hutch_pp(DenseSymmetricOperator(np.zeros((30, 30))), StaticParams(0.5, 0.3), 0)
    assert est.value == 0.0


def test_hutch_pp_harmonic_diagonal():
    d = 1.0 / np.arange(1.0, 501.0)
    op = DiagonalOperator(d)
    params = StaticParams(0.2, 0.05, 1.0)
    rng = np.random.default_rng(8)
    ok = sum(abs(hutch_pp(op, params, rng).value - d.sum()) <= 0.2 * d.sum()
             for _ in range(200))
    assert ok >= 190


def test_hutch_pp_dimension_below_schedule():
    with pytest.raises(DimensionError, match="dimension below schedule"):
        hutch_pp(IdentityOperator(10), StaticParams(0.1, 0.1, 2.0), 0)


def test_hutch_pp_exact_fallback():
    rng = np.random.default_rng(0)
    A = DenseSymmetricOperator(random_symmetric(10, rng))
    led = QueryLedger()
    est = hutch_pp(A, StaticParams(0.1, 0.1, 2.0), rng, led, exact_fallback=True)
    assert est.value == pytest.approx(exact_trace(A), abs=1e-12)
    assert est.queries_used == 10 == led.total


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 10))
def test_hutch_pp_rank_exactness(seed, rank):
    rng = np.random.default_rng(seed)
    A = low_rank(60, rank, rng)
    params = StaticParams(1.0, 0.1, 1.0)   # sketch width 3, raised to the rank below
    k, _ = schatten_schedule(params.eps, params.delta, params.p)
    if k < rank:
        params = StaticParams(1.0 / rank, 0.1, 1.0)
    est = hutch_pp(DenseSymmetricOperator(A), params, rng)
    assert abs(est.value - np.trace(A)) <= 1e-8 * max(1.0, np.abs(A).max())


@pytest.mark.parametrize("cost", [1, 3])
def test_hutch_pp_query_accounting(cost):
    rng = np.random.default_rng(2)
    base = DenseSymmetricOperator(random_symmetric(120, rng))
    op = PowerOperator(base, cost)
    params = StaticParams(0.3, 0.05, 1.0)
    k, ell = schatten_schedule(0.3, 0.05, 1.0)
    led = QueryLedger()
    est = hutch_pp(op, params, rng, led)
    # sketch k + trace evaluation k + residual ell, each at the operator cost
    assert est.queries_used == led.total == (2 * k + ell) * cost
    assert predict_hutch_pp_queries(120, params, cost) == led.total


def test_deflation_orthogonality():
    rng = np.random.default_rng(5)
    A = DenseSymmetricOperator(random_symmetric(40, rng))
    Q = range_finder(A, 6, rng)
    R = DeflatedOperator(A, Q)
    for _ in range(10):
        v = rng.standard_normal(40)
        assert np.linalg.norm(Q.T @ apply(R, v)) <= 1e-7 * np.linalg.norm(v)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
@pytest.mark.parametrize("eps", [0.1, 0.25])
@pytest.mark.parametrize("delta", [0.05, 0.01])
def test_hutch_pp_guarantee_coverage(eps, delta, p):
    T = 400
    rng = np.random.default_rng([int(eps * 100), int(delta * 1000), int(p * 10)])
    A = random_symmetric(200, rng)
    op = DenseSymmetricOperator(A)
    bound = eps * schatten_norm(A, p)
    tr = np.trace(A)
    params = StaticParams(eps, delta, p)
    fails = sum(abs(hutch_pp(op, params, rng, exact_fallback=True).value - tr) > bound
                for _ in range(T))
    assert fails / T <= delta + 3 * math.sqrt(delta * (1 - delta) / T)


def test_static_params_validation():
    with pytest.raises(ValueError):
        StaticParams(0.1, 0.1, 3.0)
    with pytest.raises(ValueError):
        StaticParams(0.0, 0.1)
    with pytest.raises(ValueError):
        StaticParams(0.1, 1.5)
