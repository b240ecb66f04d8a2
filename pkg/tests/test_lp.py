import numpy as np
import pytest
from hypothesis import given, strategies as st

from nbcverify.lp import EQ, GE, LE, LpProblem, LpStalled, solve_lp, solve_lp_many

from oracles import lp_vertex_max


def test_simple_optimal():
    out = solve_lp(LpProblem([1, 1], [[1, 1]], [LE], [1], [0, 0], [1, 1]))
    assert out.status == "optimal" and out.objective == pytest.approx(1.0)


def test_infeasible():
    out = solve_lp(LpProblem([1], [[1], [1]], [GE, LE], [1, 0], [-np.inf], [np.inf]))
    assert out.status == "infeasible"


def test_unbounded():
    assert solve_lp(LpProblem([1], np.zeros((0, 1)), [], [], [0], [np.inf])).status == "unbounded"


def test_equality_and_free_variables():
    # max x - y  s.t. x + y = 2, x - y <= 1, x, y free
    out = solve_lp(LpProblem([1, -1], [[1, 1], [1, -1]], [EQ, LE], [2, 1], [-np.inf] * 2, [np.inf] * 2))
    assert out.status == "optimal" and out.objective == pytest.approx(1.0)
    assert out.x == pytest.approx([1.5, 0.5])


def random_lp(seed):
    r = np.random.default_rng(seed)
    n, m = int(r.integers(1, 5)), int(r.integers(1, 7))
    A = r.integers(-5, 6, size=(m, n)).astype(float)
    b = r.integers(-5, 6, size=m).astype(float)
    senses = list(r.choice([LE, GE, EQ], size=m, p=[0.45, 0.45, 0.1]))
    c = r.integers(-5, 6, size=n).astype(float)
    return LpProblem(c, A, senses, b, np.full(n, -10.0), np.full(n, 10.0))


def test_matches_vertex_enumeration_200():
    for seed in range(200):
        p = random_lp(seed)
        out = solve_lp(p)
        status, val = lp_vertex_max(p.c, p.A, p.senses, p.b, p.lo, p.hi)
        assert out.status == status, seed
        if status == "optimal":
            assert abs(out.objective - val) <= 1e-6, seed
            assert p.violation(out.x) <= 1e-7


@given(st.integers(0, 2**31 - 1))
def test_deterministic_and_feasible(seed):
    p = random_lp(seed)
    a, b = solve_lp(p), solve_lp(p)
    assert a.status == b.status
    if a.status == "optimal":
        assert a.objective == b.objective and p.violation(a.x) <= 1e-7


@given(st.integers(0, 2**31 - 1))
def test_redundant_constraint_is_harmless(seed):
    p = random_lp(seed)
    base = solve_lp(p)
    # sum of the box upper bounds implies this row
    q = LpProblem(p.c, np.vstack([p.A, np.ones(p.n)]), p.senses + [LE],
                  np.append(p.b, 10.0 * p.n + 1), p.lo, p.hi)
    out = solve_lp(q)
    assert out.status == base.status
    if base.status == "optimal":
        assert abs(out.objective - base.objective) <= 1e-6


def test_solve_many_matches_individual():
    p = random_lp(3)
    while solve_lp(p).status != "optimal":
        p = random_lp(int(np.random.default_rng(0).integers(1000)))
    objs = [np.eye(p.n)[i] for i in range(p.n)] + [-np.ones(p.n)]
    many = solve_lp_many(p, objs)
    for c, out in zip(objs, many):
        single = solve_lp(LpProblem(c, p.A, p.senses, p.b, p.lo, p.hi))
        assert out.objective == pytest.approx(single.objective, abs=1e-9)


def test_degenerate_cycling_example():
    # Beale's classic cycling LP (max form); Bland fallback must terminate
    c = [0.75, -150, 0.02, -6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    out = solve_lp(LpProblem(c, A, [LE] * 3, [0, 0, 1], [0] * 4, [np.inf] * 4))
    assert out.status == "optimal" and out.objective == pytest.approx(0.05)


def test_validation_and_text():
    with pytest.raises(ValueError):
        LpProblem([1], [[1]], ["<"], [1], [0], [1])
    with pytest.raises(ValueError):
        LpProblem([1], [[1]], [LE], [1], [2], [1])
    text = LpProblem([1, -2], [[1, 1]], [LE], [3], [0, 0], [1, np.inf]).to_lp_text()
    assert "Maximize" in text and "c0:" in text and "+inf" in text
    assert issubclass(LpStalled, RuntimeError)
