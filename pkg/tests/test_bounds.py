import numpy as np
import pytest
from hypothesis import given, strategies as st

from nbcverify.bab import encode_property
from nbcverify.bounds import (ACTIVE, INACTIVE, BoundsMap, BranchConstraints, InputBox,
                              SoundnessError, StabilityReport, classify_neurons, compute_bounds,
                              ibp_bounds, intersect_bounds, linear_bounds, margin_lower_bounds,
                              neuron_states, stable_percent)
from nbcverify.network import Affine, Network, ReLU, forward, mlp

METHODS = [ibp_bounds, linear_bounds, compute_bounds]


def absnet():
    return Network([Affine(np.array([[1.0], [-1.0]]), np.zeros(2)), ReLU(),
                    Affine(np.array([[1.0, 1.0]]), np.zeros(1))], (1,))


def test_affine_ibp():
    net = Network([Affine(np.array([[2.0]]), np.array([-1.0])), ReLU(),
                   Affine(np.array([[1.0]]), np.zeros(1))], (1,))
    b = ibp_bounds(net, InputBox([0.0], [1.0]))
    assert np.allclose([b.lower[0], b.upper[0]], [[-1.0], [1.0]])
    assert np.allclose([b.out_lower, b.out_upper], [[0.0], [1.0]])


def test_abs_toy_ibp_vs_linear():
    box = InputBox([-1.0], [1.0])
    ib, lb = ibp_bounds(absnet(), box), linear_bounds(absnet(), box)
    assert ib.out_lower[0] == 0.0 and ib.out_upper[0] == 2.0
    assert lb.out_upper[0] == pytest.approx(1.0)
    assert lb.out_lower[0] <= 0.0


def test_pure_affine_linear_equals_ibp(rng):
    net = Network([Affine(rng.normal(size=(3, 4)), rng.normal(size=3))], (4,))
    box = InputBox.around(rng.uniform(size=4), 0.2)
    a, b = ibp_bounds(net, box), linear_bounds(net, box)
    assert np.allclose(a.out_lower, b.out_lower) and np.allclose(a.out_upper, b.out_upper)


def _check_sound(net, box, n, rng):
    xs = box.sample(n, rng)
    tr = forward(net, xs)
    for fn in METHODS:
        b = fn(net, box)
        for k, pre in enumerate(tr.pre):
            assert np.all(pre >= b.lower[k] - 1e-9) and np.all(pre <= b.upper[k] + 1e-9)
        assert np.all(tr.logits >= b.out_lower - 1e-9) and np.all(tr.logits <= b.out_upper + 1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_soundness_random_nets(seed):
    rng = np.random.default_rng(seed)
    net = mlp([2, 8, 8, 2], seed)
    box = InputBox.around(rng.uniform(size=2), rng.uniform(0.01, 0.5))
    _check_sound(net, box, 10_000, rng)


@given(st.integers(0, 10_000), st.floats(0.0, 0.3))
def test_soundness_property(seed, eps):
    rng = np.random.default_rng(seed)
    net = mlp([3, 6, 5, 2], seed % 11)
    _check_sound(net, InputBox.around(rng.uniform(size=3), eps), 500, rng)


def test_intersected_tighter_than_each(rng):
    net = mlp([4, 10, 10, 3], 5)
    box = InputBox.around(rng.uniform(size=4), 0.1)
    i, l, c = ibp_bounds(net, box), linear_bounds(net, box), compute_bounds(net, box)
    for k in range(2):
        assert np.all(c.lower[k] >= np.maximum(i.lower[k], l.lower[k]) - 1e-12)
        assert np.all(c.upper[k] <= np.minimum(i.upper[k], l.upper[k]) + 1e-12)


def test_intersect_examples():
    a = BoundsMap([np.array([-2.0])], [np.array([2.0])], np.zeros(1), np.ones(1), "ibp")
    b = BoundsMap([np.array([-1.0])], [np.array([3.0])], np.zeros(1), np.ones(1), "linear")
    c = intersect_bounds(a, b)
    assert c.lower[0][0] == -1.0 and c.upper[0][0] == 2.0
    same = intersect_bounds(a, a)
    assert np.array_equal(same.lower[0], a.lower[0]) and np.array_equal(same.upper[0], a.upper[0])
    bad = BoundsMap([np.array([5.0])], [np.array([6.0])], np.zeros(1), np.ones(1), "x")
    with pytest.raises(SoundnessError):
        intersect_bounds(a, bad)


def test_classify_examples():
    s = neuron_states(np.array([0.1, -0.5, -0.1, 0.0]), np.array([0.5, -0.1, 0.1, 0.0]))
    assert list(s) == [ACTIVE, INACTIVE, 0, INACTIVE]


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 5)), min_size=1, max_size=20))
def test_classify_counts_total(pairs):
    l = np.array([a for a, _ in pairs])
    u = l + np.array([w for _, w in pairs])
    rep = classify_neurons(BoundsMap([l], [u], np.zeros(1), np.zeros(1), "x"))
    assert rep.total == len(pairs) and rep.stable + rep.unstable == rep.total


def test_stable_percent_arithmetic(monkeypatch):
    import nbcverify.bounds as bmod
    reports = iter([StabilityReport([{"active": 1, "inactive": 0, "unstable": 1}]),
                    StabilityReport([{"active": 2, "inactive": 0, "unstable": 0}])])
    monkeypatch.setattr(bmod, "classify_neurons", lambda b: next(reports))
    net = mlp([2, 2, 2], 0)
    props = [encode_property([0.5, 0.5], 0.1, 0)] * 2
    assert bmod.stable_percent(net, props) == pytest.approx(75.0)


def test_stable_percent_point_box():
    net = mlp([3, 6, 6, 2], 4)
    props = [encode_property(x, 0.0, 0) for x in np.random.default_rng(0).uniform(size=(5, 3))]
    assert stable_percent(net, props) == 100.0


@given(st.integers(0, 1000), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
def test_ibp_monotone_in_eps(seed, e1, e2):
    small, big = sorted([e1, e2])
    rng = np.random.default_rng(seed)
    net = mlp([3, 5, 5, 2], seed % 5)
    x = rng.uniform(size=3)
    a, b = ibp_bounds(net, InputBox.around(x, small)), ibp_bounds(net, InputBox.around(x, big))
    for k in range(2):
        assert np.all(a.lower[k] >= b.lower[k] - 1e-12) and np.all(a.upper[k] <= b.upper[k] + 1e-12)
    ra, rb = classify_neurons(a).stable_ratio, classify_neurons(b).stable_ratio
    assert ra >= rb


def test_branch_split_transfer():
    net = absnet()
    box = InputBox([-1.0], [1.0])
    act = compute_bounds(net, box, BranchConstraints({(0, 0): ACTIVE}))
    ina = compute_bounds(net, box, BranchConstraints({(0, 0): INACTIVE}))
    assert not act.infeasible and not ina.infeasible
    # inactive h1 = 0 leaves out = relu(-x) <= 1
    assert ina.out_upper[0] <= 1.0 + 1e-12
    # a branch the box rules out is flagged
    far = compute_bounds(net, InputBox([0.5], [1.0]), BranchConstraints({(0, 0): INACTIVE}))
    assert far.infeasible


def test_margin_lower_bounds_sound(rng):
    net = mlp([3, 8, 3], 2)
    x = rng.uniform(size=3)
    box = InputBox.around(x, 0.05)
    m = margin_lower_bounds(net, box, compute_bounds(net, box), 1)
    ys = forward(net, box.sample(5000, rng)).logits
    assert m[1] == 0.0
    assert np.all((ys[:, [1]] - ys).min(axis=0) >= m - 1e-9)


def test_box_helpers():
    b = InputBox.around([0.05], 0.1)
    assert b.lower[0] == 0.0 and b.upper[0] == pytest.approx(0.15)
    assert b.contains([0.1]) and not b.contains([0.2])
    with pytest.raises(ValueError):
        InputBox([1.0], [0.0])
    with pytest.raises(ValueError):
        BranchConstraints({(0, 0): 5})
