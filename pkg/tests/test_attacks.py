import numpy as np
import pytest
from hypothesis import given, strategies as st

from nbcverify.attacks import pgd_accuracy, pgd_attack
from nbcverify.autograd import Var
from nbcverify.baselines import baseline_loss, ibp_graph, rs_penalty
from nbcverify.bounds import InputBox, ibp_bounds
from nbcverify.nbc import cross_entropy, find_adversary_nbc
from nbcverify.network import Affine, Network, forward, mlp
from nbcverify.training import TrainConfig


def logistic_net():
    # two logits (0, 3x): class 1 is "positive"
    return Network([Affine(np.array([[0.0], [3.0]]), np.zeros(2))], (1,))


def test_pgd_linear_one_step():
    xa = pgd_attack(logistic_net(), np.array([0.5]), 1, 0.1, steps=1, step_size=0.1)
    assert xa == pytest.approx([0.4])


def test_pgd_eps_zero_returns_x(small_net):
    x = np.array([[0.3, 0.4]])
    assert np.array_equal(pgd_attack(small_net, x, [0], 0.0, steps=5), x)


def test_pgd_iterates_stay_in_ball():
    net = mlp([5, 10, 3], 0)
    r = np.random.default_rng(0)
    x = r.uniform(size=(6, 5))
    seen = []
    pgd_attack(net, x, r.integers(0, 3, 6), 0.15, steps=10, restarts=2, seed=1, on_step=seen.append)
    assert seen
    for xa in seen:
        assert np.max(np.abs(xa - x)) <= 0.15 + 1e-15 and xa.min() >= 0 and xa.max() <= 1


def test_pgd_accuracy_eps_zero_equals_clean(small_net):
    r = np.random.default_rng(2)
    x = r.uniform(size=(30, 2))
    y = r.integers(0, 2, 30)
    clean = np.mean(np.argmax(forward(small_net, x).logits, 1) == y)
    assert pgd_accuracy(small_net, x, y, 0.0, steps=3) == clean


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.5), st.sampled_from(["pgd", "nbc"]))
def test_attack_outputs_respect_ball(seed, eps, which):
    r = np.random.default_rng(seed)
    net = mlp([3, 4, 2], seed % 5)
    x = r.uniform(size=(2, 3))
    if which == "pgd":
        xa = pgd_attack(net, x, [0, 1], eps, steps=3, seed=seed, restarts=2)
    else:
        xa = find_adversary_nbc(net, x, eps, 3, seed=seed)
    assert np.max(np.abs(xa - x)) <= eps + 1e-12
    assert xa.min() >= 0.0 and xa.max() <= 1.0


def _ce(net, x, y):
    return cross_entropy(Var(forward(net, x).logits), y).value


def test_trades_lambda_zero_is_ce(small_net):
    x, y = np.array([[0.1, 0.9]]), np.array([0])
    lv = baseline_loss("trades", small_net, x, y, TrainConfig(trades_lambda=0.0),
                       rng=np.random.default_rng(0))
    assert lv.value == pytest.approx(_ce(small_net, x, y), abs=1e-12)


def test_madry_eps_zero_is_ce(small_net):
    x, y = np.array([[0.1, 0.9]]), np.array([0])
    lv = baseline_loss("madry", small_net, x, y, TrainConfig(epsilon=0.0),
                       rng=np.random.default_rng(0))
    assert lv.value == pytest.approx(_ce(small_net, x, y), abs=1e-12)


def test_rs_penalty_terms():
    lows = [Var(np.array([[-1.0, 1.0]]))]
    ups = [Var(np.array([[1.0, 2.0]]))]
    assert rs_penalty(list(zip(lows, ups))).value == pytest.approx(0.0 - np.tanh(3.0), abs=1e-12)


def test_ibp_graph_matches_numpy_ibp():
    net = mlp([3, 5, 4, 2], 9)
    x = np.array([[0.2, 0.5, 0.7]])
    bounds = ibp_graph(net, [Var(p) for p in net.params()], x, 0.1)
    ref = ibp_bounds(net, InputBox.around(x[0], 0.1))
    for (l, u), rl, ru in zip(bounds, ref.lower, ref.upper):
        assert np.allclose(l.value[0], rl) and np.allclose(u.value[0], ru)


def test_unknown_baseline():
    with pytest.raises(ValueError):
        baseline_loss("bogus", mlp([2, 2], 0), np.zeros((1, 2)), [0], TrainConfig())
