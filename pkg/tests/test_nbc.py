import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nbcverify.autograd import Var
from nbcverify.network import Affine, Network, ReLU, forward, mlp
from nbcverify.nbc import (cosine_similarity, cross_entropy, find_adversary_nbc, gamma_factors,
                           kl_div, layer_ranks, nbc_loss, nbc_score)
from nbcverify.training import TrainConfig

from oracles import reference_nbc


@pytest.mark.parametrize("v,w,expect", [([1, 0], [1, 0], 1.0), ([1, 0], [0, 1], 0.0),
                                        ([1, 1], [-1, -1], -1.0), ([0, 0], [1, 2], 0.0)])
def test_cosine_examples(v, w, expect):
    assert cosine_similarity(v, w) == pytest.approx(expect, abs=1e-15)


def test_kl_examples():
    assert kl_div([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_div([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert kl_div([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.1308, abs=5e-5)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=6).flatmap(
    lambda v: st.tuples(st.just(v), st.lists(st.floats(-1e3, 1e3), min_size=len(v), max_size=len(v)))))
def test_cosine_is_bounded(pair):
    v, w = pair
    assert -1.0 - 1e-12 <= cosine_similarity(v, w) <= 1.0 + 1e-12


def test_gamma_examples():
    assert gamma_factors([3136, 1568, 100]).gamma == (8.0, 4.0, 2.0)
    assert gamma_factors([64]).gamma == (2.0,)
    assert gamma_factors([32, 32]).gamma == (2.0, 4.0)
    assert gamma_factors([5, 7], "unit").gamma == (1.0, 1.0)
    assert gamma_factors([5, 7], "rank_times_size").gamma == (5.0, 14.0)
    with pytest.raises(ValueError):
        gamma_factors([3], "bogus")
    with pytest.raises(ValueError):
        gamma_factors([])


@given(st.lists(st.integers(1, 50), min_size=1, max_size=6))
def test_layer_ranks_are_a_permutation(sizes):
    r = layer_ranks(sizes)
    assert sorted(r) == list(range(1, len(sizes) + 1))
    for i in range(len(sizes)):
        for j in range(len(sizes)):
            if sizes[i] < sizes[j]:
                assert r[i] < r[j]


def test_identical_inputs_score():
    net = mlp([3, 4, 2, 2], 0)
    net = net.with_params([p + 0.05 for p in net.params()])
    x = np.array([0.3, 0.6, 0.9])
    assert gamma_factors(net.hidden_layer_sizes).gamma == (4.0, 2.0)
    assert nbc_score(net, x, x) == pytest.approx(0.75, abs=1e-12)


def test_zero_preactivation_layer_contributes_zero():
    # second hidden layer has zero weights and bias: its pre-activation is the zero vector
    net = Network([Affine(np.eye(2), np.full(2, 0.1)), ReLU(),
                   Affine(np.zeros((2, 2)), np.zeros(2)), ReLU(),
                   Affine(np.eye(2), np.zeros(2))], (2,))
    x = np.array([0.2, 0.4])
    g = gamma_factors(net.hidden_layer_sizes)
    assert nbc_score(net, x, x) == pytest.approx(1 / g.gamma[0], abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_score_matches_scalar_reference(seed):
    r = np.random.default_rng(seed)
    net = mlp([2, 8, 4, 2], seed)
    x, xp = r.uniform(size=2), r.uniform(size=2)
    tx, txp = forward(net, x), forward(net, xp)
    g = gamma_factors(net.hidden_layer_sizes).gamma
    ref = reference_nbc([p.ravel().tolist() for p in tx.pre], tx.logits.ravel().tolist(),
                        [p.ravel().tolist() for p in txp.pre], txp.logits.ravel().tolist(), g)
    assert abs(nbc_score(net, x, xp) - ref) <= 1e-9


@given(st.integers(0, 10_000))
def test_score_upper_bound(seed):
    r = np.random.default_rng(seed)
    net = mlp([3, 5, 4, 2], seed % 7)
    x, xp = r.uniform(size=(4, 3)), r.uniform(size=(4, 3))
    bound = sum(1 / g for g in gamma_factors(net.hidden_layer_sizes).gamma)
    assert np.all(nbc_score(net, x, xp) <= bound + 1e-12)


@pytest.mark.parametrize("step", ["raw", "sign"])
def test_adversary_respects_ball_every_step(step):
    net = mlp([4, 6, 3], 1)
    x = np.random.default_rng(0).uniform(size=(5, 4))
    seen = []
    find_adversary_nbc(net, x, 0.1, 10, 0.05, seed=3, on_step=seen.append, step=step)
    assert len(seen) == 11
    for xp in seen:
        assert np.max(np.abs(xp - x)) <= 0.1 + 1e-15
        assert xp.min() >= 0.0 and xp.max() <= 1.0


def test_adversary_k0_and_determinism():
    net = mlp([4, 6, 3], 1)
    x = np.full(4, 0.5)
    a = find_adversary_nbc(net, x, 0.1, 0, seed=7)
    assert np.max(np.abs(a - x)) <= 0.1 and not np.array_equal(a, x)
    assert np.array_equal(find_adversary_nbc(net, x, 0.1, 10, seed=7),
                          find_adversary_nbc(net, x, 0.1, 10, seed=7))


def test_adversary_lowers_score():
    net = mlp([4, 16, 8, 3], 2)
    x = np.random.default_rng(1).uniform(size=(8, 4))
    start = find_adversary_nbc(net, x, 0.2, 0, seed=5)
    adv = find_adversary_nbc(net, x, 0.2, 10, seed=5, step="sign")
    assert nbc_score(net, x, adv).sum() < nbc_score(net, x, start).sum()


def test_loss_beta_zero_is_ce(small_net):
    x, y = np.array([[0.2, 0.7]]), np.array([1])
    lv = nbc_loss(small_net, x, y, TrainConfig(beta=0.0))
    ce = cross_entropy(Var(forward(small_net, x).logits), y).value
    assert lv.value == ce


def test_loss_eps_zero_constant_offset(small_net):
    x, y = np.array([[0.2, 0.7], [0.9, 0.1]]), np.array([1, 0])
    cfg = TrainConfig(beta=2.0, epsilon=0.0)
    lv = nbc_loss(small_net, x, y, cfg)
    ce = cross_entropy(Var(forward(small_net, x).logits), y).value
    offset = sum(1 / g for g in gamma_factors(small_net.hidden_layer_sizes).gamma)
    assert lv.value == pytest.approx(ce - 2.0 * offset, abs=1e-12)


def test_loss_recomposes_from_components(small_net):
    r = np.random.default_rng(4)
    x, y = r.uniform(size=(3, 2)), np.array([0, 1, 1])
    xp = np.clip(x + r.uniform(-0.1, 0.1, size=x.shape), 0, 1)
    lv = nbc_loss(small_net, x, y, TrainConfig(beta=1.5), xp=xp)
    ce = cross_entropy(Var(forward(small_net, x).logits), y).value
    s = float(np.mean(nbc_score(small_net, x, xp)))
    assert lv.value == pytest.approx(ce - 1.5 * s, abs=1e-12)
