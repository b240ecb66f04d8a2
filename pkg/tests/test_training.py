import json

import numpy as np
import pytest

from nbcverify.data import gen_synthetic
from nbcverify.network import mlp
from nbcverify.training import (Phase, TrainConfig, TrainingDiverged, accuracy, train,
                                write_history_csv)


@pytest.fixture(scope="module")
def blobs():
    return gen_synthetic("blobs", 100, 0.05, seed=0)


def same(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_zero_epochs_returns_initial(blobs):
    net = mlp([2, 8, 2], 0)
    out, hist = train(net, blobs, TrainConfig(phases=[Phase("ce", 0)]))
    assert same(net, out) and hist == []


def test_blobs_fit_exactly():
    ds = gen_synthetic("blobs", 200, 0.05, seed=0)
    net, hist = train(mlp([2, 16, 2], 0), ds, TrainConfig(phases=[Phase("ce", 200)], batch_size=32))
    assert accuracy(net, ds) == 1.0
    assert hist[-1]["train_acc"] == 1.0


@pytest.mark.parametrize("kind", ["ce", "nbc", "madry", "trades", "rs", "madry+nbc"])
def test_training_is_deterministic(kind, blobs):
    cfg = TrainConfig(phases=[Phase(kind, 2)], seed=3, batch_size=25)
    a, ha = train(mlp([2, 6, 4, 2], 1), blobs, cfg, blobs)
    b, hb = train(mlp([2, 6, 4, 2], 1), blobs, cfg, blobs)
    assert same(a, b) and ha == hb


def test_beta_zero_nbc_is_bitwise_ce(blobs):
    ce, _ = train(mlp([2, 6, 4, 2], 1), blobs, TrainConfig(phases=[Phase("ce", 3)], seed=2))
    nb, _ = train(mlp([2, 6, 4, 2], 1), blobs, TrainConfig(phases=[Phase("nbc", 3)], beta=0.0, seed=2))
    assert same(ce, nb)


def test_phases_and_history(blobs, tmp_path):
    cfg = TrainConfig(phases=[Phase("madry", 2), Phase("madry+nbc", 1, beta=2.0)], batch_size=50)
    _, hist = train(mlp([2, 6, 2], 0), blobs, cfg, blobs)
    assert [h["phase"] for h in hist] == ["madry", "madry", "madry+nbc"]
    assert [h["epoch"] for h in hist] == [0, 1, 2]
    write_history_csv(hist, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,phase,loss,train_acc,test_acc"


def test_config_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        TrainConfig(phases=[Phase("bogus", 1)])
    with pytest.raises(ValueError):
        TrainConfig(beta=-1)
    with pytest.raises(ValueError):
        TrainConfig(adversary_step="newton")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"nope": 1})
    cfg = TrainConfig(phases=[Phase("nbc", 3, beta=0.5)], epsilon=0.2, epsilon_warmup=2)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.load(path) == cfg
    assert cfg.step_size == pytest.approx(0.02)
    assert [cfg.epsilon_at(e) for e in range(3)] == pytest.approx([0.1, 0.2, 0.2])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(blobs):
    with pytest.raises(TrainingDiverged):
        train(mlp([2, 4, 2], 0), blobs, TrainConfig(phases=[Phase("ce", 5)], lr=1e200))
