"""Training configuration and the phased Adam training loop."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autograd as ag
from .autograd import NonFiniteError, Var
from .baselines import baseline_loss
from .data import Dataset, rng_stream
from .nbc import LossValue, find_adversary_nbc, gamma_factors, nbc_loss, nbc_regularizer
from .network import Network, adam_init, adam_step, predict

log = logging.getLogger(__name__)

BASE_KINDS = ("ce", "madry", "trades", "rs", "nbc")
LOSS_KINDS = BASE_KINDS + ("madry+nbc", "trades+nbc", "rs+nbc")


@dataclass
class Phase:
    loss: str
    epochs: int
    beta: float | None = None  # overrides TrainConfig.beta for this phase


@dataclass
class TrainConfig:
    phases: list = field(default_factory=lambda: [Phase("nbc", 30)])
    beta: float = 1.0
    epsilon: float = 0.1
    k: int = 10
    alpha: float | None = None  # inner step size; None means epsilon / 10
    gamma: str = "exp_rank"
    adversary_step: str = "sign"  # sign | raw
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    seed: int = 0
    domain: tuple = (0.0, 1.0)
    trades_lambda: float = 6.0
    rs_weight: float = 1e-3
    epsilon_warmup: int = 0  # epochs over which epsilon ramps linearly up to its target

    def __post_init__(self):
        self.phases = [p if isinstance(p, Phase) else Phase(**p) for p in self.phases]
        self.domain = tuple(self.domain)
        self.validate()

    def validate(self) -> None:
        if self.beta < 0 or self.epsilon < 0 or self.k < 0:
            raise ValueError("beta, epsilon and k must be nonnegative")
        if self.k > 0 and self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive when k > 0")
        if self.adversary_step not in ("raw", "sign"):
            raise ValueError(f"unknown adversary step {self.adversary_step!r}")
        if self.epsilon_warmup < 0:
            raise ValueError("epsilon_warmup must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        for p in self.phases:
            if p.loss not in LOSS_KINDS:
                raise ValueError(f"unknown loss kind {p.loss!r}")
            if p.epochs < 0:
                raise ValueError("phase epochs must be nonnegative")
            if p.beta is not None and p.beta < 0:
                raise ValueError("phase beta must be nonnegative")

    @property
    def step_size(self) -> float:
        return self.epsilon / 10 if self.alpha is None else self.alpha

    def epsilon_at(self, epoch: int) -> float:
        if self.epsilon_warmup <= 0:
            return self.epsilon
        return self.epsilon * min(1.0, (epoch + 1) / self.epsilon_warmup)

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for p in self.phases)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = list(self.domain)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class TrainingDiverged(RuntimeError):
    pass


def batch_loss(kind: str, net: Network, params, x, y, cfg: TrainConfig, rng) -> LossValue:
    if kind == "ce":
        return nbc_loss(net, x, y, replace(cfg, beta=0.0), params)
    if kind == "nbc":
        return nbc_loss(net, x, y, cfg, params, rng)
    if kind in ("madry", "trades", "rs"):
        return baseline_loss(kind, net, x, y, cfg, params, rng)
    base, _ = kind.split("+")
    lv = baseline_loss(base, net, x, y, cfg, params, rng)
    if cfg.beta == 0:
        return lv
    gamma = gamma_factors(net.hidden_layer_sizes, cfg.gamma)
    xp = find_adversary_nbc(net, x, cfg.epsilon, cfg.k, cfg.step_size, cfg.domain, rng, gamma,
                            step=cfg.adversary_step)
    score = nbc_regularizer(net, params, x, xp, gamma)
    comps = dict(lv.components, nbc_score=float(score.value))
    return LossValue(lv.total - score * cfg.beta, comps)


def accuracy(net: Network, ds: Dataset | None) -> float:
    if ds is None or len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(net, ds.inputs.reshape(len(ds), -1)) == ds.labels))


def train(net: Network, dataset: Dataset, cfg: TrainConfig, test: Dataset | None = None,
          progress: bool = False):
    """Run every phase in order; returns the trained network and per-epoch history."""
    if len(dataset) == 0:
        raise ValueError("empty training set")
    x_all = dataset.inputs.reshape(len(dataset), -1)
    y_all = dataset.labels
    shuffle_rng = rng_stream(cfg.seed, "shuffle")
    adv_rng = rng_stream(cfg.seed, "adversary")
    params = [p.copy() for p in net.params()]
    state = adam_init(params)
    history = []
    epoch = 0
    for pi, phase in enumerate(cfg.phases):
        phase_cfg = cfg if phase.beta is None else replace(cfg, beta=phase.beta)
        for _ in range(phase.epochs):
            eps = cfg.epsilon_at(epoch)
            # alpha stays tied to the target radius unless set explicitly
            pcfg = phase_cfg if eps == cfg.epsilon else replace(
                phase_cfg, epsilon=eps, alpha=phase_cfg.step_size * eps / cfg.epsilon)
            order = shuffle_rng.permutation(len(dataset))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                cur = net.with_params(params)
                pvars = [Var(p) for p in params]
                try:
                    lv = batch_loss(phase.loss, cur, pvars, x_all[idx], y_all[idx], pcfg, adv_rng)
                except NonFiniteError as exc:
                    raise TrainingDiverged(f"non-finite values at epoch {epoch}: {exc}") from exc
                if not np.isfinite(lv.value):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, phase {pi} "
                                           f"({phase.loss}); components {lv.components}")
                grads = ag.grad(lv.total, pvars)
                try:
                    params, state = adam_step(params, grads, state, cfg.lr, cfg.adam_beta1,
                                              cfg.adam_beta2, cfg.adam_eps)
                except NonFiniteError as exc:
                    raise TrainingDiverged(f"non-finite gradient at epoch {epoch}: {exc}") from exc
                losses.append(lv.value * len(idx))
            cur = net.with_params(params)
            try:
                row = {"epoch": epoch, "phase": phase.loss,
                       "loss": float(np.sum(losses) / len(dataset)),
                       "train_acc": accuracy(cur, dataset), "test_acc": accuracy(cur, test)}
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite activations after epoch {epoch}") from exc
            history.append(row)
            if progress:
                log.info("epoch %d %s loss %.4f train %.3f test %.3f", epoch, phase.loss,
                         row["loss"], row["train_acc"], row["test_acc"])
            epoch += 1
    return net.with_params(params), history


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "phase", "loss", "train_acc", "test_acc"])
        for row in history:
            w.writerow([row["epoch"], row["phase"], repr(row["loss"]),
                        repr(row["train_acc"]), repr(row["test_acc"])])
