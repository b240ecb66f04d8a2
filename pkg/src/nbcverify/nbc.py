"""Neuron behaviour consistency: score, inner adversary and regularised loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Var
from .network import Network, ShapeError, forward, forward_graph

NORM_FLOOR = 1e-12
PROB_FLOOR = 1e-12
GAMMA_SCHEMES = ("unit", "exp_rank", "rank_times_size")


def cosine_similarity(v, w) -> float:
    v = np.asarray(v, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if v.shape != w.shape:
        raise ShapeError(f"length mismatch {v.size} vs {w.size}")
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv < NORM_FLOOR or nw < NORM_FLOOR:
        return 0.0
    return float(v @ w / (nv * nw))


def kl_div(p, q) -> float:
    """KL(p || q) with both distributions floored at 1e-12 before the logs."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ShapeError(f"length mismatch {p.size} vs {q.size}")
    pf, qf = np.maximum(p, PROB_FLOOR), np.maximum(q, PROB_FLOOR)
    return float(np.sum(p * (np.log(pf) - np.log(qf))))


@dataclass(frozen=True)
class GammaFactors:
    gamma: tuple
    rank: tuple
    scheme: str = "exp_rank"


def layer_ranks(sizes) -> list[int]:
    """1-based ascending rank of each size; equal sizes ranked by layer index."""
    order = sorted(range(len(sizes)), key=lambda i: (sizes[i], i))
    rank = [0] * len(sizes)
    for r, i in enumerate(order, start=1):
        rank[i] = r
    return rank


def gamma_factors(hidden_sizes, scheme: str = "exp_rank") -> GammaFactors:
    sizes = [int(m) for m in hidden_sizes]
    if not sizes or min(sizes) <= 0:
        raise ValueError("hidden sizes must be a nonempty list of positive widths")
    rank = layer_ranks(sizes)
    if scheme == "exp_rank":
        gamma = [2.0 ** r for r in rank]
    elif scheme == "unit":
        gamma = [1.0] * len(sizes)
    elif scheme == "rank_times_size":
        gamma = [float(r * m) for r, m in zip(rank, sizes)]
    else:
        raise ValueError(f"unknown gamma scheme {scheme!r}; expected one of {GAMMA_SCHEMES}")
    return GammaFactors(tuple(gamma), tuple(rank), scheme)


def _row_cosine(a: Var, b: Var) -> Var:
    dot = ag.sum_(a * b, axis=1)
    na = ag.sqrt(ag.sum_(a * a, axis=1))
    nb = ag.sqrt(ag.sum_(b * b, axis=1))
    dead = (na.value < NORM_FLOOR) | (nb.value < NORM_FLOOR)
    denom = ag.maximum_const(na * nb, NORM_FLOOR * NORM_FLOOR)
    return ag.where_zero(dead, dot / denom)


def _row_kl(logits_p: Var, logits_q: Var) -> Var:
    p = ag.softmax(logits_p)
    q = ag.softmax(logits_q)
    lp = ag.log(ag.maximum_const(p, PROB_FLOOR))
    lq = ag.log(ag.maximum_const(q, PROB_FLOOR))
    return ag.sum_(p * (lp - lq), axis=1)


def nbc_score_graph(pre_x, logits_x: Var, pre_xp, logits_xp: Var, gamma: GammaFactors) -> Var:
    """Per-sample consistency score as a differentiable (N,) Var."""
    if len(pre_x) != len(gamma.gamma):
        raise ShapeError(f"{len(gamma.gamma)} gamma factors for {len(pre_x)} ReLU layers")
    s = None
    for v, vp, g in zip(pre_x, pre_xp, gamma.gamma):
        term = _row_cosine(v, vp) / g
        s = term if s is None else s + term
    kl = _row_kl(logits_x, logits_xp)
    return kl * -1.0 if s is None else s - kl


def nbc_score(net: Network, x, xp, gamma: GammaFactors | None = None):
    """Consistency score between ``x`` and ``xp`` (scalar for one sample, array for a batch)."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape != xp.shape:
        raise ShapeError(f"x and x' shapes differ: {x.shape} vs {xp.shape}")
    if gamma is None:
        gamma = gamma_factors(net.hidden_layer_sizes)
    single = x.shape == net.input_shape or x.shape == (net.input_dim,)
    xb, xpb = x.reshape(-1, net.input_dim), xp.reshape(-1, net.input_dim)
    tx, txp = forward_graph(net, Var(xb)), forward_graph(net, Var(xpb))
    s = nbc_score_graph(tx.pre, tx.logits, txp.pre, txp.logits, gamma).value
    return float(s[0]) if single else s


def clip_to_ball(xp: np.ndarray, x: np.ndarray, eps: float, domain=(0.0, 1.0)) -> np.ndarray:
    lo = np.maximum(x - eps, domain[0])
    hi = np.minimum(x + eps, domain[1])
    return np.clip(xp, lo, hi)


def random_in_ball(x: np.ndarray, eps: float, domain, rng: np.random.Generator) -> np.ndarray:
    return clip_to_ball(x + rng.uniform(-eps, eps, size=x.shape), x, eps, domain)


def find_adversary_nbc(net: Network, x, eps: float, k: int = 10, alpha: float | None = None,
                       domain=(0.0, 1.0), seed=0, gamma: GammaFactors | None = None,
                       on_step=None, step: str = "raw") -> np.ndarray:
    """Search the ball around ``x`` for a neighbour that minimises the NBC score.

    Starts at a uniform random point and takes ``k`` raw-gradient descent steps
    of size ``alpha``, clipping back into the ball and domain after each one.
    ``step="sign"`` uses the sign of the gradient instead (PGD-style).
    ``seed`` may be an int or a numpy Generator.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x, dtype=float)
    shape = x.shape
    xb = x.reshape(-1, net.input_dim)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    alpha = eps / 10 if alpha is None else alpha
    if gamma is None:
        gamma = gamma_factors(net.hidden_layer_sizes)
    xp = random_in_ball(xb, eps, domain, rng)
    if on_step is not None:
        on_step(xp.reshape(shape))
    if k > 0 and eps > 0:
        params = [Var(p) for p in net.params()]
        tx = forward_graph(net, Var(xb), params)
        pre_x = [Var(v.value) for v in tx.pre]
        logits_x = Var(tx.logits.value)
        for _ in range(k):
            xv = Var(xp)
            txp = forward_graph(net, xv, params)
            score = ag.sum_(nbc_score_graph(pre_x, logits_x, txp.pre, txp.logits, gamma))
            (dx,) = ag.grad(score, [xv])
            if step == "sign":
                dx = np.sign(dx)
            xp = clip_to_ball(xp - alpha * dx, xb, eps, domain)
            if on_step is not None:
                on_step(xp.reshape(shape))
    return xp.reshape(shape)


@dataclass
class LossValue:
    total: Var
    components: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.total.value)


def cross_entropy(logits: Var, y) -> Var:
    """Mean cross-entropy of row logits against integer labels."""
    return ag.mean(-ag.pick(ag.log_softmax(logits), np.asarray(y, dtype=int)))


def nbc_regularizer(net: Network, params, x: np.ndarray, xp: np.ndarray,
                    gamma: GammaFactors, clean=None) -> Var:
    """Mean NBC score over the batch, differentiable in ``params``."""
    tx = clean if clean is not None else forward_graph(net, Var(x), params)
    txp = forward_graph(net, Var(xp), params)
    return ag.mean(nbc_score_graph(tx.pre, tx.logits, txp.pre, txp.logits, gamma))


def nbc_loss(net: Network, x, y, cfg, params=None, rng=None, xp=None) -> LossValue:
    """Cross-entropy on the clean input minus beta times the NBC score.

    ``cfg`` needs ``beta``, ``epsilon``, ``k``, ``alpha``, ``gamma`` and
    ``domain``.  ``xp`` overrides the inner adversary (used for gradient checks).
    """
    x = np.asarray(x, dtype=float).reshape(-1, net.input_dim)
    y = np.atleast_1d(np.asarray(y, dtype=int))
    if params is None:
        params = [Var(p) for p in net.params()]
    clean = forward_graph(net, Var(x), params)
    ce = cross_entropy(clean.logits, y)
    if cfg.beta == 0 and xp is None:
        return LossValue(ce, {"ce": float(ce.value), "nbc_score": 0.0})
    gamma = gamma_factors(net.hidden_layer_sizes, cfg.gamma)
    if xp is None:
        xp = find_adversary_nbc(net, x, cfg.epsilon, cfg.k, cfg.step_size, cfg.domain,
                                rng if rng is not None else 0, gamma,
                                step=getattr(cfg, "adversary_step", "raw"))
    score = nbc_regularizer(net, params, x, np.asarray(xp).reshape(x.shape), gamma, clean)
    total = ce - score * cfg.beta
    return LossValue(total, {"ce": float(ce.value), "nbc_score": float(score.value)})
