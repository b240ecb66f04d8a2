"""Baseline robust-training losses: Madry, TRADES and ReLU-stability (RS)."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .attacks import pgd_attack
from .autograd import Var
from .nbc import LossValue, _row_kl, clip_to_ball, cross_entropy
from .network import Affine, Conv2d, Network, ReLU, forward_graph


def ibp_graph(net: Network, params, x: np.ndarray, eps: float, domain=(0.0, 1.0)):
    """Differentiable interval propagation; returns [(lower, upper)] per ReLU layer."""
    lo = np.maximum(x - eps, domain[0])
    hi = np.minimum(x + eps, domain[1])
    mid, rad = Var((hi + lo) / 2), Var((hi - lo) / 2)
    it = iter(params)
    out = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            w, b = next(it), next(it)
            mid = ag.linear(mid, w, b)
            rad = ag.linear(rad, ag.abs_(w), Var(np.zeros(layer.out_dim)))
        elif isinstance(layer, Conv2d):
            k, b = next(it), next(it)
            mid = ag.conv2d(mid, k, b, layer.in_shape, layer.stride, layer.padding)
            rad = ag.conv2d(rad, ag.abs_(k), Var(np.zeros_like(layer.bias)),
                            layer.in_shape, layer.stride, layer.padding)
        elif isinstance(layer, ReLU):
            l, u = mid - rad, mid + rad
            out.append((l, u))
            l, u = ag.relu(l), ag.relu(u)
            mid, rad = (u + l) * 0.5, (u - l) * 0.5
    return out


def rs_penalty(bounds) -> Var:
    """Mean over the batch of sum over neurons of -tanh(1 + l*u)."""
    total = None
    for l, u in bounds:
        term = ag.sum_(-ag.tanh(l * u + 1.0), axis=1)
        total = term if total is None else total + term
    return ag.mean(total)


def madry_loss(net: Network, x, y, cfg, params=None, rng=None) -> LossValue:
    params = params or [Var(p) for p in net.params()]
    if cfg.epsilon > 0:
        xa = pgd_attack(net, x, y, cfg.epsilon, cfg.k, cfg.step_size, cfg.domain,
                        rng if rng is not None else 0, random_start=True)
    else:
        xa = x
    ce = cross_entropy(forward_graph(net, Var(xa), params).logits, y)
    return LossValue(ce, {"ce": float(ce.value)})


def trades_adversary(net: Network, x, eps, k, step_size, domain, rng) -> np.ndarray:
    """k projected sign-ascent steps on KL(f(x) || f(x')) from a small Gaussian start."""
    params = [Var(p) for p in net.params()]
    clean = Var(forward_graph(net, Var(x), params).logits.value)
    xp = clip_to_ball(x + 0.001 * rng.standard_normal(x.shape), x, eps, domain)
    for _ in range(k):
        xv = Var(xp)
        kl = ag.sum_(_row_kl(clean, forward_graph(net, xv, params).logits))
        (g,) = ag.grad(kl, [xv])
        xp = clip_to_ball(xp + step_size * np.sign(g), x, eps, domain)
    return xp


def trades_loss(net: Network, x, y, cfg, params=None, rng=None) -> LossValue:
    params = params or [Var(p) for p in net.params()]
    clean = forward_graph(net, Var(x), params)
    ce = cross_entropy(clean.logits, y)
    lam = cfg.trades_lambda
    if lam == 0:
        return LossValue(ce, {"ce": float(ce.value), "kl": 0.0})
    rng = rng if rng is not None else np.random.default_rng(0)
    xp = trades_adversary(net, x, cfg.epsilon, cfg.k, cfg.step_size, cfg.domain, rng)
    kl = ag.mean(_row_kl(clean.logits, forward_graph(net, Var(xp), params).logits))
    return LossValue(ce + kl * lam, {"ce": float(ce.value), "kl": float(kl.value)})


def rs_loss(net: Network, x, y, cfg, params=None, rng=None, bounds_provider=ibp_graph) -> LossValue:
    if bounds_provider is None:
        raise ValueError("rs loss needs a bounds provider")
    params = params or [Var(p) for p in net.params()]
    ce = cross_entropy(forward_graph(net, Var(x), params).logits, y)
    reg = rs_penalty(bounds_provider(net, params, x, cfg.epsilon, cfg.domain))
    return LossValue(ce + reg * cfg.rs_weight, {"ce": float(ce.value), "regularizer": float(reg.value)})


def baseline_loss(kind: str, net: Network, x, y, cfg, params=None, rng=None,
                  bounds_provider=ibp_graph) -> LossValue:
    x = np.asarray(x, dtype=float).reshape(-1, net.input_dim)
    y = np.atleast_1d(np.asarray(y, dtype=int))
    if kind == "madry":
        return madry_loss(net, x, y, cfg, params, rng)
    if kind == "trades":
        return trades_loss(net, x, y, cfg, params, rng)
    if kind == "rs":
        return rs_loss(net, x, y, cfg, params, rng, bounds_provider)
    raise ValueError(f"unknown baseline {kind!r}")
