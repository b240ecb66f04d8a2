"""Projected sign-gradient (PGD) attacks on cross-entropy."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Var
from .nbc import clip_to_ball, cross_entropy, random_in_ball
from .network import Network, forward_graph


def _ce_rows(net: Network, params, xv: Var, y: np.ndarray):
    logits = forward_graph(net, xv, params).logits
    per_row = -ag.pick(ag.log_softmax(logits), y)
    return per_row, logits.value


def pgd_attack(net: Network, x, y, eps: float, steps: int = 100, step_size: float | None = None,
               domain=(0.0, 1.0), seed=0, restarts: int = 1, random_start: bool = False,
               box=None, early_stop: bool = False, on_step=None) -> np.ndarray:
    """Maximise cross-entropy inside the eps-ball intersected with the domain.

    The first restart starts at ``x`` unless ``random_start``; later restarts
    start uniformly at random.  Returns, per sample, the iterate with the
    highest cross-entropy.  With ``early_stop`` a misclassified iterate is
    returned as soon as one is seen.  ``box`` = (lo, hi) replaces the ball.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x, dtype=float)
    shape = x.shape
    xb = x.reshape(-1, net.input_dim)
    y = np.atleast_1d(np.asarray(y, dtype=int))
    if step_size is None:
        step_size = 2.5 * eps / max(steps, 1)
    if box is None:
        lo = np.maximum(xb - eps, domain[0])
        hi = np.minimum(xb + eps, domain[1])
    else:
        lo = np.asarray(box[0], dtype=float).reshape(xb.shape)
        hi = np.asarray(box[1], dtype=float).reshape(xb.shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = [Var(p) for p in net.params()]

    best = np.clip(xb, lo, hi)
    best_loss = np.full(xb.shape[0], -np.inf)
    found = np.zeros(xb.shape[0], dtype=bool)

    def consider(cand, xv=None):
        nonlocal best, best_loss
        v = Var(cand) if xv is None else xv
        loss, lg = _ce_rows(net, params, v, y)
        wrong = np.argmax(lg, axis=1) != y
        if early_stop:
            take = (loss.value > best_loss) & ~found | (wrong & ~found)
        else:
            take = loss.value > best_loss
        best = np.where(take[:, None], cand, best)
        best_loss = np.where(take, loss.value, best_loss)
        found[:] |= wrong
        return loss

    for r in range(max(restarts, 1)):
        if r == 0 and not random_start:
            cur = best.copy()
        else:
            cur = lo + rng.uniform(size=xb.shape) * (hi - lo)
        if on_step is not None:
            on_step(cur.reshape(shape))
        for _ in range(steps):
            xv = Var(cur)
            loss = consider(cur, xv)
            if early_stop and found.all():
                return best.reshape(shape)
            (g,) = ag.grad(ag.sum_(loss), [xv])
            cur = np.clip(cur + step_size * np.sign(g), lo, hi)
            if on_step is not None:
                on_step(cur.reshape(shape))
        consider(cur)
        if early_stop and found.all():
            break
    return best.reshape(shape)


def pgd_accuracy(net: Network, x, y, eps: float, steps: int = 100, step_size: float | None = None,
                 domain=(0.0, 1.0), seed=0, restarts: int = 1) -> float:
    """Fraction of samples still correctly classified after a PGD attack."""
    adv = pgd_attack(net, x, y, eps, steps, step_size, domain, seed, restarts)
    lg = forward_graph(net, Var(np.asarray(adv).reshape(-1, net.input_dim))).logits.value
    return float(np.mean(np.argmax(lg, axis=1) == np.asarray(y)))


__all__ = ["pgd_attack", "pgd_accuracy", "clip_to_ball", "random_in_ball", "cross_entropy"]
