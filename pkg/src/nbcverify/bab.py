"""Complete branch-and-bound local-robustness verifier over ReLU splits."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import pgd_attack
from .bounds import (ACTIVE, INACTIVE, BoundsMap, BranchConstraints, InputBox, classify_neurons,
                     compute_bounds, margin_lower_bounds, neuron_states)
from .data import rng_stream
from .lp import GE, LE, LpProblem, LpStalled, solve_lp_many
from .network import LoweredNet, Network, forward, lower

log = logging.getLogger(__name__)

UNSAT, SAT, UNKNOWN = "UNSAT", "SAT", "UNKNOWN"
EXIT_CODES = {UNSAT: 0, SAT: 1, UNKNOWN: 2}


@dataclass
class RobustnessProperty:
    x0: np.ndarray
    epsilon: float
    label: int
    domain: tuple = (0.0, 1.0)

    @property
    def box(self) -> InputBox:
        return InputBox.around(self.x0, self.epsilon, self.domain)

    def directions(self, n_classes: int) -> list[int]:
        """Classes i != label; each gives one negated-output objective y_i - y_label."""
        return [i for i in range(n_classes) if i != self.label]


def encode_property(x0, epsilon: float, label: int, domain=(0.0, 1.0),
                    n_classes: int | None = None) -> RobustnessProperty:
    x0 = np.asarray(x0, dtype=float)
    lo, hi = domain
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("x0 lies outside the input domain")
    if label < 0 or (n_classes is not None and label >= n_classes):
        raise ValueError(f"label {label} out of range for {n_classes} classes")
    return RobustnessProperty(x0, float(epsilon), int(label), (float(lo), float(hi)))


def check_counterexample(net: Network, prop: RobustnessProperty, xp) -> bool:
    """True iff xp lies in the property's box and some other class strictly wins."""
    xp = np.asarray(xp, dtype=float)
    if xp.size != np.asarray(prop.x0).size or not prop.box.contains(xp):
        return False
    y = np.asarray(forward(net, xp.reshape(np.asarray(prop.x0).shape)).logits).ravel()
    others = np.delete(y, prop.label)
    return bool(others.max() > y[prop.label])


@dataclass
class Budget:
    seconds: float | None = None
    branches: int | None = None

    def __post_init__(self):
        if self.seconds is not None and self.seconds <= 0:
            raise ValueError("time budget must be positive")
        if self.branches is not None and self.branches < 0:
            raise ValueError("branch budget must be nonnegative")


@dataclass
class VerifierConfig:
    attack_steps: int = 20
    attack_restarts: int = 1
    seed: int = 0
    prove_tol: float = 1e-9  # LP maxima at or below this count as proved


@dataclass
class Verdict:
    status: str
    counterexample: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    def to_json(self) -> dict:
        cex = None if self.counterexample is None else np.asarray(self.counterexample).ravel().tolist()
        return {"status": self.status, "counterexample": cex, "stats": dict(self.stats)}


def select_branch_neuron(bounds: BoundsMap, branch: BranchConstraints):
    """Unsplit unstable neuron with the largest (-l*u)/(u-l); ties by (layer, neuron)."""
    best, best_score = None, -np.inf
    for k, (l, u) in enumerate(zip(bounds.lower, bounds.upper)):
        cand = (l < 0) & (u > 0)
        for (li, ni) in branch:
            if li == k:
                cand[ni] = False
        if not cand.any():
            continue
        score = np.where(cand, -l * u / np.where(cand, u - l, 1.0), -np.inf)
        j = int(np.argmax(score))
        if score[j] > best_score:
            best, best_score = (k, j), score[j]
    return best


@dataclass
class LeafResult:
    status: str  # proved | feasible | indeterminate
    point: np.ndarray | None = None
    lp_calls: int = 0
    maxima: dict = field(default_factory=dict)


def build_leaf_lp(lnet: LoweredNet, box: InputBox, bounds: BoundsMap, branch: BranchConstraints):
    """Triangle-relaxed LP over (inputs, unsplit unstable ReLU outputs).

    Returns the constraint system, the output expressions (Y, y0) with
    logits = Y @ v + y0, and a flag telling whether the encoding is exact.
    """
    n0 = lnet.input_dim
    states, phases = [], []
    for k, (l, u) in enumerate(zip(bounds.lower, bounds.upper)):
        ph = branch.phases(k, l.size)
        st = np.where(ph != 0, ph, neuron_states(l, u))
        states.append(st)
        phases.append(ph)
    n_relaxed = int(sum(np.sum(s == 0) for s in states))
    nv = n0 + n_relaxed
    lo = np.concatenate([box.lower, np.zeros(n_relaxed)])
    hi = np.concatenate([box.upper, np.zeros(n_relaxed)])
    rows, senses, rhs = [], [], []
    E = np.zeros((n0, nv))
    E[:, :n0] = np.eye(n0)
    e = np.zeros(n0)
    nxt = n0
    for k in range(lnet.n_hidden):
        Z = lnet.weights[k] @ E
        z0 = lnet.weights[k] @ e + lnet.biases[k]
        l, u, st, ph = bounds.lower[k], bounds.upper[k], states[k], phases[k]
        En = np.zeros((Z.shape[0], nv))
        en = np.zeros(Z.shape[0])
        act = st == ACTIVE
        En[act], en[act] = Z[act], z0[act]
        for j in np.flatnonzero(ph == ACTIVE):
            rows.append(Z[j]); senses.append(GE); rhs.append(-z0[j])
        for j in np.flatnonzero(ph == INACTIVE):
            rows.append(Z[j]); senses.append(LE); rhs.append(-z0[j])
        for j in np.flatnonzero(st == 0):
            v = nxt
            nxt += 1
            hi[v] = u[j]
            En[j, v] = 1.0
            s = u[j] / (u[j] - l[j])
            r = -Z[j].copy(); r[v] += 1.0
            rows.append(r); senses.append(GE); rhs.append(z0[j])            # y >= z
            r = -s * Z[j]; r[v] += 1.0
            rows.append(r); senses.append(LE); rhs.append(s * (z0[j] - l[j]))  # chord
        E, e = En, en
    Y = lnet.weights[-1] @ E
    y0 = lnet.weights[-1] @ e + lnet.biases[-1]
    A = np.array(rows) if rows else np.zeros((0, nv))
    return A, senses, np.array(rhs), lo, hi, Y, y0, n_relaxed == 0


def leaf_check(net: Network, prop: RobustnessProperty, branch: BranchConstraints,
               bounds: BoundsMap | None = None, lnet: LoweredNet | None = None,
               directions=None, prove_tol: float = 1e-9) -> LeafResult:
    """LP check of the negated output constraint on one branch."""
    lnet = lnet if lnet is not None else lower(net)
    box = prop.box
    if bounds is None:
        bounds = compute_bounds(lnet, box, branch)
    if bounds.infeasible:
        return LeafResult("proved")
    A, senses, rhs, lo, hi, Y, y0, exact = build_leaf_lp(lnet, box, bounds, branch)
    c = prop.label
    dirs = prop.directions(lnet.output_dim) if directions is None else list(directions)
    if not dirs:
        return LeafResult("proved")
    objs = [Y[i] - Y[c] for i in dirs]
    problem = LpProblem(np.zeros(lo.size), A, senses, rhs, lo, hi)
    try:
        outs = solve_lp_many(problem, objs)
    except LpStalled as exc:
        log.warning("leaf LP stalled: %s", exc)
        return LeafResult("indeterminate", lp_calls=len(objs))
    maxima = {}
    best_point, best_val = None, -np.inf
    for i, out in zip(dirs, outs):
        if out.status == "infeasible":
            return LeafResult("proved", lp_calls=len(objs), maxima=maxima)
        if out.status == "unbounded":  # cannot happen with a bounded box
            return LeafResult("indeterminate", lp_calls=len(objs), maxima=maxima)
        val = out.objective + y0[i] - y0[c]
        maxima[i] = val
        if val > best_val:
            best_val, best_point = val, out.x[:lnet.input_dim]
    positive = {i: v for i, v in maxima.items() if v > 0}
    if not positive:
        return LeafResult("proved", lp_calls=len(objs), maxima=maxima)
    for i, out in zip(dirs, outs):
        if i in positive:
            xp = np.clip(out.x[:lnet.input_dim], box.lower, box.upper)
            if check_counterexample(net, prop, xp):
                return LeafResult("feasible", xp, len(objs), maxima)
    if all(v <= prove_tol for v in positive.values()):
        # numerically zero optimum whose witness is a tie, not a violation
        return LeafResult("proved", lp_calls=len(objs), maxima=maxima)
    if exact:
        log.warning("exact leaf LP reported margin %.3g but its point is not a counterexample",
                    best_val)
    return LeafResult("indeterminate", best_point, len(objs), maxima)


def _attack(net, prop, box, steps, restarts, rng, start_random):
    x0 = np.asarray(prop.x0, dtype=float)
    return pgd_attack(net, x0, prop.label, prop.epsilon, steps, None, prop.domain, rng, restarts,
                      random_start=start_random, box=(box.lower, box.upper), early_stop=True)


def bab_verify(net: Network, prop: RobustnessProperty, budget: Budget | None = None,
               cfg: VerifierConfig | None = None) -> Verdict:
    """Depth-first branch and bound; the active child of a split is explored first."""
    budget = budget or Budget()
    cfg = cfg or VerifierConfig()
    t0 = time.perf_counter()
    lnet = lower(net)
    box = prop.box
    stats = {"branches_explored": 0, "nodes": 0, "max_depth": 0, "lp_calls": 0,
             "attack_calls": 0, "stable_ratio_at_root": None, "wall_time": 0.0,
             "unstable_at_root": None}

    def done(status, cex=None):
        stats["wall_time"] = round(time.perf_counter() - t0, 3)
        return Verdict(status, cex, stats)

    x0 = np.asarray(prop.x0, dtype=float)
    if check_counterexample(net, prop, x0):
        root_bounds = compute_bounds(lnet, box)
        rep = classify_neurons(root_bounds)
        stats["stable_ratio_at_root"] = rep.stable_ratio
        stats["unstable_at_root"] = rep.unstable
        return done(SAT, x0.copy())

    rng = rng_stream(cfg.seed, "bab-attack")
    stack = [(BranchConstraints(), None, 0)]
    undecided = False
    while stack:
        if budget.seconds is not None and time.perf_counter() - t0 > budget.seconds:
            return done(UNKNOWN)
        branch, parent, depth = stack.pop()
        stats["nodes"] += 1
        stats["max_depth"] = max(stats["max_depth"], depth)
        bounds = compute_bounds(lnet, box, branch, parent)
        if parent is None:
            rep = classify_neurons(bounds)
            stats["stable_ratio_at_root"] = rep.stable_ratio
            stats["unstable_at_root"] = rep.unstable
        if bounds.infeasible:
            continue
        margins = margin_lower_bounds(lnet, box, bounds, prop.label, branch)
        open_dirs = [i for i in prop.directions(lnet.output_dim) if margins[i] < 0]
        if not open_dirs:
            continue
        if cfg.attack_steps > 0 and prop.epsilon > 0:
            stats["attack_calls"] += 1
            xa = _attack(net, prop, box, cfg.attack_steps, cfg.attack_restarts, rng,
                         start_random=parent is not None)
            if check_counterexample(net, prop, xa):
                return done(SAT, xa)
        leaf = leaf_check(net, prop, branch, bounds, lnet, open_dirs, cfg.prove_tol)
        stats["lp_calls"] += leaf.lp_calls
        if leaf.status == "proved":
            continue
        if leaf.status == "feasible":
            return done(SAT, leaf.point)
        pick = select_branch_neuron(bounds, branch)
        if pick is None:
            undecided = True
            continue
        if budget.branches is not None and stats["branches_explored"] >= budget.branches:
            return done(UNKNOWN)
        stats["branches_explored"] += 1
        layer, neuron = pick
        stack.append((branch.split(layer, neuron, INACTIVE), bounds, depth + 1))
        stack.append((branch.split(layer, neuron, ACTIVE), bounds, depth + 1))
    return done(UNKNOWN if undecided else UNSAT)
