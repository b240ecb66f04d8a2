"""Sound pre-activation bounds over an input box and neuron stability.

Two propagation methods are provided: interval arithmetic (IBP) and a
DeepPoly-style backward substitution of linear bounds.  The default
``intersected`` method runs both layer by layer and keeps the tighter interval
at every layer before moving on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .network import LoweredNet, Network, lower

ACTIVE, INACTIVE = 1, -1
CROSS_TOL = 1e-9


class SoundnessError(RuntimeError):
    """Two supposedly sound bound maps cross: an internal bug."""


@dataclass(frozen=True)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("box lower/upper shapes differ")
        if np.any(lo > hi):
            raise ValueError("box lower exceeds upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, x0, eps: float, domain=(0.0, 1.0)) -> "InputBox":
        x0 = np.asarray(x0, dtype=float).ravel()
        return cls(np.maximum(x0 - eps, domain[0]), np.minimum(x0 + eps, domain[1]))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lower + rng.uniform(size=(n, self.lower.size)) * (self.upper - self.lower)


class BranchConstraints(Mapping):
    """Immutable map (layer, neuron) -> ACTIVE / INACTIVE."""

    def __init__(self, splits: Mapping | None = None):
        self._splits = dict(splits or {})
        for key, phase in self._splits.items():
            if phase not in (ACTIVE, INACTIVE):
                raise ValueError(f"bad phase {phase!r} for neuron {key}")

    def __getitem__(self, key):
        return self._splits[key]

    def __iter__(self):
        return iter(self._splits)

    def __len__(self):
        return len(self._splits)

    def __repr__(self):
        return f"BranchConstraints({self._splits})"

    def split(self, layer: int, neuron: int, phase: int) -> "BranchConstraints":
        if (layer, neuron) in self._splits:
            raise ValueError(f"neuron {(layer, neuron)} already split")
        return BranchConstraints({**self._splits, (layer, neuron): phase})

    def phases(self, layer: int, width: int) -> np.ndarray:
        out = np.zeros(width, dtype=int)
        for (li, ni), ph in self._splits.items():
            if li == layer:
                out[ni] = ph
        return out


@dataclass
class BoundsMap:
    lower: list
    upper: list
    out_lower: np.ndarray
    out_upper: np.ndarray
    method: str
    infeasible: bool = False  # branch constraints contradict the bounds

    @property
    def n_neurons(self) -> int:
        return int(sum(l.size for l in self.lower))


def _relaxation(l, u, phase):
    """Linear upper/lower relaxation (su, tu, sl, tl) of relu over [l, u]."""
    active = (phase == ACTIVE) | ((phase == 0) & (l >= 0))
    inactive = (phase == INACTIVE) | ((phase == 0) & (u <= 0))
    unstable = ~active & ~inactive
    su = np.where(active, 1.0, 0.0)
    sl = su.copy()
    tu = np.zeros_like(l)
    if np.any(unstable):
        lu, uu = l[unstable], u[unstable]
        slope = uu / (uu - lu)
        su[unstable] = slope
        tu[unstable] = -lu * slope
        sl[unstable] = np.where(uu >= -lu, 1.0, 0.0)
    return su, tu, sl, np.zeros_like(l)


def _backsub(lnet: LoweredNet, k: int, box: InputBox, relax, a0=None, c0=None):
    """Bounds of ``a0 @ z_k + c0`` (default: z_k itself) by back-substitution."""
    w, b = lnet.weights[k], lnet.biases[k]
    if a0 is None:
        au, cu = w.copy(), b.copy()
    else:
        au, cu = a0 @ w, a0 @ b + (0.0 if c0 is None else c0)
    al, cl = au.copy(), cu.copy()
    for j in range(k - 1, -1, -1):
        su, tu, sl, tl = relax[j]
        p, n = np.maximum(au, 0), np.minimum(au, 0)
        cu = cu + p @ tu + n @ tl
        au = p * su + n * sl
        p, n = np.maximum(al, 0), np.minimum(al, 0)
        cl = cl + p @ tl + n @ tu
        al = p * sl + n * su
        wj, bj = lnet.weights[j], lnet.biases[j]
        cu, cl = cu + au @ bj, cl + al @ bj
        au, al = au @ wj, al @ wj
    lo, hi = box.lower, box.upper
    upper = np.maximum(au, 0) @ hi + np.minimum(au, 0) @ lo + cu
    lower = np.maximum(al, 0) @ lo + np.minimum(al, 0) @ hi + cl
    return lower, upper


def _ibp_layer(w, b, hl, hu):
    mid, rad = (hu + hl) / 2, (hu - hl) / 2
    c = w @ mid + b
    r = np.abs(w) @ rad
    return c - r, c + r


def _meet(l1, u1, l2, u2):
    l, u = np.maximum(l1, l2), np.minimum(u1, u2)
    cross = l > u
    if np.any(cross):
        gap = l - u
        scale = 1.0 + np.maximum(np.abs(l), np.abs(u))
        if np.any(gap[cross] > CROSS_TOL * scale[cross]):
            return l, u, True
        mid = (l + u) / 2
        l, u = np.where(cross, mid, l), np.where(cross, mid, u)
    return l, u, False


def _as_lowered(net) -> LoweredNet:
    return net if isinstance(net, LoweredNet) else lower(net)


def _propagate(net, box: InputBox, branch, parent, use_ibp: bool, use_linear: bool,
               method: str) -> BoundsMap:
    lnet = _as_lowered(net)
    branch = branch if branch is not None else BranchConstraints()
    if box.lower.size != lnet.input_dim:
        raise ValueError(f"box has {box.lower.size} inputs, network expects {lnet.input_dim}")
    lows, ups, relax = [], [], []
    hl, hu = box.lower, box.upper
    infeasible = False
    n = lnet.n_hidden
    out_l = out_u = None
    for k in range(n + 1):
        cand = []
        if use_ibp:
            cand.append(_ibp_layer(lnet.weights[k], lnet.biases[k], hl, hu))
        if use_linear:
            cand.append(_backsub(lnet, k, box, relax))
        l, u = cand[0]
        for l2, u2 in cand[1:]:
            l, u, bad = _meet(l, u, l2, u2)
            infeasible |= bad
        if parent is not None:
            pl, pu = (parent.lower[k], parent.upper[k]) if k < n else (parent.out_lower, parent.out_upper)
            l, u, bad = _meet(l, u, pl, pu)
            infeasible |= bad
        if k == n:
            out_l, out_u = l, u
            break
        phase = branch.phases(k, l.size)
        # a split phase that the bounds rule out makes the branch empty
        if np.any((phase == ACTIVE) & (u < 0)) or np.any((phase == INACTIVE) & (l > 0)):
            infeasible = True
        lows.append(l)
        ups.append(u)
        relax.append(_relaxation(l, u, phase))
        hl = np.where(phase == INACTIVE, 0.0, np.maximum(l, 0.0))
        hu = np.where(phase == INACTIVE, 0.0, np.maximum(u, 0.0))
    return BoundsMap(lows, ups, out_l, out_u, method, infeasible)


def ibp_bounds(net, box: InputBox, branch: BranchConstraints | None = None) -> BoundsMap:
    return _propagate(net, box, branch, None, True, False, "ibp")


def linear_bounds(net, box: InputBox, branch: BranchConstraints | None = None) -> BoundsMap:
    return _propagate(net, box, branch, None, False, True, "linear")


def compute_bounds(net, box: InputBox, branch: BranchConstraints | None = None,
                   parent: BoundsMap | None = None) -> BoundsMap:
    """Layer-wise intersection of IBP and linear bounds (and ``parent``, if given)."""
    return _propagate(net, box, branch, parent, True, True, "intersected")


def intersect_bounds(a: BoundsMap, b: BoundsMap) -> BoundsMap:
    if len(a.lower) != len(b.lower):
        raise ValueError("bound maps cover different networks")
    lows, ups = [], []
    for la, ua, lb, ub in zip(a.lower, a.upper, b.lower, b.upper):
        l, u, bad = _meet(la, ua, lb, ub)
        if bad:
            raise SoundnessError("intersected bounds cross; one of the inputs is unsound")
        lows.append(l)
        ups.append(u)
    ol, ou, bad = _meet(a.out_lower, a.out_upper, b.out_lower, b.out_upper)
    if bad:
        raise SoundnessError("intersected output bounds cross")
    return BoundsMap(lows, ups, ol, ou, "intersected", a.infeasible or b.infeasible)


def relaxations(bounds: BoundsMap, branch: BranchConstraints | None = None) -> list:
    branch = branch if branch is not None else BranchConstraints()
    return [_relaxation(l, u, branch.phases(k, l.size))
            for k, (l, u) in enumerate(zip(bounds.lower, bounds.upper))]


def margin_lower_bounds(net, box: InputBox, bounds: BoundsMap, label: int,
                        branch: BranchConstraints | None = None) -> np.ndarray:
    """Lower bounds of y_label - y_i for every class i (entry ``label`` is 0)."""
    lnet = _as_lowered(net)
    m = lnet.output_dim
    spec = -np.eye(m)
    spec[:, label] += 1.0
    lo, _ = _backsub(lnet, lnet.n_hidden, box, relaxations(bounds, branch), a0=spec)
    # interval fallback from the output bounds
    ibp = bounds.out_lower[label] - bounds.out_upper
    lo = np.maximum(lo, ibp)
    lo[label] = 0.0
    return lo


@dataclass
class StabilityReport:
    per_layer: list  # dicts with active / inactive / unstable counts
    method: str = "intersected"

    @property
    def total(self) -> int:
        return sum(d["active"] + d["inactive"] + d["unstable"] for d in self.per_layer)

    @property
    def stable(self) -> int:
        return sum(d["active"] + d["inactive"] for d in self.per_layer)

    @property
    def unstable(self) -> int:
        return self.total - self.stable

    @property
    def stable_ratio(self) -> float:
        return self.stable / self.total if self.total else 1.0

    def to_json(self) -> dict:
        return {"per_layer": [dict(d) for d in self.per_layer], "stable_ratio": self.stable_ratio,
                "method": self.method}


def neuron_states(l: np.ndarray, u: np.ndarray) -> np.ndarray:
    """+1 stably active (l >= 0), -1 stably inactive (u <= 0), 0 unstable."""
    inactive = u <= 0
    active = (l >= 0) & ~inactive
    return np.where(active, ACTIVE, np.where(inactive, INACTIVE, 0))


def classify_neurons(bounds: BoundsMap) -> StabilityReport:
    rows = []
    for l, u in zip(bounds.lower, bounds.upper):
        s = neuron_states(l, u)
        rows.append({"active": int(np.sum(s == ACTIVE)), "inactive": int(np.sum(s == INACTIVE)),
                     "unstable": int(np.sum(s == 0))})
    return StabilityReport(rows, bounds.method)


def stable_percent(net, properties, method: str = "intersected") -> float:
    """Mean stable-neuron ratio over the properties' input boxes, in percent."""
    props = list(properties)
    if not props:
        raise ValueError("need at least one property")
    lnet = _as_lowered(net)
    fn = {"intersected": compute_bounds, "ibp": ibp_bounds, "linear": linear_bounds}[method]
    ratios = [classify_neurons(fn(lnet, p.box)).stable_ratio for p in props]
    return 100.0 * float(np.mean(ratios))
