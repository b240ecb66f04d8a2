"""Dense two-phase primal simplex with bounded variables.

Problems are stated as maximisation::

    max c.x  s.t.  A_i x (<=|=|>=) b_i,  lo <= x <= hi

Each row gets a slack (``A_i x + s_i = b_i``) whose bounds encode the
relation; rows whose slack cannot absorb the initial residual get an
artificial variable that phase 1 drives to zero.  Nonbasic variables sit at
a finite bound (or at 0 when free).  Pricing is Dantzig's largest reduced
cost with lowest-index tie-break; after ``2*(n+m)`` consecutive degenerate
pivots Bland's rule takes over until progress resumes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
OPT_TOL = 1e-9
MAX_PIVOTS = 10**6

LE, EQ, GE = "<=", "=", ">="


class LpStalled(RuntimeError):
    """Pivot cap reached before a terminal status."""


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        self.lo = np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.asarray(self.hi, dtype=float).ravel()
        m = self.A.shape[0]
        if self.b.size != m or len(self.senses) != m:
            raise ValueError(f"{m} rows but {self.b.size} rhs values and {len(self.senses)} senses")
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("variable bound vectors must have one entry per variable")
        if np.any(self.lo > self.hi):
            raise ValueError("variable lower bound exceeds upper bound")
        bad = set(self.senses) - {LE, EQ, GE}
        if bad:
            raise ValueError(f"unknown relation(s) {bad}")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def violation(self, x) -> float:
        """Largest constraint or bound violation of point x."""
        x = np.asarray(x, dtype=float)
        worst = max(0.0, float(np.max(self.lo - x, initial=0.0)), float(np.max(x - self.hi, initial=0.0)))
        if self.m:
            r = self.A @ x - self.b
            s = np.array(self.senses)
            worst = max(worst, float(np.max(np.where(s == LE, r, 0.0))),
                        float(np.max(np.where(s == GE, -r, 0.0))),
                        float(np.max(np.where(s == EQ, np.abs(r), 0.0))))
        return worst

    def to_lp_text(self) -> str:
        """CPLEX-style LP text, for cross-checking with external solvers."""
        def expr(coeffs):
            parts = [f"{'+' if v >= 0 else '-'} {abs(v)!r} x{j}" for j, v in enumerate(coeffs) if v != 0]
            return " ".join(parts) if parts else "0 x0"

        lines = ["Maximize", f" obj: {expr(self.c)}", "Subject To"]
        for i in range(self.m):
            lines.append(f" c{i}: {expr(self.A[i])} {self.senses[i]} {self.b[i]!r}")
        lines.append("Bounds")
        for j in range(self.n):
            lo = "-inf" if np.isneginf(self.lo[j]) else repr(self.lo[j])
            hi = "+inf" if np.isposinf(self.hi[j]) else repr(self.hi[j])
            lines.append(f" {lo} <= x{j} <= {hi}")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LpOutcome:
    status: str  # optimal | infeasible | unbounded
    objective: float = float("nan")
    x: np.ndarray | None = None
    pivots: int = 0


@dataclass
class _State:
    T: np.ndarray          # B^-1 [A | I | artificial]
    basis: np.ndarray      # column index basic in each row
    x: np.ndarray          # value of every column
    lo: np.ndarray
    hi: np.ndarray
    pivots: int = 0

    def copy(self) -> "_State":
        return _State(self.T.copy(), self.basis.copy(), self.x.copy(), self.lo.copy(),
                      self.hi.copy(), self.pivots)


class _Simplex:
    def __init__(self, p: LpProblem):
        self.p = p
        n, m = p.n, p.m
        slo = np.array([0.0 if s == LE else (-np.inf if s == GE else 0.0) for s in p.senses])
        shi = np.array([np.inf if s == LE else 0.0 for s in p.senses])
        xn = np.where(np.isfinite(p.lo), p.lo, np.where(np.isfinite(p.hi), p.hi, 0.0))
        r = p.b - p.A @ xn if m else np.zeros(0)
        v = np.clip(r, slo, shi)
        need = np.abs(r - v) > 0
        sigma = np.where(r - v >= 0, 1.0, -1.0)
        art_rows = np.flatnonzero(need)
        k = art_rows.size
        self.n_struct, self.n_slack, self.n_art = n, m, k
        art = np.zeros((m, k))
        art[art_rows, np.arange(k)] = sigma[art_rows]
        self.M = np.hstack([p.A, np.eye(m), art])  # original columns, for final refinement
        d = np.where(need, sigma, 1.0)               # B^-1 is diag(d)
        T = self.M * d[:, None]
        basis = np.where(need, 0, n + np.arange(m))
        basis[art_rows] = n + m + np.arange(k)
        x = np.concatenate([xn, v, np.abs(r - v)[art_rows]])
        x[n + np.flatnonzero(~need)] = r[~need]
        lo = np.concatenate([p.lo, slo, np.zeros(k)])
        hi = np.concatenate([p.hi, shi, np.full(k, np.inf)])
        self.state = _State(T, basis, x, lo, hi)

    # -- core loop ----------------------------------------------------------
    def _run(self, st: _State, cost: np.ndarray) -> str:
        n_total = st.T.shape[1]
        m = st.T.shape[0]
        is_basic = np.zeros(n_total, dtype=bool)
        is_basic[st.basis] = True
        degenerate = 0
        bland = False
        limit = 2 * (self.n_struct + m)
        while True:
            if st.pivots >= MAX_PIVOTS:
                raise LpStalled(f"simplex exceeded {MAX_PIVOTS} pivots")
            d = cost - cost[st.basis] @ st.T if m else cost.copy()
            movable = ~is_basic & (st.hi > st.lo)
            up = movable & (st.x < st.hi) & (d > OPT_TOL)
            down = movable & (st.x > st.lo) & (d < -OPT_TOL)
            cand = np.flatnonzero(up | down)
            if cand.size == 0:
                return "optimal"
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])  # argmax returns the lowest index on ties
            delta = 1.0 if up[j] else -1.0
            col = st.T[:, j] * delta
            xb = st.x[st.basis]
            lob, hib = st.lo[st.basis], st.hi[st.basis]
            ratios = np.full(m, np.inf)
            dec = col > PIVOT_TOL
            inc = col < -PIVOT_TOL
            ratios[dec] = np.maximum(xb[dec] - lob[dec], 0.0) / col[dec]
            ratios[inc] = np.maximum(hib[inc] - xb[inc], 0.0) / -col[inc]
            own = st.hi[j] - st.lo[j]
            t_row = ratios.min() if m else np.inf
            if not np.isfinite(own) and not np.isfinite(t_row):
                return "unbounded"
            if own <= t_row:
                # bound flip, no basis change
                t = own
                st.x[st.basis] = xb - t * col
                st.x[j] = st.hi[j] if delta > 0 else st.lo[j]
                st.pivots += 1
                degenerate = 0
                bland = False
                continue
            t = t_row
            ties = np.flatnonzero(ratios <= t_row + 1e-12)
            if bland:
                r = int(ties[np.argmin(st.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(col[ties]))])
            leaving = st.basis[r]
            st.x[st.basis] = xb - t * col
            st.x[j] = st.x[j] + delta * t
            st.x[leaving] = st.lo[leaving] if col[r] > 0 else st.hi[leaving]
            piv = st.T[r, j]
            st.T[r] /= piv
            factor = st.T[:, j].copy()
            factor[r] = 0.0
            st.T -= np.outer(factor, st.T[r])
            st.basis[r] = j
            is_basic[leaving] = False
            is_basic[j] = True
            st.pivots += 1
            if t <= 1e-12:
                degenerate += 1
                if degenerate > limit:
                    bland = True
            else:
                degenerate = 0
                bland = False

    def phase1(self) -> bool:
        st = self.state
        if self.n_art == 0:
            return True
        cost = np.zeros(st.T.shape[1])
        cost[self.n_struct + self.n_slack:] = -1.0
        self._run(st, cost)
        if st.x[self.n_struct + self.n_slack:].sum() > FEAS_TOL:
            return False
        art0 = self.n_struct + self.n_slack
        st.hi[art0:] = 0.0
        st.x[art0:] = np.clip(st.x[art0:], 0.0, 0.0)
        # drive zero-valued artificials out of the basis where possible
        for r in range(st.T.shape[0]):
            if st.basis[r] >= art0:
                row = np.abs(st.T[r, :art0])
                row[st.basis[st.basis < art0]] = 0.0
                j = int(np.argmax(row)) if row.size else 0
                if row.size and row[j] > PIVOT_TOL:
                    piv = st.T[r, j]
                    st.T[r] /= piv
                    factor = st.T[:, j].copy()
                    factor[r] = 0.0
                    st.T -= np.outer(factor, st.T[r])
                    st.basis[r] = j
                    st.pivots += 1
        return True

    def phase2(self, c: np.ndarray, st: _State) -> LpOutcome:
        cost = np.zeros(st.T.shape[1])
        cost[:self.n_struct] = c
        status = self._run(st, cost)
        if status != "optimal":
            return LpOutcome(status, np.inf, None, st.pivots)
        x = self._refine(st)
        return LpOutcome("optimal", float(c @ x), x, st.pivots)

    def _refine(self, st: _State) -> np.ndarray:
        """Recompute basic values from the original columns to shed pivot drift."""
        x = st.x.copy()
        m = st.T.shape[0]
        if m:
            nonbasic = np.ones(x.size, dtype=bool)
            nonbasic[st.basis] = False
            rhs = self.p.b - self.M[:, nonbasic] @ x[nonbasic]
            try:
                xb = np.linalg.solve(self.M[:, st.basis], rhs)
                if np.all(np.isfinite(xb)):
                    x[st.basis] = xb
            except np.linalg.LinAlgError:
                pass
        xs = np.clip(x[:self.n_struct], self.p.lo, self.p.hi)
        return xs


def solve_lp(p: LpProblem) -> LpOutcome:
    s = _Simplex(p)
    if not s.phase1():
        return LpOutcome("infeasible", np.nan, None, s.state.pivots)
    out = s.phase2(p.c, s.state)
    _check(p, out)
    return out


def solve_lp_many(p: LpProblem, objectives) -> list[LpOutcome]:
    """Solve one feasible region under several objectives, sharing phase 1."""
    s = _Simplex(p)
    if not s.phase1():
        return [LpOutcome("infeasible", np.nan, None, s.state.pivots) for _ in objectives]
    outs = []
    for c in objectives:
        c = np.asarray(c, dtype=float).ravel()
        if c.size != p.n:
            raise ValueError("objective length mismatch")
        out = s.phase2(c, s.state.copy())
        _check(p, out)
        outs.append(out)
    return outs


def _check(p: LpProblem, out: LpOutcome) -> None:
    if out.status == "optimal":
        viol = p.violation(out.x)
        if viol > FEAS_TOL:
            log.warning("LP optimum violates constraints by %.3g", viol)
