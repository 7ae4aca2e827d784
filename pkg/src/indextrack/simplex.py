"""Bounded-variable revised simplex for small dense linear programs.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq`` and
``lb <= x <= ub``. Lower bounds must be finite. The basis inverse is kept
explicitly and refactorised periodically; pricing is Dantzig's rule with a
switch to Bland's rule after a run of degenerate pivots.

A previous optimal basis can be passed back in. If it is still primal
feasible the primal method continues from it. Otherwise the dual simplex
restores primal feasibility first, on costs shifted where needed so that the
starting basis is dual feasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-9
OPT_TOL = 1e-9
REFACTOR_EVERY = 64
DEGENERATE_RUN = 50


@dataclass
class Basis:
    """Basic column indices and the at-upper flags of all columns (structural + slack)."""

    basic: np.ndarray
    at_upper: np.ndarray


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray | None
    fun: float
    iterations: int
    basis: Basis | None = None

    @property
    def success(self) -> bool:
        return self.status == "optimal"


class _Tableau:
    """Working state of one solve in standard form ``A x = b, l <= x <= u``."""

    def __init__(self, A, b, lb, ub):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.m, self.n = A.shape
        self.iterations = 0

    # -- basis bookkeeping -------------------------------------------------

    def set_basis(self, basic, at_upper):
        self.basic = np.asarray(basic, dtype=int).copy()
        self.at_upper = np.asarray(at_upper, dtype=bool).copy()
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[self.basic] = True
        self.refactor()

    def refactor(self):
        self.Binv = np.linalg.inv(self.A[:, self.basic])
        self.since_refactor = 0

    def nonbasic_values(self):
        x = np.where(self.at_upper, self.ub, self.lb)
        x[self.is_basic] = 0.0
        return x

    def primal(self):
        x = self.nonbasic_values()
        xb = self.Binv @ (self.b - self.A @ x)
        x[self.basic] = xb
        return x, xb

    def reduced_costs(self, c):
        y = c[self.basic] @ self.Binv
        d = c - y @ self.A
        d[self.is_basic] = 0.0
        return d

    def pivot(self, r, q, alpha, leaving_upper):
        leaving = self.basic[r]
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.basic[r] = q
        self.is_basic[q] = True
        self.is_basic[leaving] = False
        self.at_upper[leaving] = leaving_upper
        self.at_upper[q] = False
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()

    # -- primal simplex ----------------------------------------------------

    def run_primal(self, c, max_iter):
        bland = False
        degenerate = 0
        lb, ub = self.lb, self.ub
        free = ub > lb
        while True:
            if self.iterations >= max_iter:
                return "iteration_limit"
            x, xb = self.primal()
            d = self.reduced_costs(c)
            gain = np.where(self.at_upper, d, -d)
            eligible = (~self.is_basic) & free & (gain > OPT_TOL)
            if not eligible.any():
                return "optimal"
            if bland:
                q = int(np.flatnonzero(eligible)[0])
            else:
                q = int(np.argmax(np.where(eligible, gain, -np.inf)))
            alpha = self.Binv @ self.A[:, q]
            delta = -1.0 if self.at_upper[q] else 1.0
            da = delta * alpha
            lbb, ubb = lb[self.basic], ub[self.basic]
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = np.where(da > PIVOT_TOL, (xb - lbb) / da, np.inf)
                inc = np.where(da < -PIVOT_TOL, (ubb - xb) / -da, np.inf)
            limits = np.maximum(np.minimum(dec, inc), 0.0)
            theta_flip = ub[q] - lb[q]
            theta = limits.min() if limits.size else np.inf
            self.iterations += 1
            if theta_flip <= theta:
                if not np.isfinite(theta_flip):
                    return "unbounded"
                self.at_upper[q] = not self.at_upper[q]
                degenerate = 0
                bland = False
                continue
            ties = np.flatnonzero(limits <= theta + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basic[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            leaving_upper = bool(da[r] < 0)
            self.pivot(r, q, alpha, leaving_upper)
            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
                bland = False

    # -- dual simplex ------------------------------------------------------

    def run_dual(self, c, max_iter):
        lb, ub = self.lb, self.ub
        free = ub > lb
        while True:
            if self.iterations >= max_iter:
                return "iteration_limit"
            x, xb = self.primal()
            lbb, ubb = lb[self.basic], ub[self.basic]
            below = lbb - xb
            above = xb - ubb
            viol = np.maximum(below, above)
            r = int(np.argmax(viol))
            if viol[r] <= FEAS_TOL:
                return "optimal"
            d = self.reduced_costs(c)
            row = self.Binv[r] @ self.A
            if below[r] > above[r]:
                # basic var must rise: need alpha_rj * dx_j < 0
                cand = np.where(self.at_upper, row > PIVOT_TOL, row < -PIVOT_TOL)
                leaving_upper = False
            else:
                cand = np.where(self.at_upper, row < -PIVOT_TOL, row > PIVOT_TOL)
                leaving_upper = True
            cand &= (~self.is_basic) & free
            if not cand.any():
                return "infeasible"
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(cand, np.abs(d) / np.abs(row), np.inf)
            best = ratio.min()
            ties = np.flatnonzero(ratio <= best + 1e-12)
            q = int(ties[np.argmax(np.abs(row[ties]))])
            alpha = self.Binv @ self.A[:, q]
            self.iterations += 1
            self.pivot(r, q, alpha, leaving_upper)


def _standard_form(c, A_ub, b_ub, A_eq, b_eq, lb, ub):
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    A = np.zeros((m_ub + m_eq, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    lo = np.concatenate([lb, np.zeros(m_ub)])
    hi = np.concatenate([ub, np.full(m_ub, np.inf)])
    cost = np.concatenate([c, np.zeros(m_ub)])
    return A, b, lo, hi, cost, m_ub


def _drop_empty_rows(A, b):
    """Remove all-zero rows; returns None if one of them has a nonzero right-hand side."""
    empty = ~np.any(A != 0, axis=1)
    if np.any(np.abs(b[empty]) > FEAS_TOL):
        return None
    return A[~empty], b[~empty]


def solve_lp(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    lb=None,
    ub=None,
    basis: Basis | None = None,
    max_iter: int = 50_000,
) -> LPResult:
    """Solve a bounded linear program; see the module docstring."""
    c = np.asarray(c, dtype=float)
    n = c.size
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if not np.all(np.isfinite(lb)):
        raise ValueError("lower bounds must be finite")
    if np.any(ub < lb - FEAS_TOL):
        return LPResult("infeasible", None, np.nan, 0)
    ub = np.maximum(ub, lb)
    A, b, lo, hi, cost, m_ub = _standard_form(c, A_ub, b_ub, A_eq, b_eq, lb, ub)
    reduced = _drop_empty_rows(A, b)
    if reduced is None:
        return LPResult("infeasible", None, np.nan, 0)
    A, b = reduced

    if basis is not None and A.shape[0] == basis.basic.size:
        res = _warm(A, b, lo, hi, cost, basis, max_iter)
        if res is not None:
            return _finish(res, n)
    return _finish(_cold(A, b, lo, hi, cost, max_iter), n)


def _finish(res: LPResult, n: int) -> LPResult:
    if res.x is not None:
        res.x = res.x[:n].copy()
    return res


def _result(tab: _Tableau, cost, status):
    tab.refactor()
    x, _ = tab.primal()
    if status != "optimal":
        return LPResult(status, None, np.nan, tab.iterations)
    return LPResult(
        "optimal", x, float(cost @ x), tab.iterations,
        Basis(tab.basic.copy(), tab.at_upper[: tab.n].copy()),
    )


def _warm(A, b, lo, hi, cost, basis, max_iter):
    tab = _Tableau(A, b, lo, hi)
    at_upper = basis.at_upper.copy() & np.isfinite(hi)
    try:
        tab.set_basis(basis.basic, at_upper)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(tab.Binv)):
        return None
    x, xb = tab.primal()
    lbb, ubb = lo[tab.basic], hi[tab.basic]
    primal_ok = np.all(xb >= lbb - FEAS_TOL) and np.all(xb <= ubb + FEAS_TOL)
    if not primal_ok:
        d = tab.reduced_costs(cost)
        free = hi > lo
        wrong = np.where(tab.at_upper, d > OPT_TOL, d < -OPT_TOL) & ~tab.is_basic & free
        # Shift the costs of wrong-signed nonbasic columns so the basis is dual
        # feasible, regain primal feasibility, then finish on the true costs.
        # A dual-simplex infeasibility certificate does not depend on costs.
        shifted = cost.copy()
        shifted[wrong] -= d[wrong]
        status = tab.run_dual(shifted, max_iter)
        if status == "infeasible":
            return LPResult("infeasible", None, np.nan, tab.iterations)
        if status != "optimal":
            return None
    status = tab.run_primal(cost, max_iter)
    return _result(tab, cost, status)


def _cold(A, b, lo, hi, cost, max_iter):
    m, n = A.shape
    x0 = np.where(np.isfinite(lo), lo, hi)
    resid = b - A @ x0
    # Slack columns can start basic where the residual has the right sign.
    basic = np.full(m, -1)
    for j in range(n):
        col = A[:, j]
        nz = np.flatnonzero(col)
        if nz.size == 1 and lo[j] == 0 and np.isinf(hi[j]):
            r = nz[0]
            if basic[r] < 0 and resid[r] / col[r] >= 0:
                basic[r] = j
    need = np.flatnonzero(basic < 0)
    art = np.zeros((m, need.size))
    art[need, np.arange(need.size)] = np.where(resid[need] >= 0, 1.0, -1.0)
    A1 = np.hstack([A, art])
    lo1 = np.concatenate([lo, np.zeros(need.size)])
    hi1 = np.concatenate([hi, np.full(need.size, np.inf)])
    basic[need] = n + np.arange(need.size)
    tab = _Tableau(A1, b, lo1, hi1)
    tab.set_basis(basic, np.zeros(n + need.size, dtype=bool))

    if need.size:
        c1 = np.concatenate([np.zeros(n), np.ones(need.size)])
        status = tab.run_primal(c1, max_iter)
        if status == "iteration_limit":
            return LPResult(status, None, np.nan, tab.iterations)
        tab.refactor()
        x, _ = tab.primal()
        if x[n:].sum() > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            return LPResult("infeasible", None, np.nan, tab.iterations)
        # Artificials may no longer move; push basic ones out where possible.
        tab.ub[n:] = 0.0
        for r in range(m):
            if tab.basic[r] < n:
                continue
            row = tab.Binv[r] @ A
            row[tab.is_basic[:n]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-9:
                alpha = tab.Binv @ tab.A[:, j]
                tab.pivot(r, j, alpha, False)
        leftover = tab.basic >= n
        if leftover.any():
            # redundant rows: drop them and their artificials
            keep = ~leftover
            A2, b2 = A[keep], b[keep]
            basic2 = tab.basic[keep]
            tab2 = _Tableau(A2, b2, lo, hi)
            tab2.iterations = tab.iterations
            try:
                tab2.set_basis(basic2, tab.at_upper[:n])
            except np.linalg.LinAlgError:
                return LPResult("infeasible", None, np.nan, tab.iterations)
            tab = tab2
        else:
            tab = _rebase(tab, A, b, lo, hi, n)
        x, xb = tab.primal()
        lbb, ubb = tab.lb[tab.basic], tab.ub[tab.basic]
        if np.any(xb < lbb - 1e-7) or np.any(xb > ubb + 1e-7):
            return LPResult("infeasible", None, np.nan, tab.iterations)
    else:
        tab = _rebase(tab, A, b, lo, hi, n)

    status = tab.run_primal(cost, max_iter)
    res = _result(tab, cost, status)
    if res.basis is not None and res.basis.basic.size != A.shape[0]:
        res.basis = None
    return res


def _rebase(tab: _Tableau, A, b, lo, hi, n) -> _Tableau:
    out = _Tableau(A, b, lo, hi)
    out.iterations = tab.iterations
    out.set_basis(tab.basic, tab.at_upper[:n])
    return out
