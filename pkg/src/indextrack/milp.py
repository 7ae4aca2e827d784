"""Partial-replication portfolio as a mixed-integer linear program.

The portfolio stays close to the lagged index weights ``w^m`` in the sum of
the mean absolute and the maximum absolute deviation, while matching the
index's predicted net beta and alpha and holding at most ``N*`` instruments.

Decision vector layout (``n = |S|``)::

    [ w_0 .. w_{n-1} | u_0 .. u_{n-1} | z_0 .. z_{n-1} | Z ]

Inequality rows, in order::

    w_i - z_i        <=  w^m_i          (n rows)
   -w_i - z_i        <= -w^m_i          (n rows)
    z_i - Z          <=  0              (n rows)
    w_i - M_i u_i    <=  0              (n rows, M_i = 1 unless tightened)
    sum_i u_i        <=  N*             (1 row)

Equality rows: net beta over ``S \\ S*``, net alpha over ``S \\ S*``, and
``sum_i w_i = 1``. Exclusions ``S*`` are pinned through the bounds of ``w``.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import InfeasibleProblemError, ModelingError, SolverTimeoutError
from .simplex import LPResult, solve_lp

SUPPORT_TOL = 1e-9
INTEGRALITY_TOL = 1e-9
CONSTRAINT_GROUPS = ("cardinality", "beta", "alpha", "exclusions", "caps")


def _coefficients(pred) -> tuple[float, float]:
    if hasattr(pred, "alpha") and hasattr(pred, "beta"):
        return float(pred.alpha), float(pred.beta)
    alpha, beta = pred[0], pred[1]
    return float(alpha), float(beta)


@dataclass
class MilpProblem:
    """One rebalancing problem.

    Attributes
    ----------
    instruments : tuple of str
        ``S = S_{t_n} | S_{t_n-1}`` in a fixed order.
    alpha, beta : ndarray
        Predicted coefficients; NaN where no prediction is needed.
    prior : ndarray
        Index weights at ``t_n - 1`` (zero for instruments new at ``t_n``).
    listed : ndarray of bool
        Membership in ``S_{t_n}``. Unlisted instruments are held at weight 0.
    fixed : ndarray of bool
        The exclusion set ``S*``, held at their prior weight.
    caps : ndarray
        Upper bounds ``w^max`` (1 where uncapped).
    n_star : int
        Cardinality cap.
    alpha_target, beta_target : float
        Replication targets for the net alpha and beta of ``S \\ S*``.
    equality_tolerance : float
        Zero keeps the alpha and beta rows as equalities; a positive value
        widens them to bands of that half-width.
    """

    instruments: tuple
    alpha: np.ndarray
    beta: np.ndarray
    prior: np.ndarray
    listed: np.ndarray
    fixed: np.ndarray
    caps: np.ndarray
    n_star: int
    alpha_target: float
    beta_target: float
    equality_tolerance: float = 0.0

    def __post_init__(self):
        self.instruments = tuple(self.instruments)
        n = len(self.instruments)
        for name in ("alpha", "beta", "prior", "caps"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(n))
        for name in ("listed", "fixed"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=bool).reshape(n))
        self.n_star = int(self.n_star)
        if self.n_star < int(np.sum(self.fixed & (self.prior > 0))):
            raise ModelingError(f"N*={self.n_star} is below the number of pinned holdings")

    @property
    def n(self) -> int:
        return len(self.instruments)

    @property
    def free(self) -> np.ndarray:
        """Instruments entering the alpha and beta rows: listed and not excluded."""
        return self.listed & ~self.fixed

    def weight_bounds(self, drop=()) -> tuple[np.ndarray, np.ndarray]:
        ub = np.ones(self.n) if "caps" in drop else np.minimum(self.caps, 1.0)
        lb = np.zeros(self.n)
        if "exclusions" not in drop:
            pinned = self.fixed & self.listed
            lb[pinned] = ub[pinned] = self.prior[pinned]
        ub[~self.listed] = 0.0
        lb[~self.listed] = 0.0
        return lb, ub

    def to_lp(self, big_m=None, drop=()):
        """Dense LP relaxation ``(c, A_ub, b_ub, A_eq, b_eq, lb, ub)`` with ``u`` in [0, 1].

        ``big_m`` replaces the unit coefficient of ``u_i`` in ``w_i <= M_i u_i``.
        ``drop`` names constraint groups to leave out (used for diagnosis).
        """
        n = self.n
        nv = 3 * n + 1
        W, U, Zs, ZZ = 0, n, 2 * n, 3 * n
        eye = np.eye(n)
        M = np.ones(n) if big_m is None else np.asarray(big_m, dtype=float)
        rows = []
        rhs = []
        blk = np.zeros((n, nv))
        blk[:, W : W + n] = eye
        blk[:, Zs : Zs + n] = -eye
        rows.append(blk)
        rhs.append(self.prior)
        blk = np.zeros((n, nv))
        blk[:, W : W + n] = -eye
        blk[:, Zs : Zs + n] = -eye
        rows.append(blk)
        rhs.append(-self.prior)
        blk = np.zeros((n, nv))
        blk[:, Zs : Zs + n] = eye
        blk[:, ZZ] = -1.0
        rows.append(blk)
        rhs.append(np.zeros(n))
        blk = np.zeros((n, nv))
        blk[:, W : W + n] = eye
        blk[:, U : U + n] = -np.diag(M)
        rows.append(blk)
        rhs.append(np.zeros(n))
        if "cardinality" not in drop:
            card = np.zeros((1, nv))
            card[0, U : U + n] = 1.0
            rows.append(card)
            rhs.append([float(self.n_star)])

        eq_rows, eq_rhs = [], []
        free = self.free
        for group, coef, target in (
            ("beta", self.beta, self.beta_target),
            ("alpha", self.alpha, self.alpha_target),
        ):
            if group in drop:
                continue
            row = np.zeros(nv)
            row[W : W + n] = np.where(free, coef, 0.0)
            if self.equality_tolerance > 0:
                rows.append(np.vstack([row, -row]))
                rhs.append([target + self.equality_tolerance, -target + self.equality_tolerance])
            else:
                eq_rows.append(row)
                eq_rhs.append(target)
        row = np.zeros(nv)
        row[W : W + n] = 1.0
        eq_rows.append(row)
        eq_rhs.append(1.0)

        c = np.zeros(nv)
        c[Zs : Zs + n] = 1.0 / n
        c[ZZ] = 1.0
        wl, wu = self.weight_bounds(drop)
        lb = np.concatenate([wl, np.zeros(n), np.zeros(n), [0.0]])
        ub = np.concatenate([wu, np.ones(n), np.full(n, np.inf), [np.inf]])
        ub[U : U + n][wu == 0] = 0.0
        if "exclusions" not in drop:
            held = self.fixed & self.listed & (self.prior > 0)
            lb[U : U + n][held] = 1.0
        return (
            c,
            np.vstack(rows),
            np.concatenate([np.asarray(r, dtype=float) for r in rhs]),
            np.vstack(eq_rows),
            np.asarray(eq_rhs, dtype=float),
            lb,
            ub,
        )

    def objective(self, w) -> float:
        d = np.abs(np.asarray(w, dtype=float) - self.prior)
        return float(d.mean() + d.max())

    def to_dict(self) -> dict:
        return {
            "instruments": list(self.instruments),
            "alpha": [None if math.isnan(v) else v for v in self.alpha.tolist()],
            "beta": [None if math.isnan(v) else v for v in self.beta.tolist()],
            "prior": self.prior.tolist(),
            "listed": self.listed.tolist(),
            "fixed": self.fixed.tolist(),
            "caps": self.caps.tolist(),
            "n_star": self.n_star,
            "alpha_target": self.alpha_target,
            "beta_target": self.beta_target,
            "equality_tolerance": self.equality_tolerance,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MilpProblem":
        d = dict(d)
        for key in ("alpha", "beta"):
            d[key] = [np.nan if v is None else v for v in d[key]]
        return cls(**d)


def build_problem(
    predictions: Mapping,
    prior_weights: Mapping[str, float],
    universe,
    n_star: int,
    exclusions=(),
    caps: Mapping[str, float] | None = None,
    equality_tolerance: float = 0.0,
) -> MilpProblem:
    """Assemble the problem for one rebalancing date.

    Parameters
    ----------
    predictions : mapping
        Instrument to ``FactorEstimate`` or ``(alpha, beta)``.
    prior_weights : mapping
        Index weights at ``t_n - 1``; the keys are ``S_{t_n-1}``.
    universe : iterable of str
        ``S_{t_n}``.
    exclusions : iterable of str
        ``S*``: held at their prior weight and left out of the alpha and beta rows.
    caps : mapping, optional
        Per-instrument ``w^max``; a cap of 0 excludes an instrument outright.

    Notes
    -----
    Instruments that left the index at ``t_n`` are held at zero. Their prior
    weight is then missing from the free side, so the targets are scaled by
    the ratio of free mass to the prior mass of the listed free instruments.
    Without departures this ratio is exactly one and no scaling is applied.
    """
    listed_set = list(dict.fromkeys(universe))
    prior_set = [k for k in prior_weights if k not in set(listed_set)]
    instruments = tuple(listed_set + sorted(prior_set))
    n = len(instruments)
    listed = np.array([k in set(listed_set) for k in instruments])
    prior = np.array([float(prior_weights.get(k, 0.0)) for k in instruments])
    excl = set(exclusions)
    unknown = excl - set(instruments)
    if unknown:
        raise ModelingError(f"excluded instrument(s) not in S: {sorted(unknown)}")
    fixed = np.array([k in excl for k in instruments])
    capv = np.ones(n)
    for k, v in (caps or {}).items():
        if k in instruments:
            capv[instruments.index(k)] = float(v)
    alpha = np.full(n, np.nan)
    beta = np.full(n, np.nan)
    for j, k in enumerate(instruments):
        if not listed[j] or fixed[j]:
            if k in predictions:
                alpha[j], beta[j] = _coefficients(predictions[k])
            continue
        if k not in predictions:
            raise ModelingError(f"no prediction for non-excluded instrument {k!r}")
        alpha[j], beta[j] = _coefficients(predictions[k])
        if not (np.isfinite(alpha[j]) and np.isfinite(beta[j])):
            raise ModelingError(f"non-finite prediction for {k!r}")
    free = listed & ~fixed
    beta_target = float(np.sum(prior[free] * beta[free]))
    alpha_target = float(np.sum(prior[free] * alpha[free]))
    if (~listed & (prior > 0)).any():
        free_mass = 1.0 - float(np.sum(prior[fixed & listed]))
        listed_mass = float(np.sum(prior[free]))
        if listed_mass <= 0:
            raise ModelingError("no prior weight on the free instruments")
        scale = free_mass / listed_mass
        beta_target *= scale
        alpha_target *= scale
    return MilpProblem(
        instruments, alpha, beta, prior, listed, fixed, capv, n_star,
        alpha_target, beta_target, equality_tolerance,
    )


# --------------------------------------------------------------------------
# Solution


@dataclass
class MilpSolution:
    instruments: tuple
    weights: np.ndarray
    included: np.ndarray
    objective: float
    status: str  # optimal | gap | node_limit | time_limit | full_replication
    nodes: int = 0
    lp_iterations: int = 0
    gap: float = 0.0
    bound: float = 0.0
    deviations: np.ndarray | None = None  # z from the LP that produced the weights
    max_deviation: float | None = None  # Z from the same LP

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.instruments, self.weights.tolist()))

    def to_dict(self) -> dict:
        return {
            "instruments": list(self.instruments),
            "weights": self.weights.tolist(),
            "included": self.included.tolist(),
            "objective": self.objective,
            "status": self.status,
            "nodes": self.nodes,
            "lp_iterations": self.lp_iterations,
            "gap": self.gap,
            "bound": self.bound,
            "deviations": None if self.deviations is None else self.deviations.tolist(),
            "max_deviation": self.max_deviation,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MilpSolution":
        d = dict(d)
        d["instruments"] = tuple(d["instruments"])
        d["weights"] = np.asarray(d["weights"], dtype=float)
        d["included"] = np.asarray(d["included"], dtype=bool)
        if d.get("deviations") is not None:
            d["deviations"] = np.asarray(d["deviations"], dtype=float)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def full_replication(prior_weights: Mapping[str, float], instruments=None) -> MilpSolution:
    """The lagged full-replication portfolio: ``w = w^m_{t_n-1}`` verbatim.

    Instruments in ``instruments`` but absent from ``prior_weights`` (new
    constituents) get weight 0.
    """
    names = tuple(instruments) if instruments is not None else tuple(prior_weights)
    w = np.array([float(prior_weights.get(k, 0.0)) for k in names])
    return MilpSolution(names, w, w > SUPPORT_TOL, 0.0, "full_replication")


def check_solution(problem: MilpProblem, solution: MilpSolution, tol: float = 1e-8) -> list[str]:
    """Violated invariants of ``solution`` (empty when it is valid)."""
    w = solution.weights
    out = []
    if abs(w.sum() - 1.0) > 1e-9:
        out.append(f"weights sum to {w.sum()!r}")
    if (w < 0).any():
        out.append("negative weight")
    support = int(np.sum(w > SUPPORT_TOL))
    if support > problem.n_star:
        out.append(f"{support} holdings exceed N*={problem.n_star}")
    free = problem.free
    band = max(tol, problem.equality_tolerance + tol)
    net_b = float(w[free] @ problem.beta[free])
    net_a = float(w[free] @ problem.alpha[free])
    if abs(net_b - problem.beta_target) > band:
        out.append(f"net beta {net_b!r} != {problem.beta_target!r}")
    if abs(net_a - problem.alpha_target) > band:
        out.append(f"net alpha {net_a!r} != {problem.alpha_target!r}")
    pinned = problem.fixed & problem.listed
    if not np.array_equal(w[pinned], problem.prior[pinned]):
        out.append("excluded instrument moved off its prior weight")
    if (w[~problem.listed] != 0).any():
        out.append("weight on an instrument outside S_{t_n}")
    if (w > problem.caps + 1e-12).any():
        out.append("weight above cap")
    if solution.deviations is not None:
        z = solution.deviations
        if np.max(np.abs(z - np.abs(w - problem.prior)), initial=0.0) > 1e-9:
            out.append("z_i differs from |w_i - w^m_i|")
        if abs(solution.max_deviation - np.max(z, initial=0.0)) > 1e-9:
            out.append("Z differs from max z_i")
    return out


# --------------------------------------------------------------------------
# Branch and bound


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    u_lo: np.ndarray = field(compare=False)  # u forced to 1
    u_hi: np.ndarray = field(compare=False)  # u forced to 0
    basis: object = field(compare=False, default=None)
    depth: int = field(compare=False, default=0)


class _Relaxation:
    """Compact LP relaxation solved at each node.

    Each weight is written ``w_i = w^m_i + p_i - q_i`` with ``p, q >= 0``, so
    ``z_i = p_i + q_i`` and the two deviation rows become bounds. The
    inclusion variables are projected out: at any relaxed optimum
    ``u_i = w_i / M_i`` suffices, which leaves the single knapsack row
    ``sum_{i not fixed to 1} w_i / M_i <= N* - #(u fixed to 1)``. The LP value
    equals that of the full relaxation over ``[w, u, z, Z]`` for every node,
    with ``n + 4`` rows instead of ``4n + 4``.

    Variable layout: ``[p_0 .. p_{n-1} | q_0 .. q_{n-1} | Z]``.
    """

    def __init__(self, problem: MilpProblem, drop):
        p = problem
        n = p.n
        self.p, self.drop, self.n = p, drop, n
        self.wm = p.prior.astype(float)
        self.w_lb, self.w_ub = p.weight_bounds(drop)
        nv = 2 * n + 1
        P, Q, ZZ = slice(0, n), slice(n, 2 * n), 2 * n
        rows = np.zeros((n, nv))
        rows[:, P] = np.eye(n)
        rows[:, Q] = np.eye(n)
        rows[:, ZZ] = -1.0
        ub_rows, ub_rhs = [rows], [np.zeros(n)]
        eq_rows, eq_rhs = [], []
        free = p.free
        for group, coef, target in (("beta", p.beta, p.beta_target), ("alpha", p.alpha, p.alpha_target)):
            if group in drop:
                continue
            k = np.where(free, coef, 0.0)
            row = np.zeros(nv)
            row[P], row[Q] = k, -k
            shifted = target - float(k @ self.wm)
            if p.equality_tolerance > 0:
                ub_rows.append(np.vstack([row, -row]))
                ub_rhs.append(np.array([shifted + p.equality_tolerance, -shifted + p.equality_tolerance]))
            else:
                eq_rows.append(row)
                eq_rhs.append(shifted)
        row = np.zeros(nv)
        row[P], row[Q] = 1.0, -1.0
        eq_rows.append(row)
        eq_rhs.append(1.0 - float(self.wm.sum()))
        self.cardinality = "cardinality" not in drop
        if self.cardinality:
            ub_rows.append(np.zeros((1, nv)))
            ub_rhs.append(np.zeros(1))
        self.A_ub = np.vstack(ub_rows)
        self.b_ub = np.concatenate(ub_rhs)
        self.A_eq = np.vstack(eq_rows)
        self.b_eq = np.asarray(eq_rhs, dtype=float)
        self.c = np.concatenate([np.full(2 * n, 1.0 / n), [1.0]])
        held = p.fixed & p.listed & (p.prior > 0)
        self.held = held if "exclusions" not in drop else np.zeros(n, bool)

    def weights(self, x) -> np.ndarray:
        n = self.n
        w = self.wm + x[:n] - x[n : 2 * n]
        return np.maximum(w, 0.0)

    def solve(self, u_lo, u_hi, big_m, upper, basis=None) -> LPResult:
        n = self.n
        w_lb, w_ub = self.w_lb.copy(), self.w_ub.copy()
        w_ub[u_hi] = 0.0
        w_lb[u_hi] = 0.0
        M = np.ones(n) if big_m is None else big_m
        w_ub = np.minimum(w_ub, M)
        if (w_lb > w_ub).any():
            return LPResult("infeasible", None, math.inf, 0)
        wm = self.wm
        lb = np.concatenate([np.maximum(w_lb - wm, 0.0), np.maximum(wm - w_ub, 0.0), [0.0]])
        ub = np.concatenate([np.maximum(w_ub - wm, 0.0), np.maximum(wm - w_lb, 0.0), [np.inf]])
        if math.isfinite(upper):
            ub = np.minimum(ub, upper)
            if (lb > ub).any():
                return LPResult("infeasible", None, math.inf, 0)
        A_ub, b_ub = self.A_ub, self.b_ub
        if self.cardinality:
            ones = u_lo | self.held
            coef = np.where(ones | (w_ub <= 0), 0.0, 1.0 / M)
            A_ub = A_ub.copy()
            b_ub = b_ub.copy()
            A_ub[-1, :n], A_ub[-1, n : 2 * n] = coef, -coef
            b_ub[-1] = self.p.n_star - int(ones.sum()) - float(coef @ wm)
        return solve_lp(self.c, A_ub, b_ub, self.A_eq, self.b_eq, lb, ub, basis=basis)


class _Search:
    def __init__(self, problem, drop, tighten, node_limit, deadline):
        self.p = problem
        self.drop = drop
        self.tighten = tighten and "cardinality" not in drop
        self.node_limit = node_limit
        self.deadline = deadline
        self.n = problem.n
        self.big_m = None
        self.relax = _Relaxation(problem, drop)
        self.iterations = 0
        self.nodes = 0
        self.incumbent = None
        self.upper = math.inf

    def lp_solve(self, u_lo, u_hi, basis=None) -> LPResult:
        res = self.relax.solve(u_lo, u_hi, self.big_m, self.upper, basis)
        self.iterations += res.iterations
        return res

    def _accept(self, x):
        """Record ``x`` as incumbent if its support meets the cardinality cap."""
        w = self.relax.weights(x)
        support = w > SUPPORT_TOL
        if "cardinality" not in self.drop and support.sum() > self.p.n_star:
            return False
        w[~support] = 0.0  # round-off of w^m + p - q
        pinned = self.p.fixed & self.p.listed
        if "exclusions" not in self.drop:
            w[pinned] = self.p.prior[pinned]
        obj = self.p.objective(w)
        if obj < self.upper:
            self.upper = obj
            self.incumbent = w
            n = self.n
            self.incumbent_z = (x[:n] + x[n : 2 * n], float(x[2 * n]))
            if self.tighten:
                self._retighten()
        return True

    def _retighten(self):
        # any strictly better portfolio has max |w_i - w^m_i| <= Z < upper
        _, ub = self.p.weight_bounds(self.drop)
        m = np.minimum(ub, self.p.prior + self.upper)
        m = np.maximum(m, 1e-12)
        if self.big_m is not None and np.all(m >= self.big_m):
            return
        self.big_m = m

    def seed(self, root_x):
        """Keep the N* largest LP weights, zero the rest and re-solve."""
        p = self.p
        w = self.relax.weights(root_x)
        must = p.fixed & p.listed & (p.prior > 0)
        room = p.n_star - int(must.sum())
        order = np.argsort(-np.where(must, -np.inf, w), kind="stable")
        cand = [j for j in order if not must[j] and w[j] > SUPPORT_TOL][:room]
        keep = must.copy()
        keep[cand] = True
        res = self.lp_solve(np.zeros(self.n, bool), ~keep)
        if res.success:
            self._accept(res.x)

    def _branch_var(self, x, u_lo, u_hi):
        M = np.ones(self.n) if self.big_m is None else self.big_m
        u = np.minimum(self.relax.weights(x) / M, 1.0)
        frac = np.minimum(u, 1.0 - u)
        frac[u_lo | u_hi] = -1.0
        frac[frac <= INTEGRALITY_TOL] = -1.0
        j = int(np.argmax(frac))
        return j if frac[j] > 0 else None

    def run(self):
        n = self.n
        lo = np.zeros(n, bool)
        hi = np.zeros(n, bool)
        root = self.lp_solve(lo, hi)
        self.nodes = 1
        if root.status != "optimal":
            return root.status
        if not self._accept(root.x) and "cardinality" not in self.drop:
            self.seed(root.x)
            if self.incumbent is not None:
                root = self.lp_solve(lo, hi, basis=root.basis)
                if root.status != "optimal":
                    root = None
        heap = []
        counter = itertools.count()
        best_bound = self.upper
        if root is not None and root.status == "optimal" and root.fun < self.upper:
            heapq.heappush(heap, _Node(root.fun, next(counter), lo, hi, root.basis))
            self._pending_x = {0: root.x}
        else:
            self._pending_x = {}
        status = "optimal"
        while heap:
            node = heapq.heappop(heap)
            best_bound = node.bound
            if node.bound >= self.upper - self.gap_abs():
                best_bound = self.upper
                heap.clear()
                break
            if self.nodes >= self.node_limit:
                heapq.heappush(heap, node)
                status = "node_limit"
                break
            if self.deadline is not None and time.monotonic() > self.deadline:
                heapq.heappush(heap, node)
                status = "time_limit"
                break
            x = self._pending_x.pop(node.seq, None)
            if x is None:
                res = self.lp_solve(node.u_lo, node.u_hi, node.basis)
                self.nodes += 1
                if res.status != "optimal" or res.fun >= self.upper - self.gap_abs():
                    continue
                x, basis, bound = res.x, res.basis, res.fun
            else:
                basis, bound = node.basis, node.bound
            if self._accept(x):
                continue
            j = self._branch_var(x, node.u_lo, node.u_hi)
            if j is None:
                continue
            for fix_one in (True, False):
                u_lo = node.u_lo.copy()
                u_hi = node.u_hi.copy()
                (u_lo if fix_one else u_hi)[j] = True
                heapq.heappush(heap, _Node(bound, next(counter), u_lo, u_hi, basis, node.depth + 1))
        else:
            best_bound = self.upper
        if heap:
            best_bound = min(best_bound, min(nd.bound for nd in heap))
        self.best_bound = min(best_bound, self.upper)
        return status

    def gap_abs(self):
        return self.gap_tolerance * max(abs(self.upper), 1e-12) + 1e-12


def _search(problem, drop=(), tighten=True, node_limit=100_000, deadline=None, gap_tolerance=0.0):
    s = _Search(problem, frozenset(drop), tighten, node_limit, deadline)
    s.gap_tolerance = gap_tolerance
    status = s.run()
    return s, status


def diagnose_infeasibility(problem: MilpProblem, node_limit: int = 2000) -> tuple[str, ...]:
    """Smallest pair of constraint groups that cannot hold together.

    Every other group is dropped; a pair is reported when it is infeasible on
    its own while each member alone is feasible. Weights stay nonnegative and
    sum to one throughout. Returns an empty tuple when no pair is found.
    """
    groups = list(CONSTRAINT_GROUPS)
    if problem.equality_tolerance > 0:
        groups = [g for g in groups if g not in ("alpha", "beta")]

    def feasible(keep):
        drop = [g for g in CONSTRAINT_GROUPS if g not in keep]
        s, status = _search(problem, drop, tighten=False, node_limit=node_limit)
        if s.incumbent is not None:
            return True
        return None if status in ("node_limit", "time_limit") else False

    single = {g: feasible({g}) for g in groups}
    for a, b in itertools.combinations(groups, 2):
        if single[a] is False or single[b] is False:
            continue
        if feasible({a, b}) is False:
            return (a, b)
    lone = [g for g in groups if single[g] is False]
    return (lone[0],) if lone else ()


def solve(
    problem: MilpProblem,
    time_limit: float | None = None,
    gap_tolerance: float = 0.0,
    node_limit: int = 100_000,
    tighten: bool = True,
) -> MilpSolution:
    """Solve the problem by LP-based branch and bound over the inclusion binaries.

    Parameters
    ----------
    time_limit : float, optional
        Wall-clock seconds. Hitting it returns the incumbent with
        ``status="time_limit"``; without an incumbent it raises
        ``SolverTimeoutError``.
    gap_tolerance : float
        Relative optimality gap at which search stops.
    node_limit : int
        Deterministic alternative to the time limit, with the same semantics.
    tighten : bool
        Once an incumbent of value ``UB`` exists, replace ``w_i <= u_i`` by
        ``w_i <= min(w^max_i, w^m_i + UB) u_i``. This cuts off no portfolio
        that improves on ``UB``.

    Raises
    ------
    InfeasibleProblemError
        With ``constraints`` naming the conflicting pair of groups.
    SolverTimeoutError
    """
    deadline = None if time_limit is None else time.monotonic() + time_limit
    s, status = _search(problem, (), tighten, node_limit, deadline, gap_tolerance)
    if s.incumbent is None:
        if status in ("node_limit", "time_limit"):
            raise SolverTimeoutError(f"{status} reached after {s.nodes} nodes without a feasible portfolio")
        if status == "unbounded":  # cannot happen with bounded weights
            raise ModelingError("LP relaxation is unbounded")
        pair = diagnose_infeasibility(problem)
        raise InfeasibleProblemError(
            "no portfolio satisfies " + (" and ".join(pair) if pair else "the constraints"),
            constraints=pair,
        )
    w = s.incumbent
    bound = float(s.best_bound)
    gap = max(0.0, (s.upper - bound) / max(s.upper, 1e-12)) if s.upper > 0 else 0.0
    if status == "optimal" and gap > 1e-9:
        status = "gap"
    return MilpSolution(
        problem.instruments,
        w,
        w > SUPPORT_TOL,
        s.upper,
        status,
        nodes=s.nodes,
        lp_iterations=s.iterations,
        gap=gap,
        bound=bound,
        deviations=s.incumbent_z[0],
        max_deviation=s.incumbent_z[1],
    )
