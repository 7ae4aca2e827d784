import json

import numpy as np
import pytest

from indextrack.exceptions import InfeasibleProblemError, ModelingError, SolverTimeoutError
from indextrack.milp import (
    MilpProblem,
    MilpSolution,
    build_problem,
    check_solution,
    diagnose_infeasibility,
    full_replication,
    solve,
)

from oracles import support_enumeration


def _random_problem(seed, n=10, n_star=4):
    rng = np.random.default_rng(seed)
    names = [f"I{k}" for k in range(n)]
    prior = dict(zip(names, rng.dirichlet(np.full(n, 0.8))))
    preds = {k: (rng.normal(0, 0.02), rng.uniform(0.5, 1.5)) for k in names}
    return build_problem(preds, prior, names, n_star)


def _binding_ok(problem, sol):
    c, A_ub, b_ub, A_eq, b_eq, lb, ub = problem.to_lp()
    d = np.abs(sol.weights - problem.prior)
    return sol.objective == pytest.approx(d.mean() + d.max(), abs=1e-12)


def test_counts_and_hand_written_matrix():
    names = ["A", "B", "C", "D", "E"]
    prior = {"A": 0.4, "B": 0.3, "C": 0.2, "D": 0.1}
    preds = {"A": (0.01, 1.1), "B": (0.02, 0.9), "C": (-0.01, 1.2), "D": (0.0, 0.8), "E": (0.03, 1.0)}
    p = build_problem(preds, prior, names, 3, exclusions=["D"])
    c, A_ub, b_ub, A_eq, b_eq, lb, ub = p.to_lp()
    n = 5
    assert c.size == 3 * n + 1
    I, Z0 = np.eye(n), np.zeros((n, n))
    one = np.ones((n, 1))
    zc = np.zeros((n, 1))
    expected_ub = np.vstack([
        np.hstack([I, Z0, -I, zc]),
        np.hstack([-I, Z0, -I, zc]),
        np.hstack([Z0, Z0, I, -one]),
        np.hstack([I, -I, Z0, zc]),
        np.hstack([np.zeros((1, n)), np.ones((1, n)), np.zeros((1, n)), [[0.0]]]),
    ])
    np.testing.assert_array_equal(A_ub, expected_ub)
    w_m = np.array([0.4, 0.3, 0.2, 0.1, 0.0])
    np.testing.assert_array_equal(b_ub, np.r_[w_m, -w_m, np.zeros(n), np.zeros(n), 3.0])
    beta_row = np.r_[1.1, 0.9, 1.2, 0.0, 1.0, np.zeros(2 * n + 1)]
    alpha_row = np.r_[0.01, 0.02, -0.01, 0.0, 0.03, np.zeros(2 * n + 1)]
    sum_row = np.r_[np.ones(n), np.zeros(2 * n + 1)]
    np.testing.assert_array_equal(A_eq, np.vstack([beta_row, alpha_row, sum_row]))
    assert b_eq[0] == pytest.approx(0.4 * 1.1 + 0.3 * 0.9 + 0.2 * 1.2, abs=1e-15)
    assert b_eq[1] == pytest.approx(0.4 * 0.01 + 0.3 * 0.02 - 0.2 * 0.01, abs=1e-15)
    np.testing.assert_array_equal(c, np.r_[np.zeros(2 * n), np.full(n, 0.2), 1.0])
    assert lb[3] == ub[3] == 0.1 and lb[n + 3] == 1.0


def test_departed_instrument_held_at_zero():
    names = ["A", "B", "C"]
    prior = {"A": 0.5, "B": 0.3, "X": 0.2}
    preds = {k: (0.0, 1.0) for k in names}
    p = build_problem(preds, prior, names, 3)
    assert p.instruments == ("A", "B", "C", "X")
    _, _, _, _, _, lb, ub = p.to_lp()
    assert ub[3] == 0.0
    sol = solve(p)
    assert sol.weights[3] == 0.0
    # X still counts in the deviation objective
    assert sol.objective >= 0.2
    assert check_solution(p, sol) == []


def test_missing_prediction_is_modeling_error():
    with pytest.raises(ModelingError, match="'B'"):
        build_problem({"A": (0.0, 1.0)}, {"A": 0.5, "B": 0.5}, ["A", "B"], 2)


def test_full_cardinality_returns_prior():
    names = [f"I{k}" for k in range(6)]
    w = np.array([0.3, 0.2, 0.2, 0.1, 0.1, 0.1])
    preds = {k: (0.01 * j, 0.8 + 0.1 * j) for j, k in enumerate(names)}
    p = build_problem(preds, dict(zip(names, w)), names, 6)
    sol = solve(p)
    np.testing.assert_allclose(sol.weights, w, atol=1e-12)
    assert sol.objective == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(12))
def test_matches_support_enumeration(seed):
    p = _random_problem(seed, n=10, n_star=3 + seed % 3)
    sol = solve(p)
    best, _ = support_enumeration(p)
    assert sol.objective == pytest.approx(best, abs=1e-8)
    assert check_solution(p, sol) == []
    assert _binding_ok(p, sol)


def test_with_exclusions_matches_enumeration():
    rng = np.random.default_rng(99)
    names = [f"I{k}" for k in range(9)]
    prior = dict(zip(names, rng.dirichlet(np.ones(9))))
    preds = {k: (rng.normal(0, 0.02), rng.uniform(0.5, 1.5)) for k in names[:-1]}
    p = build_problem(preds, prior, names, 4, exclusions=[names[-1]])
    sol = solve(p)
    best, _ = support_enumeration(p)
    assert sol.objective == pytest.approx(best, abs=1e-8)
    assert sol.weights[-1] == p.prior[-1]


def test_permutation_invariance():
    p = _random_problem(5, n=9, n_star=4)
    base = solve(p)
    order = np.random.default_rng(1).permutation(p.n)
    names = [p.instruments[k] for k in order]
    q = build_problem({k: (p.alpha[j], p.beta[j]) for j, k in enumerate(p.instruments)},
                      dict(zip(p.instruments, p.prior)), names, 4)
    assert solve(q).objective == pytest.approx(base.objective, abs=1e-10)


def test_net_beta_cancels_market_coefficient():
    p = _random_problem(11, n=10, n_star=5)
    sol = solve(p)
    # coefficient of r_m in portfolio minus predicted index return
    coef = sol.weights @ np.nan_to_num(p.beta) - p.beta_target
    assert abs(coef) <= 1e-8


def test_infeasible_cardinality_and_alpha():
    # with one holding the alpha target 0.5 needs an instrument whose alpha is
    # exactly 0.5; none exists, while either group alone is satisfiable
    names = ["A", "B", "C"]
    prior = {"A": 0.5, "B": 0.5}
    preds = {"A": (0.0, 1.0), "B": (1.0, 1.0), "C": (2.0, 1.0)}
    p = build_problem(preds, prior, names, 1)
    assert np.isinf(support_enumeration(p)[0])
    assert np.isfinite(support_enumeration(build_problem(preds, prior, names, 2))[0])
    with pytest.raises(InfeasibleProblemError) as err:
        solve(p)
    assert set(err.value.constraints) == {"cardinality", "alpha"}
    assert diagnose_infeasibility(p) == err.value.constraints


def test_equality_band_option():
    p = _random_problem(3, n=8, n_star=3)
    p.equality_tolerance = 1e-3
    sol = solve(p)
    tight = solve(_random_problem(3, n=8, n_star=3))
    assert sol.objective <= tight.objective + 1e-12
    assert check_solution(p, sol) == []


def test_node_limit_returns_incumbent():
    p = _random_problem(4, n=12, n_star=3)
    sol = solve(p, node_limit=1)
    assert sol.status in ("node_limit", "optimal", "gap")
    assert check_solution(p, sol) == []
    assert sol.bound <= sol.objective + 1e-12


def test_node_limit_without_incumbent_times_out():
    names = ["A", "B", "C"]
    p = build_problem({"A": (0.0, 1.0), "B": (1.0, 1.0), "C": (2.0, 1.0)},
                      {"A": 0.5, "B": 0.5}, names, 1)
    with pytest.raises(SolverTimeoutError):
        solve(p, node_limit=0)


def test_degenerate_equal_betas():
    names = [f"I{k}" for k in range(6)]
    prior = dict(zip(names, [0.3, 0.2, 0.2, 0.1, 0.1, 0.1]))
    preds = {k: (0.01 * j, 1.0) for j, k in enumerate(names)}
    p = build_problem(preds, prior, names, 4)
    sol = solve(p)
    assert check_solution(p, sol) == []
    assert sol.objective == pytest.approx(support_enumeration(p)[0], abs=1e-8)


def test_full_replication_lag_semantics():
    sol = full_replication({"A": 0.6, "B": 0.4}, ["A", "B", "NEW"])
    assert sol.as_dict() == {"A": 0.6, "B": 0.4, "NEW": 0.0}
    assert sol.weights.sum() == 1.0


def test_json_roundtrip():
    p = _random_problem(8, n=6, n_star=3)
    q = MilpProblem.from_dict(json.loads(json.dumps(p.to_dict())))
    assert q.to_dict() == p.to_dict()
    sol = solve(p)
    again = MilpSolution.from_dict(json.loads(sol.to_json()))
    assert np.array_equal(again.weights, sol.weights)
    assert again.status == sol.status
