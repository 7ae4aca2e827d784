"""Acceptance suite: one PASS/FAIL line per criterion, printed at the stated tolerances.

Criteria 6 to 8 share one full-size synthetic backtest (200 instruments,
2,400 days, 24 episodes); criterion 8 repeats it through the CLI.
"""

import json
import time
import warnings

import numpy as np
import pytest

from indextrack.backtest import BacktestConfig, MarketState, run_backtest, run_episode
from indextrack.cli import main
from indextrack.factor_targets import theil_sen
from indextrack.features import FeatureGridSpec, fit_cdf
from indextrack.market_data import write_panels
from indextrack.milp import build_problem, check_solution, solve
from indextrack.predictor import SensitivityNetwork, gradient_check
from indextrack.synthetic import SynthConfig, generate

from backtest_helpers import artifact_arrays, poison, tiny_config
from oracles import support_enumeration, theil_sen_bruteforce


# The paper's optimizer (lr 1e-2, momentum 0.1) underfits at the subsampled
# record density that fits the time budget; see the decisions ledger.
ACCEPTANCE_TRAIN = {"initial_lr": 0.1, "momentum": 0.9}


def _line(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")


def test_criterion_1_theil_sen_oracle(capsys):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_a, slope_mismatch = 0.0, 0
    for _ in range(1000):
        x = rng.normal(size=5)
        y = 0.3 + 1.2 * x + rng.normal(0, 0.5, 5)
        a, b = theil_sen(x, y)
        ra, rb = theil_sen_bruteforce(x.tolist(), y.tolist())
        slope_mismatch += b != rb
        worst_a = max(worst_a, abs(a - ra))
    elapsed = time.perf_counter() - start
    ok = slope_mismatch == 0 and worst_a <= 1e-12 and elapsed < 1.0
    _line(capsys, 1, ok, f"slope mismatches {slope_mismatch}/1000, max intercept diff {worst_a:.1e}, "
                         f"{elapsed:.2f}s")
    assert ok


def test_criterion_2_cdf_roundtrip_uniformity(capsys):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst_rt, worst_unif_excess = 0.0, -np.inf
    for _ in range(100):
        n = int(rng.integers(10, 5001))
        x = rng.standard_normal(n)
        cdf = fit_cdf(x)
        probe = np.concatenate([x, rng.uniform(x.min(), x.max(), 200)])
        worst_rt = max(worst_rt, float(np.max(np.abs(cdf.inverse(cdf(probe)) - probe))))
        u = np.sort(cdf(x))
        dev = np.max(np.abs(u - np.arange(1, n + 1) / (n + 1)))
        worst_unif_excess = max(worst_unif_excess, dev - 2 / (n + 1))
    elapsed = time.perf_counter() - start
    ok = worst_rt <= 1e-12 and worst_unif_excess <= 0 and elapsed < 1.0
    _line(capsys, 2, ok, f"max roundtrip error {worst_rt:.1e}, max uniformity excess over 2/(n+1) "
                         f"{worst_unif_excess:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_3_gradient_check(capsys):
    grid = FeatureGridSpec(tau_offsets=(1, 2, 3, 4, 5), window_lengths=(2, 3, 4, 5))
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    net = SensitivityNetwork(grid.n_features, width=8, n_layers=2, head_width=8, dropout=0.0,
                             rng=np.random.default_rng(3))
    err = gradient_check(net, rng.random((4, grid.n_features)), rng.random((4, 3)), l2=1e-4)
    elapsed = time.perf_counter() - start
    ok = err <= 1e-4 and elapsed < 5.0
    _line(capsys, 3, ok, f"max relative gradient error {err:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_4_milp_exactness(capsys):
    rng = np.random.default_rng(404)
    names = [f"I{k}" for k in range(10)]
    solver_time = 0.0
    start = time.perf_counter()
    worst = {"objective": 0.0, "sum": 0.0, "beta": 0.0, "alpha": 0.0, "binding": 0.0}
    over_cap = 0
    for k in range(50):
        n_star = (3, 4, 5)[k % 3]
        prior = dict(zip(names, rng.dirichlet(np.full(10, 0.8))))
        preds = {i: (rng.normal(0, 0.02), rng.uniform(0.5, 1.5)) for i in names}
        p = build_problem(preds, prior, names, n_star)
        t0 = time.perf_counter()
        sol = solve(p)
        solver_time += time.perf_counter() - t0
        best, _ = support_enumeration(p)
        w = sol.weights
        z = sol.deviations
        worst["objective"] = max(worst["objective"], abs(sol.objective - best))
        worst["sum"] = max(worst["sum"], abs(w.sum() - 1.0))
        worst["beta"] = max(worst["beta"], abs(w @ p.beta - p.beta_target))
        worst["alpha"] = max(worst["alpha"], abs(w @ p.alpha - p.alpha_target))
        bind = max(np.max(np.abs(z - np.abs(w - p.prior))), abs(sol.max_deviation - z.max()))
        worst["binding"] = max(worst["binding"], bind)
        over_cap += int((w > 1e-9).sum() > n_star)
        assert check_solution(p, sol) == []
    elapsed = time.perf_counter() - start
    ok = (worst["objective"] <= 1e-8 and worst["sum"] <= 1e-9 and worst["beta"] <= 1e-8
          and worst["alpha"] <= 1e-8 and worst["binding"] <= 1e-9 and over_cap == 0 and solver_time < 30)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    _line(capsys, 4, ok, f"max diffs: {detail}; cardinality violations {over_cap}; "
                         f"branch-and-bound {solver_time:.1f}s, with enumeration oracle {elapsed:.1f}s")
    assert ok


def test_criterion_5_poisoning(capsys, small_market):
    panels, _ = small_market
    cfg = tiny_config()
    start = time.perf_counter()
    changed = []
    for t_n in cfg.rebalance_steps():
        clean = artifact_arrays(run_episode(MarketState(panels, cfg), cfg, t_n))
        dirty = artifact_arrays(run_episode(MarketState(poison(panels, t_n), cfg), cfg, t_n))
        changed += [f"{t_n}:{k}" for k in clean if clean[k].tobytes() != dirty.get(k, np.array([])).tobytes()]
        changed += [f"{t_n}:{k}" for k in dirty if k not in clean]
    elapsed = time.perf_counter() - start
    ok = not changed and elapsed < 120
    _line(capsys, 5, ok, f"{cfg.n_episodes} episodes poisoned, {len(changed)} artifacts changed "
                         f"{changed[:3]}, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    panels, _ = generate(SynthConfig())
    cfg = BacktestConfig(train=ACCEPTANCE_TRAIN)
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = run_backtest(panels, cfg)
    elapsed = time.perf_counter() - start
    root = tmp_path_factory.mktemp("acceptance")
    report.write(root / "run_a")
    return panels, cfg, report, elapsed, root


@pytest.mark.slow
def test_criterion_6_prediction_gap(capsys, full_run):
    _, cfg, report, elapsed, _ = full_run
    pe = report.summary["pe"]
    best_name, best = report.best_historical()
    ratio = pe["dl"] / best
    ok = len(report.episodes) >= 24 and ratio <= 0.9 and elapsed < 20 * 60
    hist = ", ".join(f"{k} {v:.3e}" for k, v in pe.items() if k.startswith("hist_"))
    _line(capsys, 6, ok, f"DL PE {pe['dl']:.3e}, best historical {best_name} {best:.3e}, ratio {ratio:.3f} "
                         f"(bar 0.9); {hist}; {len(report.episodes)} episodes in {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_7_tracking(capsys, full_run):
    _, cfg, report, _, _ = full_run
    te = report.summary["te"]
    t30, t100, full = te["milp_30"]["te"], te["milp_100"]["te"], te["full_lagged"]["te"]
    ok = t100 <= 1.5 * full and t30 > t100
    fails = {k: v["n_episodes"] for k, v in te.items()}
    _line(capsys, 7, ok, f"TE N*=30 {t30:.3e}, N*=100 {t100:.3e}, lagged full {full:.3e}, "
                         f"N*=100 / full {t100 / full:.3f} (bar 1.5); episodes per strategy {fails}")
    assert ok


@pytest.mark.slow
def test_criterion_8_determinism(capsys, full_run):
    panels, cfg, report, elapsed_a, root = full_run
    prices, weights = write_panels(root / "data", panels)
    config = {k: v for k, v in cfg.to_dict().items()
              if k not in ("T_A", "T_C", "T_D", "T_E", "t_0", "n_episodes")}
    config["schedule"] = {k: getattr(cfg, k) for k in ("T_A", "T_C", "T_D", "T_E", "t_0", "n_episodes")}
    config.update(prices=str(prices), weights=str(weights), index_id="INDEX")
    path = root / "run.json"
    path.write_text(json.dumps(config))
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        code = main(["backtest", "--config", str(path), "--out", str(root / "run_b"), "--quiet"])
    elapsed_b = time.perf_counter() - start
    a = (root / "run_a" / "report.json").read_bytes()
    b = (root / "run_b" / "report.json").read_bytes() if code == 0 else b""
    ok = code == 0 and a == b and elapsed_b < 20 * 60
    _line(capsys, 8, ok, f"report.json identical: {a == b} ({len(a)} bytes); second run through the CLI "
                         f"{elapsed_b / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_9_zero_lag_identity(capsys, full_run):
    _, _, report, _, _ = full_run
    te = report.summary["te"]["full_zero_lag"]["te"]
    diffs = [abs(ep["portfolio_returns"]["full_zero_lag"] - ep["index_return"]) for ep in report.episodes]
    ok = te <= 1e-14
    _line(capsys, 9, ok, f"zero-lag full-replication TE {te:.1e} (max period difference {max(diffs):.1e}) "
                         f"over {len(diffs)} episodes")
    assert ok
