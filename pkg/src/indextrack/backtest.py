"""Walk-forward protocol: episodes, retraining, portfolio construction and evaluation.

Everything an episode fits or solves is produced by :func:`run_episode`,
which reads prices only up to ``t_n - 1``. Realized returns from ``t_n``
onward enter only through :func:`evaluate_episode`.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    EmptyBatchError,
    InfeasibleProblemError,
    LookAheadError,
    ScheduleError,
    SolverTimeoutError,
)
from .factor_targets import historical_sample, ols, theil_sen_targets
from .features import FeatureGridSpec, daily_returns, gather_tensors, rolling_statistics
from .market_data import Panels, horizon_returns
from .milp import MilpProblem, MilpSolution, build_problem, full_replication, solve
from .predictor import SensitivityPredictor, TrainConfig

ESTIMATOR_DL = "dl"


# --------------------------------------------------------------------------
# Schedule


@dataclass(frozen=True)
class EpisodeSchedule:
    """Block boundaries of one episode (all ranges inclusive)."""

    t_n: int
    T_A: int
    T_C: int
    T_D: int
    T_E: int

    @property
    def train(self) -> tuple[int, int]:
        return (self.t_n - self.T_E, self.t_n - self.T_D - 1)

    @property
    def validation(self) -> tuple[int, int]:
        return (self.t_n - self.T_D, self.t_n - self.T_A - self.T_C - 1)

    @property
    def idle(self) -> tuple[int, int]:
        return (self.t_n - self.T_A - self.T_C, self.t_n - 1)

    @property
    def test(self) -> int:
        return self.t_n

    def last_price_step(self, record_step: int) -> int:
        """Latest price a train or validation record at ``record_step`` depends on."""
        return record_step + self.T_A + self.T_C


def make_schedule(t_n: int, T_A: int = 21, T_C: int = 2, T_D: int = 300, T_E: int = 1260,
                  n_steps: int | None = None) -> EpisodeSchedule:
    if not T_E > T_D > T_A + T_C >= 1 or T_A < 1 or T_C < 0:
        raise ScheduleError(f"need T_E > T_D > T_A + T_C >= 1, got {T_E}, {T_D}, {T_A}, {T_C}")
    if t_n - T_E < 0:
        raise ScheduleError(f"train block of episode {t_n} starts before step 0")
    if n_steps is not None and t_n >= n_steps:
        raise ScheduleError(f"rebalance step {t_n} outside a calendar of {n_steps} steps")
    return EpisodeSchedule(t_n, T_A, T_C, T_D, T_E)


def tracking_error(portfolio_returns, index_returns) -> float:
    """Mean squared difference of aligned period returns."""
    a = np.asarray(portfolio_returns, dtype=float)
    b = np.asarray(index_returns, dtype=float)
    if a.shape != b.shape:
        raise ValueError("series are not aligned")
    if a.size == 0:
        raise EmptyBatchError("tracking error of an empty series")
    return float(np.mean((a - b) ** 2))


# --------------------------------------------------------------------------
# Configuration and precomputed market state


@dataclass
class BacktestConfig:
    T_A: int = 21
    T_C: int = 2
    T_D: int = 300
    T_E: int = 1260
    t_0: int = 1540
    n_episodes: int = 24
    n_stars: tuple[int, ...] = (30, 100)
    hist_windows: tuple[int, ...] = (504, 756, 1008, 1260)
    overlapping_hist: bool = False
    grid: FeatureGridSpec = field(default_factory=FeatureGridSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    record_stride: int = 5
    node_limit: int = 200
    gap_tolerance: float = 1e-6
    time_limit: float | None = None
    equality_tolerance: float = 0.0
    zero_lag_diagnostic: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = FeatureGridSpec(**self.grid)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.n_stars = tuple(int(v) for v in self.n_stars)
        self.hist_windows = tuple(int(v) for v in self.hist_windows)
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        make_schedule(self.T_E, self.T_A, self.T_C, self.T_D, self.T_E)

    def rebalance_steps(self) -> list[int]:
        return [self.t_0 + k * self.T_A for k in range(self.n_episodes)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        d["n_stars"] = list(self.n_stars)
        d["hist_windows"] = list(self.hist_windows)
        return d


class MarketState:
    """Arrays derived once from the panels.

    Every derived cell depends only on prices inside its own window, so
    poisoning prices from some step onward leaves all earlier cells
    unchanged.
    """

    def __init__(self, panels: Panels, cfg: BacktestConfig):
        self.panels = panels
        self.names = panels.constituents
        self.prices = panels.constituent_prices()
        self.index = panels.index_prices()
        self.members = panels.universe.members
        self.weights = panels.weights.values
        self.n_steps = self.prices.shape[0]
        self.stats = rolling_statistics(daily_returns(self.prices), daily_returns(self.index), cfg.grid)
        self.r_h = horizon_returns(self.prices, cfg.T_A)
        self.rm_h = horizon_returns(self.index[:, None], cfg.T_A)[:, 0]
        alpha, beta, rho = theil_sen_targets(self.r_h, self.rm_h, cfg.T_C)
        self.targets = np.stack([alpha, beta, rho], axis=-1)

    def year(self, step: int) -> int:
        return self.panels.calendar.date(step).year


# --------------------------------------------------------------------------
# Episode


@dataclass
class EpisodeArtifacts:
    """Everything decided at ``t_n`` with information up to ``t_n - 1``."""

    t_n: int
    model: SensitivityPredictor | None
    predicted: dict
    historical: dict
    excluded: tuple
    problems: dict
    solutions: dict
    failures: dict
    full_lagged: MilpSolution
    full_zero_lag: MilpSolution | None
    n_train: int
    n_val: int


def _records(state: MarketState, lo: int, hi: int, stride: int, grid):
    steps = np.arange(hi, lo - 1, -stride)[::-1]
    steps = steps[steps >= 0]
    rows, cols = np.nonzero(state.members[steps])
    rs = steps[rows]
    y = state.targets[rs, cols]
    X = gather_tensors(state.stats, rs, cols, grid)
    ok = np.isfinite(y).all(axis=1) & np.isfinite(X).all(axis=(1, 2, 3))
    return X[ok], y[ok], rs[ok]


def _historical(state: MarketState, cols, t_n: int, window: int, T_A: int, overlapping: bool):
    out = {}
    for k in cols:
        x, y = historical_sample(state.prices[:, k], state.index, t_n, window, T_A, overlapping)
        if x.size < 2 or np.ptp(x) == 0:
            continue
        out[state.names[k]] = ols(x, y)
    return out


def episode_seed(seed: int, t_n: int) -> int:
    return int(np.random.SeedSequence([seed, t_n]).generate_state(1)[0])


def fit_episode_model(state: MarketState, cfg: BacktestConfig, t_n: int):
    """Train the predictor of episode ``t_n`` on its train and validation blocks.

    Returns ``(model, n_train, n_val)``; ``model`` is None when the train
    block holds no complete record.
    """
    sched = make_schedule(t_n, cfg.T_A, cfg.T_C, cfg.T_D, cfg.T_E, state.n_steps)
    Xtr, ytr, str_ = _records(state, *sched.train, cfg.record_stride, cfg.grid)
    Xva, yva, sva = _records(state, *sched.validation, cfg.record_stride, cfg.grid)
    for steps in (str_, sva):
        if steps.size and sched.last_price_step(int(steps.max())) > t_n - 1:
            raise LookAheadError(f"record at step {int(steps.max())} needs prices at or after {t_n}")
    if not len(ytr):
        return None, 0, int(len(yva))
    train_cfg = TrainConfig(**{**asdict(cfg.train), "seed": episode_seed(cfg.seed, t_n)})
    model = SensitivityPredictor.from_config(train_cfg, grid=cfg.grid, episode=t_n)
    model.fit(Xtr, ytr, Xva if len(yva) else None, yva if len(yva) else None)
    return model, int(len(ytr)), int(len(yva))


def predict_at(state: MarketState, cfg: BacktestConfig, model, t_n: int) -> dict:
    """``{instrument: (alpha, beta, rho)}`` for members of ``S_{t_n}`` with full history."""
    if model is None:
        return {}
    model.check_episode(t_n)
    members = np.flatnonzero(state.members[t_n])
    Xte = gather_tensors(state.stats, np.full(members.size, t_n), members, cfg.grid)
    have = np.isfinite(Xte).all(axis=(1, 2, 3))
    if not have.any():
        return {}
    pred = model.predict(Xte[have])
    return {state.names[k]: (float(a), float(b), float(r)) for k, (a, b, r) in zip(members[have], pred)}


def run_episode(state: MarketState, cfg: BacktestConfig, t_n: int) -> EpisodeArtifacts:
    """Train, predict and construct portfolios for rebalance step ``t_n``."""
    model, n_train, n_val = fit_episode_model(state, cfg, t_n)
    predicted = predict_at(state, cfg, model, t_n)
    members = np.flatnonzero(state.members[t_n])
    excluded = tuple(state.names[k] for k in members if state.names[k] not in predicted)

    historical = {
        w: _historical(state, members, t_n, w, cfg.T_A, cfg.overlapping_hist) for w in cfg.hist_windows
    }

    prior = {state.names[k]: float(state.weights[t_n - 1, k])
             for k in np.flatnonzero(state.weights[t_n - 1] > 0)}
    universe = [state.names[k] for k in members]
    problems, solutions, failures = {}, {}, {}
    for n_star in cfg.n_stars:
        try:
            problem = build_problem(
                {k: v[:2] for k, v in predicted.items()}, prior, universe, n_star, excluded,
                equality_tolerance=cfg.equality_tolerance,
            )
            problems[n_star] = problem
            solutions[n_star] = solve(problem, time_limit=cfg.time_limit,
                                      gap_tolerance=cfg.gap_tolerance, node_limit=cfg.node_limit)
        except (InfeasibleProblemError, SolverTimeoutError) as exc:
            failures[n_star] = f"{type(exc).__name__}: {exc}"
    full_lagged = full_replication(prior, tuple(prior) + tuple(k for k in universe if k not in prior))
    zero = None
    if cfg.zero_lag_diagnostic:
        now = {state.names[k]: float(state.weights[t_n, k]) for k in np.flatnonzero(state.weights[t_n] > 0)}
        zero = full_replication(now)
    return EpisodeArtifacts(
        t_n, model, predicted, historical, excluded, problems, solutions, failures,
        full_lagged, zero, n_train, n_val,
    )


def _portfolio_return(state: MarketState, t_n: int, weights: dict, label: str) -> float:
    total = 0.0
    for name, w in weights.items():
        if w == 0:
            continue
        r = state.r_h[t_n, state.panels.universe.instruments.index(name)]
        if np.isnan(r):
            warnings.warn(f"{label}: no {t_n}+T_A return for {name}; counted as 0", RuntimeWarning)
            continue
        total += w * r
    return total


def evaluate_episode(state: MarketState, cfg: BacktestConfig, art: EpisodeArtifacts) -> dict:
    """Per-episode record of squared errors and portfolio returns."""
    t_n = art.t_n
    col = {n: k for k, n in enumerate(state.names)}
    rm = float(state.rm_h[t_n])
    names = [n for n in art.predicted if all(n in h for h in art.historical.values())]
    names = [n for n in names if np.isfinite(state.r_h[t_n, col[n]])]
    pe = {}
    if names:
        ri = np.array([state.r_h[t_n, col[n]] for n in names])
        p = np.array([art.predicted[n] for n in names])
        err = ri - (p[:, 1] * rm + p[:, 0] + p[:, 2])
        pe[ESTIMATOR_DL] = {"sse": float(err @ err), "n": len(names)}
        for w, est in art.historical.items():
            h = np.array([est[n] for n in names])
            err = ri - (h[:, 1] * rm + h[:, 0])
            pe[f"hist_{w}"] = {"sse": float(err @ err), "n": len(names)}
    returns = {}
    for n_star, sol in sorted(art.solutions.items()):
        returns[f"milp_{n_star}"] = _portfolio_return(state, t_n, sol.as_dict(), f"N*={n_star}")
    returns["full_lagged"] = _portfolio_return(state, t_n, art.full_lagged.as_dict(), "full")
    if art.full_zero_lag is not None:
        returns["full_zero_lag"] = _portfolio_return(state, t_n, art.full_zero_lag.as_dict(), "zero-lag")
    record = {
        "t_n": t_n,
        "date": state.panels.calendar.date(t_n).isoformat(),
        "year": state.year(t_n),
        "index_return": rm,
        "portfolio_returns": returns,
        "pe": pe,
        "n_train": art.n_train,
        "n_val": art.n_val,
        "n_excluded": len(art.excluded),
        "failures": {str(k): v for k, v in art.failures.items()},
        "solver": {
            str(k): {"status": s.status, "objective": s.objective, "nodes": s.nodes,
                     "lp_iterations": s.lp_iterations, "gap": s.gap,
                     "holdings": int(s.included.sum())}
            for k, s in sorted(art.solutions.items())
        },
        "holdings": {
            str(k): {n: w for n, w in zip(s.instruments, s.weights.tolist()) if w > 0}
            for k, s in sorted(art.solutions.items())
        },
    }
    if art.model is not None:
        record["training"] = {"epochs": art.model.n_epochs_, "best_epoch": art.model.best_epoch_,
                              "best_val_loss": art.model.best_val_loss_}
    return record


# --------------------------------------------------------------------------
# Report


def aggregate(episodes: list[dict]) -> dict:
    """PE per estimator (overall and by year) and TE per strategy from episode records."""
    pe_tot: dict = {}
    pe_year: dict = {}
    for ep in episodes:
        for est, v in ep["pe"].items():
            a = pe_tot.setdefault(est, [0.0, 0])
            a[0] += v["sse"]
            a[1] += v["n"]
            b = pe_year.setdefault(ep["year"], {}).setdefault(est, [0.0, 0])
            b[0] += v["sse"]
            b[1] += v["n"]
    te: dict = {}
    for ep in episodes:
        for strat, r in ep["portfolio_returns"].items():
            te.setdefault(strat, []).append((r, ep["index_return"]))
    return {
        "pe": {k: s / n for k, (s, n) in sorted(pe_tot.items()) if n},
        "pe_by_year": {str(y): {k: s / n for k, (s, n) in sorted(d.items()) if n}
                       for y, d in sorted(pe_year.items())},
        "te": {k: {"te": tracking_error([a for a, _ in v], [b for _, b in v]), "n_episodes": len(v)}
               for k, v in sorted(te.items())},
    }


@dataclass
class BacktestReport:
    config: dict
    episodes: list

    @property
    def summary(self) -> dict:
        return aggregate(self.episodes)

    def best_historical(self) -> tuple[str, float]:
        pe = {k: v for k, v in self.summary["pe"].items() if k.startswith("hist_")}
        k = min(pe, key=pe.get)
        return k, pe[k]

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "summary": self.summary, "episodes": self.episodes},
                          sort_keys=True, indent=1)

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        summary = self.summary
        paths = [directory / "report.json", directory / "pe_by_year.csv", directory / "te_by_nstar.csv"]
        paths[0].write_text(self.to_json())
        estimators = sorted(summary["pe"])
        with open(paths[1], "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["year", *estimators])
            for year, row in summary["pe_by_year"].items():
                out.writerow([year, *(repr(row.get(e, float("nan"))) for e in estimators)])
            out.writerow(["all", *(repr(summary["pe"][e]) for e in estimators)])
        with open(paths[2], "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["strategy", "n_star", "te", "n_episodes"])
            for strat, v in summary["te"].items():
                n_star = strat.split("_", 1)[1] if strat.startswith("milp_") else ""
                out.writerow([strat, n_star, repr(v["te"]), v["n_episodes"]])
        return paths

    @classmethod
    def read(cls, path) -> "BacktestReport":
        d = json.loads(Path(path).read_text())
        return cls(d["config"], d["episodes"])


def run_backtest(panels: Panels, cfg: BacktestConfig, progress=None) -> BacktestReport:
    """Run every episode ``t_n = t_0 + n T_A`` and collect the report."""
    steps = cfg.rebalance_steps()
    last = steps[-1] + cfg.T_A
    first = steps[0] - cfg.T_E - cfg.grid.depth
    if first < 0 or last >= len(panels.calendar):
        raise ScheduleError(
            f"panels cover steps 0..{len(panels.calendar) - 1}; need {max(first, 0)}..{last}"
        )
    state = MarketState(panels, cfg)
    episodes = []
    for t_n in steps:
        art = run_episode(state, cfg, t_n)
        episodes.append(evaluate_episode(state, cfg, art))
        if progress is not None:
            progress(episodes[-1])
    return BacktestReport(cfg.to_dict(), episodes)
