"""Command-line entry point: ``indextrack <subcommand> --config run.json [flags]``.

Config keys (all optional unless a subcommand needs them)::

    prices, weights, output_dir, index_id, seed,
    schedule: {T_A, T_C, T_D, T_E, t_0, n_episodes},
    grid: {tau_offsets, window_lengths},
    train: {batch_size, momentum, l2, initial_lr, max_epochs, patience, ...},
    n_stars, hist_windows, overlapping_hist, record_stride,
    node_limit, gap_tolerance, time_limit, equality_tolerance,
    synth: {n_instruments, n_days, ...}

Flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .backtest import BacktestConfig, MarketState, fit_episode_model, predict_at, run_backtest
from .exceptions import ConfigError, IndexTrackError
from .features import FeatureGridSpec
from .market_data import load_panels, read_long_csv, read_weight_rows, write_panels
from .milp import MilpProblem, build_problem, check_solution, solve
from .predictor import SensitivityPredictor, TrainConfig
from .synthetic import SynthConfig, generate, write_truth

PREDICTION_HEADER = ("date", "instrument", "alpha", "beta", "rho")
WEIGHT_HEADER = ("date", "instrument", "weight")


# --------------------------------------------------------------------------
# Configuration


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be an object")
    return cfg


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    schedule = dict(cfg.get("schedule", {}))
    for key, attr in (
        ("prices", "prices"), ("weights", "weights"), ("output_dir", "output_dir"),
        ("index_id", "index_id"), ("seed", "seed"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    for key, attr in (("t_0", "t0"), ("n_episodes", "n_episodes")):
        value = getattr(args, attr, None)
        if value is not None:
            schedule[key] = value
    if getattr(args, "n_stars", None):
        cfg["n_stars"] = [int(v) for v in args.n_stars.split(",")]
    cfg["schedule"] = schedule
    return cfg


def _require_file(cfg: dict, key: str) -> Path:
    value = cfg.get(key)
    if not value:
        raise ConfigError(key, "missing")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(key, f"no such file: {path}")
    return path


def _sub(cfg: dict, key: str, cls):
    raw = cfg.get(key, {})
    if not isinstance(raw, dict):
        raise ConfigError(key, "must be an object")
    known = {f.name for f in fields(cls)}
    for name in raw:
        if name not in known:
            raise ConfigError(f"{key}.{name}", "unknown field")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None


def backtest_config(cfg: dict) -> BacktestConfig:
    """Build a :class:`BacktestConfig` from a config dict, naming the bad field on error."""
    schedule = cfg.get("schedule", {})
    if not isinstance(schedule, dict):
        raise ConfigError("schedule", "must be an object")
    kw = {}
    for name in ("T_A", "T_C", "T_D", "T_E", "t_0", "n_episodes"):
        if name in schedule:
            kw[name] = schedule[name]
    for name in ("n_stars", "hist_windows", "overlapping_hist", "record_stride", "node_limit",
                 "gap_tolerance", "time_limit", "equality_tolerance", "zero_lag_diagnostic", "seed"):
        if name in cfg:
            kw[name] = cfg[name]
    kw["grid"] = _sub(cfg, "grid", FeatureGridSpec)
    kw["train"] = _sub(cfg, "train", TrainConfig)
    try:
        return BacktestConfig(**kw)
    except IndexTrackError as exc:
        raise ConfigError("schedule", str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError("backtest", str(exc)) from None


def _panels(cfg: dict):
    prices = _require_file(cfg, "prices")
    weights = _require_file(cfg, "weights")
    return load_panels(prices, weights, cfg.get("index_id", "INDEX"))


def _output_dir(cfg: dict, args=None) -> Path:
    value = getattr(args, "out", None) or cfg.get("output_dir")
    if not value:
        raise ConfigError("output_dir", "missing")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _step(panels, date: str, field_name: str = "rebalance_date") -> int:
    try:
        return panels.calendar.step(date)
    except (KeyError, ValueError) as exc:
        raise ConfigError(field_name, str(exc).strip("'\"")) from None


# --------------------------------------------------------------------------
# Subcommands


def cmd_synth(cfg: dict, args) -> int:
    synth = _sub(cfg, "synth", SynthConfig)
    if args.seed is not None:
        synth = SynthConfig(**{**synth.to_dict(), "seed": args.seed})
    out = _output_dir(cfg, args)
    panels, truth = generate(synth)
    prices, weights = write_panels(out, panels)
    horizon = int(cfg.get("schedule", {}).get("T_A", 21))
    write_truth(out / "truth.csv", panels.calendar, truth, horizon)
    load_panels(prices, weights, synth.index_id)  # written files must re-parse
    print(f"wrote {prices}, {weights}, {out / 'truth.csv'}")
    return 0


def cmd_ingest(cfg: dict, args) -> int:
    panels = _panels(cfg)
    cal = panels.calendar
    members = panels.universe.members.sum(axis=1)
    print(f"dates: {len(cal)} ({cal.date(0)} .. {cal.date(len(cal) - 1)})")
    print(f"constituents: {len(panels.constituents)} (per day {members.min()}..{members.max()})")
    print(f"index: {panels.index_id}")
    return 0


def _trained_model(cfg, panels, bcfg, t_n, model_path=None):
    if model_path:
        model = SensitivityPredictor.load(model_path)
        model.check_episode(t_n)
        return model
    state = MarketState(panels, bcfg)
    model, _, _ = fit_episode_model(state, bcfg, t_n)
    if model is None:
        raise ConfigError("rebalance_date", "no complete training records before this date")
    return model


def cmd_train(cfg: dict, args) -> int:
    panels = _panels(cfg)
    bcfg = backtest_config(cfg)
    t_n = _step(panels, args.rebalance_date)
    out = _output_dir(cfg, args)
    model = _trained_model(cfg, panels, bcfg, t_n)
    path = out / f"model_{panels.calendar.date(t_n).isoformat()}.npz"
    model.save(path)
    print(f"wrote {path} (epochs {model.n_epochs_}, best {model.best_epoch_})")
    return 0


def write_predictions(path, date: str, predictions: dict) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(PREDICTION_HEADER)
        for name in sorted(predictions):
            out.writerow([date, name, *(repr(float(v)) for v in predictions[name])])


def read_predictions(path) -> tuple[str | None, dict]:
    dates, _, table = read_long_csv(path, PREDICTION_HEADER)
    if len(dates) > 1:
        raise ConfigError("predictions", "file holds more than one date")
    date = dates[0].isoformat() if dates else None
    return date, {name: values for (_, name), values in table.items()}


def cmd_predict(cfg: dict, args) -> int:
    panels = _panels(cfg)
    bcfg = backtest_config(cfg)
    t_n = _step(panels, args.rebalance_date)
    model = _trained_model(cfg, panels, bcfg, t_n, args.model)
    state = MarketState(panels, bcfg)
    pred = predict_at(state, bcfg, model, t_n)
    out = Path(args.output) if args.output else _output_dir(cfg, args) / "predictions.csv"
    date = panels.calendar.date(t_n).isoformat()
    write_predictions(out, date, pred)
    read_predictions(out)
    print(f"wrote {out} ({len(pred)} instruments)")
    return 0


def write_weights_csv(path, date: str, weights: dict) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(WEIGHT_HEADER)
        for name, w in weights.items():
            if w > 0:
                out.writerow([date, name, repr(float(w))])


def cmd_construct(cfg: dict, args) -> int:
    if args.problem:
        try:
            problem = MilpProblem.from_dict(json.loads(Path(args.problem).read_text()))
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError("problem", str(exc)) from None
        if args.n_star is not None:
            problem.n_star = args.n_star
        date = args.date or "1970-01-01"
    else:
        if not args.predictions:
            raise ConfigError("predictions", "missing (or give --problem)")
        if args.n_star is None:
            raise ConfigError("n_star", "missing")
        panels = _panels(cfg)
        file_date, pred = read_predictions(args.predictions)
        date = args.date or file_date
        if date is None:
            raise ConfigError("date", "missing")
        t_n = _step(panels, date, "date")
        if t_n == 0:
            raise ConfigError("date", "no prior weights before the first date")
        universe = panels.universe.members_at(t_n)
        prior = panels.weights.at(t_n - 1)
        excluded = [k for k in universe if k not in pred]
        problem = build_problem(
            {k: v[:2] for k, v in pred.items()}, prior, universe, args.n_star, excluded,
            equality_tolerance=float(cfg.get("equality_tolerance", 0.0)),
        )
    sol = solve(problem, time_limit=cfg.get("time_limit"), gap_tolerance=float(cfg.get("gap_tolerance", 0.0)),
                node_limit=int(cfg.get("node_limit", 100_000)))
    problems = check_solution(problem, sol)
    if problems:
        raise IndexTrackError("solution failed validation: " + "; ".join(problems))
    out = Path(args.output) if args.output else _output_dir(cfg, args) / "weights.csv"
    write_weights_csv(out, date, sol.as_dict())
    read_weight_rows(out)
    if args.solution_json:
        Path(args.solution_json).write_text(sol.to_json())
    print(f"wrote {out} ({int(sol.included.sum())} holdings, objective {sol.objective:.6g}, {sol.status})")
    return 0


def cmd_backtest(cfg: dict, args) -> int:
    panels = _panels(cfg)
    bcfg = backtest_config(cfg)
    out = _output_dir(cfg, args)

    def progress(ep):
        print(f"episode {ep['date']}: " + ", ".join(
            f"{k}={v['sse'] / v['n']:.3e}" for k, v in sorted(ep["pe"].items())), file=sys.stderr)

    report = run_backtest(panels, bcfg, progress=None if args.quiet else progress)
    paths = report.write(out)
    json.loads(paths[0].read_text())
    for p in paths:
        print(f"wrote {p}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "predict": cmd_predict,
    "construct": cmd_construct,
    "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="indextrack", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--threads", type=int, default=1, help="worker threads for linear algebra")
    common.add_argument("--prices")
    common.add_argument("--weights")
    common.add_argument("--index-id", dest="index_id")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--seed", type=int)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic market")
    p.add_argument("--out")
    sub.add_parser("ingest", parents=[common], help="validate and summarize panels")
    p = sub.add_parser("train", parents=[common], help="train one episode's model")
    p.add_argument("--rebalance-date", required=True)
    p.add_argument("--out")
    p = sub.add_parser("predict", parents=[common], help="predict (alpha, beta, rho) for a date")
    p.add_argument("--rebalance-date", required=True)
    p.add_argument("--model", help="checkpoint from `train`; trains afresh if omitted")
    p.add_argument("--output")
    p.add_argument("--out")
    p = sub.add_parser("construct", parents=[common], help="solve one portfolio MILP")
    p.add_argument("--predictions")
    p.add_argument("--problem", help="MILP problem JSON instead of predictions + panels")
    p.add_argument("--n-star", type=int)
    p.add_argument("--date")
    p.add_argument("--output")
    p.add_argument("--solution-json")
    p.add_argument("--out")
    p = sub.add_parser("backtest", parents=[common], help="run the walk-forward backtest")
    p.add_argument("--t0", type=int)
    p.add_argument("--n-episodes", type=int)
    p.add_argument("--n-stars")
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IndexTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
