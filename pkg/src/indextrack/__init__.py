"""Index tracking with predicted time-varying market sensitivities.

A neural predictor estimates each instrument's next-period single-factor
coefficients; a cardinality-capped MILP then builds a partial-replication
portfolio that matches the index's predicted net alpha and beta.
"""

from .backtest import BacktestConfig, BacktestReport, EpisodeSchedule, make_schedule, run_backtest, tracking_error
from .factor_targets import FactorEstimate, historical_estimate, make_target, prediction_error, theil_sen
from .features import CdfTransformer, EmpiricalCdf, FeatureGridSpec, build_tensor, fit_cdf
from .market_data import Panels, PricePanel, load_panels
from .milp import MilpProblem, MilpSolution, build_problem, full_replication, solve
from .predictor import SensitivityPredictor, TrainConfig
from .synthetic import SynthConfig, generate

__all__ = [
    "BacktestConfig", "BacktestReport", "EpisodeSchedule", "make_schedule", "run_backtest",
    "tracking_error", "FactorEstimate", "historical_estimate", "make_target", "prediction_error",
    "theil_sen", "CdfTransformer", "EmpiricalCdf", "FeatureGridSpec", "build_tensor", "fit_cdf",
    "Panels", "PricePanel", "load_panels", "MilpProblem", "MilpSolution", "build_problem",
    "full_replication", "solve", "SensitivityPredictor", "TrainConfig", "SynthConfig", "generate",
]
