"""Supervised targets from Theil-Sen regression and the historical-OLS baseline."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .exceptions import (
    DegenerateRegressorError,
    EmptyBatchError,
    EstimateUnavailableError,
    TargetUnavailableError,
)
from .market_data import ReturnPanel


class EstimateKind(str, enum.Enum):
    TARGET = "target"
    PREDICTED = "predicted"
    HISTORICAL = "historical"


@dataclass(frozen=True)
class FactorEstimate:
    """Single-factor coefficients ``(alpha, beta, residual)`` for one horizon."""

    alpha: float
    beta: float
    residual: float
    kind: EstimateKind

    def __post_init__(self):
        if not all(np.isfinite([self.alpha, self.beta, self.residual])):
            raise ValueError(f"non-finite factor estimate {self}")
        object.__setattr__(self, "kind", EstimateKind(self.kind))

    def reconstruct(self, market_return: float) -> float:
        return self.beta * market_return + self.alpha + self.residual


def _median_last_axis(values: np.ndarray) -> np.ndarray:
    """Median along the last axis ignoring NaN; even counts average the middle pair.

    Rows with no finite entries give NaN.
    """
    s = np.sort(values, axis=-1)  # NaN sorts last
    n = np.sum(~np.isnan(s), axis=-1)
    lo = np.maximum((n - 1) // 2, 0)
    hi = np.maximum(n // 2, 0)
    a = np.take_along_axis(s, lo[..., None], axis=-1)[..., 0]
    b = np.take_along_axis(s, hi[..., None], axis=-1)[..., 0]
    out = (a + b) / 2.0
    return np.where(n > 0, out, np.nan)


def theil_sen(x, y) -> tuple[float, float]:
    """Theil-Sen line fit.

    The slope is the median of ``(y_k - y_j) / (x_k - x_j)`` over all pairs
    ``j < k`` with ``x_j != x_k``; the intercept is the median of
    ``y_j - slope * x_j``.

    Returns
    -------
    (alpha, beta) : tuple of float
        Intercept and slope.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if x.size < 2:
        raise ValueError("need at least two points")
    alpha, beta = theil_sen_batch(x[None, :], y[None, :])
    if np.isnan(beta[0]):
        raise DegenerateRegressorError("all regressor values are equal")
    return float(alpha[0]), float(beta[0])


def theil_sen_batch(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise Theil-Sen over the last axis of ``x`` and ``y``.

    Rows containing NaN, or whose ``x`` values are all equal, return NaN.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    j, k = map(np.array, zip(*combinations(range(n), 2)))
    dx = x[..., k] - x[..., j]
    dy = y[..., k] - y[..., j]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        slopes = np.where(dx != 0, dy / dx, np.nan)
    beta = _median_last_axis(slopes)
    bad = np.isnan(x).any(axis=-1) | np.isnan(y).any(axis=-1)
    beta = np.where(bad, np.nan, beta)
    alpha = _median_last_axis(y - beta[..., None] * x)
    return alpha, beta


def theil_sen_targets(
    instrument_returns: np.ndarray,
    market_returns: np.ndarray,
    half_window: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Targets for every ``(t, instrument)`` from horizon-return panels.

    ``instrument_returns[t, k]`` and ``market_returns[t]`` hold ``r_{t:t+T_A}``.
    The fit for step ``t`` uses the ``2 * half_window + 1`` pairs at
    ``tau = t - half_window .. t + half_window``; the residual is taken at the
    centre point. Unavailable cells are NaN.
    """
    ri = np.asarray(instrument_returns, dtype=float)
    rm = np.asarray(market_returns, dtype=float)
    n_steps = ri.shape[0]
    width = 2 * half_window + 1
    alpha = np.full(ri.shape, np.nan)
    beta = np.full(ri.shape, np.nan)
    rho = np.full(ri.shape, np.nan)
    if n_steps < width:
        return alpha, beta, rho
    win_i = np.lib.stride_tricks.sliding_window_view(ri, width, axis=0)  # (t, k, w)
    win_m = np.lib.stride_tricks.sliding_window_view(rm, width)  # (t, w)
    xm = np.broadcast_to(win_m[:, None, :], win_i.shape)
    a, b = theil_sen_batch(xm, win_i)
    centre = slice(half_window, n_steps - half_window)
    alpha[centre] = a
    beta[centre] = b
    rho[centre] = ri[centre] - a - b * rm[centre, None]
    return alpha, beta, rho


def make_target(
    returns: ReturnPanel,
    instrument: str,
    t: int,
    horizon: int,
    half_window: int,
    market: str,
) -> FactorEstimate:
    """Theil-Sen target ``(alpha, beta, rho)`` for one instrument at step ``t``."""
    ri = returns.array(horizon)[:, returns.prices.column(instrument)]
    rm = returns.array(horizon)[:, returns.prices.column(market)]
    lo, hi = t - half_window, t + half_window + 1
    if lo < 0 or hi > len(ri):
        raise TargetUnavailableError(f"window around step {t} leaves the calendar")
    x, y = rm[lo:hi], ri[lo:hi]
    if np.isnan(x).any() or np.isnan(y).any():
        raise TargetUnavailableError(f"missing horizon return for {instrument} near step {t}")
    try:
        alpha, beta = theil_sen(x, y)
    except DegenerateRegressorError as exc:
        raise TargetUnavailableError(str(exc)) from exc
    rho = ri[t] - alpha - beta * rm[t]
    return FactorEstimate(alpha, beta, float(rho), EstimateKind.TARGET)


def ols(x, y) -> tuple[float, float]:
    """Ordinary least squares intercept and slope of ``y`` on ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = np.dot(dx, dx)
    if sxx == 0:
        raise DegenerateRegressorError("all regressor values are equal")
    beta = np.dot(dx, y - ym) / sxx
    return float(ym - beta * xm), float(beta)


def historical_sample(
    instrument_prices: np.ndarray,
    market_prices: np.ndarray,
    t: int,
    window: int,
    horizon: int,
    overlapping: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Horizon-return pairs ending at or before ``t - 1`` inside ``window`` steps.

    Non-overlapping sampling walks back from ``t - 1`` in strides of
    ``horizon``; overlapping sampling takes every ``horizon``-step return whose
    start is at or after ``t - 1 - window``.
    """
    end = t - 1
    start = end - window
    stride = 1 if overlapping else horizon
    ends = np.arange(end, start + horizon - 1, -stride)
    ends = ends[ends - horizon >= max(start, 0)]
    ends = ends[::-1]
    pi, pm = instrument_prices, market_prices
    x = pm[ends] / pm[ends - horizon] - 1.0
    y = pi[ends] / pi[ends - horizon] - 1.0
    ok = ~(np.isnan(x) | np.isnan(y))
    return x[ok], y[ok]


def historical_estimate(
    returns: ReturnPanel,
    instrument: str,
    t: int,
    window: int,
    horizon: int,
    market: str,
    overlapping: bool = False,
) -> FactorEstimate:
    """OLS ``(alpha, beta)`` from horizon returns observed before step ``t``.

    The residual is zero by convention.
    """
    prices = returns.prices
    x, y = historical_sample(
        prices.series(instrument), prices.series(market), t, window, horizon, overlapping
    )
    if x.size < 2:
        raise EstimateUnavailableError(
            f"{x.size} horizon returns for {instrument} in a {window}-step window"
        )
    try:
        alpha, beta = ols(x, y)
    except DegenerateRegressorError as exc:
        raise EstimateUnavailableError(str(exc)) from exc
    return FactorEstimate(alpha, beta, 0.0, EstimateKind.HISTORICAL)


def squared_errors(ri, rm, alpha, beta, rho) -> np.ndarray:
    """Element-wise ``(r_i - (beta * r_m + alpha + rho))**2``."""
    ri, rm, alpha, beta, rho = (np.asarray(v, dtype=float) for v in (ri, rm, alpha, beta, rho))
    return (ri - (beta * rm + alpha + rho)) ** 2


def prediction_error(batch) -> float:
    """Mean squared reconstruction error over ``(r_i, r_m, FactorEstimate)`` items."""
    batch = list(batch)
    if not batch:
        raise EmptyBatchError("prediction error of an empty batch")
    total = 0.0
    for ri, rm, est in batch:
        rho = 0.0 if est.kind is EstimateKind.HISTORICAL else est.residual
        total += (ri - (est.beta * rm + est.alpha + rho)) ** 2
    return total / len(batch)
