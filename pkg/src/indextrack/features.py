"""Input tensors of rolling regression statistics and the empirical-CDF transform."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateDistributionError, FeatureUnavailableError, LookAheadError

FEATURE_KINDS = ("A", "B", "L", "S", "L_m", "S_m")
K = len(FEATURE_KINDS)


@dataclass(frozen=True)
class FeatureGridSpec:
    """End-date offsets ``tau`` (rows) and estimation lengths (columns) of the grid."""

    tau_offsets: tuple[int, ...] = (1, 6, 11, 16, 21)
    window_lengths: tuple[int, ...] = (21, 63, 126, 252)

    def __post_init__(self):
        taus = tuple(int(v) for v in self.tau_offsets)
        wins = tuple(int(v) for v in self.window_lengths)
        if not taus or taus[0] < 1 or any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("tau_offsets must be >= 1 and strictly increasing")
        if not wins or wins[0] < 2 or any(b <= a for a, b in zip(wins, wins[1:])):
            raise ValueError("window_lengths must be >= 2 and strictly increasing")
        object.__setattr__(self, "tau_offsets", taus)
        object.__setattr__(self, "window_lengths", wins)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (K, len(self.tau_offsets), len(self.window_lengths))

    @property
    def n_features(self) -> int:
        return int(np.prod(self.shape))

    @property
    def depth(self) -> int:
        """Daily returns needed before step ``t``: ``max(tau) + max(I) - 1``."""
        return self.tau_offsets[-1] + self.window_lengths[-1] - 1

    def to_dict(self) -> dict:
        return {"tau_offsets": list(self.tau_offsets), "window_lengths": list(self.window_lengths)}


def daily_returns(prices: np.ndarray) -> np.ndarray:
    """``out[d] = p[d] / p[d - 1] - 1``; row 0 is NaN."""
    prices = np.asarray(prices, dtype=float)
    out = np.full(prices.shape, np.nan)
    out[1:] = prices[1:] / prices[:-1] - 1.0
    return out


def _window_stats(y: np.ndarray, x: np.ndarray, length: int) -> np.ndarray:
    """Statistics over every trailing window of ``length`` days.

    ``y`` is one instrument's daily returns and ``x`` the market's. Row ``e`` of
    the result covers days ``e - length + 1 .. e`` and holds
    ``(A, B, L, S, L_m, S_m)``; rows without a full window are NaN.
    """
    n = y.shape[0]
    out = np.full((n, K), np.nan)
    if n < length:
        return out
    wy = np.lib.stride_tricks.sliding_window_view(y, length)
    wx = np.lib.stride_tricks.sliding_window_view(x, length)
    mx = wx.mean(axis=1)
    my = wy.mean(axis=1)
    dx = wx - mx[:, None]
    dy = wy - my[:, None]
    sxx = np.einsum("ij,ij->i", dx, dx)
    sxy = np.einsum("ij,ij->i", dx, dy)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(sxx > 0, sxy / sxx, 0.0)
    intercept = my - slope * mx
    ex = wy - wx
    ex_mean = ex.mean(axis=1)
    ex_std = ex.std(axis=1, ddof=1)
    m_std = np.sqrt(sxx / (length - 1))
    stats = np.stack([intercept, slope, ex_mean, ex_std, mx, m_std], axis=1)
    stats[np.isnan(wy).any(axis=1) | np.isnan(wx).any(axis=1)] = np.nan
    out[length - 1 :] = stats
    return out


def rolling_statistics(
    instrument_returns: np.ndarray, market_returns: np.ndarray, spec: FeatureGridSpec
) -> np.ndarray:
    """Window statistics for every end day, instrument and window length.

    Returns an array of shape ``(n_steps, n_instruments, K, H)``. Each cell is
    computed from its own window only, so values never depend on returns
    outside that window.
    """
    ri = np.asarray(instrument_returns, dtype=float)
    if ri.ndim == 1:
        ri = ri[:, None]
    rm = np.asarray(market_returns, dtype=float)
    n, m = ri.shape
    out = np.empty((n, m, K, len(spec.window_lengths)))
    for h, length in enumerate(spec.window_lengths):
        for k in range(m):
            out[:, k, :, h] = _window_stats(ri[:, k], rm, length)
    return out


def gather_tensors(stats: np.ndarray, steps, columns, spec: FeatureGridSpec) -> np.ndarray:
    """Tensors ``X_{i,t-1}`` for records at ``steps`` (step ``t``) and ``columns``.

    Row ``tau`` of a tensor reads the statistics whose window ends on day
    ``t - tau``. Output shape is ``(n_records, K, T_G, H)``; records lacking
    history contain NaN.
    """
    steps = np.asarray(steps, dtype=int)
    columns = np.asarray(columns, dtype=int)
    ends = steps[:, None] - np.asarray(spec.tau_offsets)[None, :]  # (n, T_G)
    valid = ends >= 0
    g = stats[np.where(valid, ends, 0), columns[:, None]]  # (n, T_G, K, H)
    g[~valid] = np.nan
    return np.ascontiguousarray(g.transpose(0, 2, 1, 3))


def build_tensor(
    instrument_returns: np.ndarray,
    market_returns: np.ndarray,
    t_minus_1: int,
    spec: FeatureGridSpec,
) -> np.ndarray:
    """Feature tensor ``X_{i,t-1}`` of shape ``(K, T_G, H)`` for one instrument.

    Parameters
    ----------
    instrument_returns, market_returns : ndarray
        Daily returns indexed by step (``r[d] = p[d] / p[d-1] - 1``).
    t_minus_1 : int
        Last step whose prices may be used.
    """
    t = t_minus_1 + 1
    first = t - spec.tau_offsets[-1] - spec.window_lengths[-1] + 1
    if first < 1 or t_minus_1 >= len(instrument_returns):
        raise FeatureUnavailableError(f"insufficient history for step {t}")
    lo = first
    ri = np.asarray(instrument_returns, dtype=float)[lo:t]
    rm = np.asarray(market_returns, dtype=float)[lo:t]
    if np.isnan(ri).any() or np.isnan(rm).any():
        raise FeatureUnavailableError(f"missing daily returns before step {t}")
    stats = rolling_statistics(ri, rm, spec)
    x = gather_tensors(stats, [t - lo], [0], spec)[0]
    if not np.isfinite(x).all():
        raise FeatureUnavailableError(f"non-finite feature at step {t}")
    return x


# --------------------------------------------------------------------------
# Empirical CDF


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    """Piecewise-linear CDF through ``(knots[k], ordinates[k])``.

    Knots are the sorted distinct training values; the ``k``-th of ``n`` (1-based)
    has ordinate ``k / (n + 1)``. Evaluation clamps outside the knot range.
    """

    knots: np.ndarray
    ordinates: np.ndarray = field(repr=False)

    def __call__(self, x):
        return np.interp(x, self.knots, self.ordinates)

    def inverse(self, u):
        return np.interp(u, self.ordinates, self.knots)


def fit_cdf(train_values) -> EmpiricalCdf:
    values = np.asarray(train_values, dtype=float).ravel()
    values = values[~np.isnan(values)]
    knots = np.unique(values)
    if knots.size < 2:
        raise DegenerateDistributionError(f"{knots.size} distinct value(s); need at least 2")
    n = knots.size
    ordinates = np.arange(1, n + 1) / (n + 1)
    knots.setflags(write=False)
    ordinates.setflags(write=False)
    return EmpiricalCdf(knots, ordinates)


class CdfTransformer(TransformerMixin, BaseEstimator):
    """Column-wise empirical-CDF transform with an exact piecewise-linear inverse.

    Parameters
    ----------
    groups : array-like of int, optional
        Group label per column. Columns sharing a label share one CDF fitted on
        their pooled values. By default every column gets its own CDF.
    """

    def __init__(self, groups=None):
        self.groups = groups

    def _labels(self, n_columns):
        if self.groups is None:
            return np.arange(n_columns)
        labels = np.asarray(self.groups)
        if labels.shape != (n_columns,):
            raise ValueError(f"groups has shape {labels.shape}, expected ({n_columns},)")
        return labels

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        labels = self._labels(X.shape[1])
        cdfs = {}
        for g in np.unique(labels):
            try:
                cdfs[g] = fit_cdf(X[:, labels == g])
            except DegenerateDistributionError as exc:
                raise DegenerateDistributionError(f"column group {g}: {exc}") from None
        self.n_features_in_ = X.shape[1]
        self.cdfs_ = [cdfs[g] for g in labels]
        return self

    def transform(self, X):
        check_is_fitted(self, "cdfs_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        out = np.empty_like(X)
        for j, cdf in enumerate(self.cdfs_):
            out[:, j] = cdf(X[:, j])
        return out

    def inverse_transform(self, U):
        check_is_fitted(self, "cdfs_")
        U = check_array(U, dtype=float)
        out = np.empty_like(U)
        for j, cdf in enumerate(self.cdfs_):
            out[:, j] = cdf.inverse(U[:, j])
        return out


def kind_groups(spec: FeatureGridSpec) -> np.ndarray:
    """Group labels that pool all cells of one feature kind (the coarse CDF option)."""
    return np.repeat(np.arange(K), len(spec.tau_offsets) * len(spec.window_lengths))


def check_train_dates(dates, train_block: tuple[int, int]) -> None:
    """Reject any record whose step lies outside the inclusive train block."""
    dates = np.asarray(dates)
    lo, hi = train_block
    bad = (dates < lo) | (dates > hi)
    if bad.any():
        raise LookAheadError(
            f"{int(bad.sum())} record(s) outside train block [{lo}, {hi}], e.g. step {int(dates[bad][0])}"
        )


def transform_dataset(
    train_X,
    train_y,
    train_steps,
    train_block: tuple[int, int],
    val_X=None,
    val_y=None,
    per_cell: bool = True,
    spec: FeatureGridSpec | None = None,
):
    """Fit input and target CDFs on the train block and transform both blocks.

    Inputs are flattened tensors ``(n, K*T_G*H)``; targets are ``(n, 3)``
    columns ``(alpha, beta, rho)``.

    Returns
    -------
    (train_Xu, train_yu, val_Xu, val_yu, x_cdf, y_cdf)
    """
    check_train_dates(train_steps, train_block)
    groups = None if per_cell or spec is None else kind_groups(spec)
    x_cdf = CdfTransformer(groups=groups).fit(train_X)
    y_cdf = CdfTransformer().fit(train_y)
    out = [x_cdf.transform(train_X), y_cdf.transform(train_y)]
    out.append(None if val_X is None else x_cdf.transform(val_X))
    out.append(None if val_y is None else y_cdf.transform(val_y))
    return (*out, x_cdf, y_cdf)
