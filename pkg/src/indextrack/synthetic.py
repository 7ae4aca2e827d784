"""Synthetic market driven by a time-varying single-factor process.

Each instrument follows ``g_{i,d} = a_{i,d} + b_{i,d} f_d + e_{i,d}`` with
mean-reverting AR(1) coefficient paths, a Gaussian common factor ``f`` and
Gaussian idiosyncratic noise. The index is capitalization weighted with
fixed share counts, so its daily return is exactly the weight inner product
of the constituent returns.

Because the index return is ``r_m = abar + bbar f + ebar`` (weight averages
of the drawn terms), the coefficients *relative to the index* are

    beta*  = b / bbar
    alpha* = a - beta* * abar
    eps*   = e - beta* * ebar

and these are what the truth panel records.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import lfilter

from .market_data import IndexWeightPanel, Panels, PricePanel, TradingCalendar, UniverseCalendar


@dataclass(frozen=True)
class SynthConfig:
    """Generator parameters. Volatilities are daily standard deviations."""

    n_instruments: int = 200
    n_days: int = 2400
    kappa: float = 0.03
    beta_low: float = 0.5
    beta_high: float = 1.5
    sigma_beta: float = 0.02
    alpha_kappa: float = 0.005
    sigma_alpha: float = 3e-4
    alpha_mean_std: float = 0.0
    factor_vol: float = 0.012
    sigma_eps: float = 0.01
    share_exponent: float = 1.5
    n_late_listings: int = 0
    seed: int = 0
    index_id: str = "INDEX"
    start_date: str = "2010-01-04"

    def __post_init__(self):
        if not 0 < self.kappa <= 1 or not 0 < self.alpha_kappa <= 1:
            raise ValueError("kappa and alpha_kappa must lie in (0, 1]")
        for name in ("sigma_beta", "sigma_alpha", "alpha_mean_std", "factor_vol", "sigma_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_instruments < 1 or self.n_days < 2:
            raise ValueError("need at least one instrument and two days")
        if not 0 <= self.n_late_listings <= self.n_instruments - 1:
            raise ValueError("n_late_listings must leave at least one instrument listed from day 0")
        if self.beta_high < self.beta_low:
            raise ValueError("beta_high < beta_low")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TruthPanel:
    """Daily coefficients of each instrument relative to the index.

    Row ``d`` describes the return from step ``d - 1`` to ``d``; row 0 and
    unlisted cells are NaN.
    """

    instruments: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray
    noise: np.ndarray
    daily_returns: np.ndarray
    index_returns: np.ndarray

    def horizon(self, horizon: int):
        """Horizon coefficients for every start step ``t`` (return ``t -> t + horizon``).

        ``beta`` is the mean daily beta over the period, ``alpha`` makes the
        noise-free compounded return exact, and ``residual`` is realized minus
        noise-free return, so ``r_i = alpha + beta * r_m + residual`` holds
        exactly. Returns ``(alpha, beta, residual)`` arrays of shape
        ``(n_steps, n_instruments)``; the last ``horizon`` rows are NaN.
        """
        n, m = self.alpha.shape
        out = [np.full((n, m), np.nan) for _ in range(3)]
        if n <= horizon:
            return tuple(out)
        clean = 1.0 + self.alpha + self.beta * self.index_returns[:, None]
        real = 1.0 + self.daily_returns
        log_clean = np.vstack([np.zeros(m), np.cumsum(np.log(clean[1:]), axis=0)])
        log_real = np.vstack([np.zeros(m), np.cumsum(np.log(real[1:]), axis=0)])
        log_mkt = np.concatenate([[0.0], np.cumsum(np.log1p(self.index_returns[1:]))])
        cum_beta = np.vstack([np.zeros(m), np.cumsum(self.beta[1:], axis=0)])
        s, e = np.arange(n - horizon), np.arange(horizon, n)
        rm = np.expm1(log_mkt[e] - log_mkt[s])
        b = (cum_beta[e] - cum_beta[s]) / horizon
        c = np.expm1(log_clean[e] - log_clean[s])
        r = np.expm1(log_real[e] - log_real[s])
        out[1][s] = b
        out[0][s] = c - b * rm[:, None]
        out[2][s] = r - c
        return tuple(out)


def _ar1(rng, n_days, mean, kappa, sigma, start):
    """``x_{d+1} = x_d + kappa (mean - x_d) + sigma * shock`` for ``n_days`` steps."""
    drive = rng.standard_normal(n_days) * sigma + kappa * mean
    drive[0] = start
    return lfilter([1.0], [1.0, kappa - 1.0], drive)


def _stream(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[Panels, TruthPanel]:
    """Price and weight panels plus the ground-truth coefficient panel.

    Every instrument draws from its own counter-based stream keyed by
    ``(seed, 0, i)``; the common factor uses ``(seed, 1)`` and share counts
    and listing days ``(seed, 2)``.
    """
    n, m = cfg.n_days, cfg.n_instruments
    names = tuple(f"S{i:03d}" for i in range(m))
    start = np.datetime64(cfg.start_date)
    days = np.busday_offset(start, np.arange(n), roll="forward")
    calendar = TradingCalendar(tuple(d.astype(dt.date) for d in days))

    f = _stream(cfg.seed, 1).standard_normal(n) * cfg.factor_vol
    f[0] = 0.0
    meta = _stream(cfg.seed, 2)
    ranks = meta.permutation(m) + 1
    shares = ranks.astype(float) ** -cfg.share_exponent
    listing = np.zeros(m, dtype=int)
    if cfg.n_late_listings:
        late = meta.choice(np.arange(1, m), cfg.n_late_listings, replace=False)
        listing[late] = meta.integers(1, n // 2, size=cfg.n_late_listings)

    a = np.empty((n, m))
    b = np.empty((n, m))
    e = np.empty((n, m))
    beta_sd = cfg.sigma_beta / np.sqrt(max(1 - (1 - cfg.kappa) ** 2, 1e-300))
    alpha_sd = cfg.sigma_alpha / np.sqrt(max(1 - (1 - cfg.alpha_kappa) ** 2, 1e-300))
    for i in range(m):
        rng = _stream(cfg.seed, 0, i)
        mu_b = rng.uniform(cfg.beta_low, cfg.beta_high)
        mu_a = rng.standard_normal() * cfg.alpha_mean_std
        b0 = mu_b + beta_sd * rng.standard_normal()
        a0 = mu_a + alpha_sd * rng.standard_normal()
        b[:, i] = _ar1(rng, n, mu_b, cfg.kappa, cfg.sigma_beta, b0)
        a[:, i] = _ar1(rng, n, mu_a, cfg.alpha_kappa, cfg.sigma_alpha, a0)
        e[:, i] = rng.standard_normal(n) * cfg.sigma_eps
    g = a + b * f[:, None] + e
    np.clip(g, -0.95, None, out=g)
    g[0] = 0.0

    listed = np.arange(n)[:, None] >= listing[None, :]
    g[~listed] = np.nan
    g[listing[listing > 0], np.flatnonzero(listing > 0)] = np.nan  # no return on listing day
    growth = np.where(np.isnan(g), 0.0, np.log1p(np.where(np.isnan(g), 0.0, g)))
    prices = 100.0 * np.exp(np.cumsum(growth, axis=0))
    prices[~listed] = np.nan

    caps = np.where(listed, prices * shares[None, :], 0.0)
    weights = caps / caps.sum(axis=1, keepdims=True)
    r_m = np.zeros(n)
    r_m[1:] = np.einsum("dk,dk->d", weights[:-1], np.nan_to_num(g[1:]))
    index_level = 100.0 * np.cumprod(1.0 + r_m)

    # coefficients relative to the index
    prev = np.vstack([np.zeros(m), weights[:-1]])
    held = prev > 0
    abar = np.einsum("dk,dk->d", prev, np.where(held, a, 0.0))
    bbar = np.einsum("dk,dk->d", prev, np.where(held, b, 0.0))
    ebar = np.einsum("dk,dk->d", prev, np.where(held, e, 0.0))
    bbar[0] = 1.0
    beta_rel = b / bbar[:, None]
    alpha_rel = a - beta_rel * abar[:, None]
    noise_rel = g - alpha_rel - beta_rel * r_m[:, None]
    for arr in (alpha_rel, beta_rel, noise_rel):
        arr[0] = np.nan
        arr[np.isnan(g)] = np.nan

    # sorted column order, as the CSV loader produces
    all_names = names + (cfg.index_id,)
    order = sorted(range(m + 1), key=all_names.__getitem__)
    all_names = tuple(all_names[k] for k in order)
    panel_values = np.column_stack([prices, index_level])[:, order]
    price_panel = PricePanel(calendar, all_names, panel_values)
    universe = UniverseCalendar(names, listed, cfg.index_id)
    panels = Panels(calendar, price_panel, universe, IndexWeightPanel(names, weights))
    truth = TruthPanel(names, alpha_rel, beta_rel, noise_rel, g, r_m)
    return panels, truth


def write_truth(path, calendar: TradingCalendar, truth: TruthPanel, horizon: int) -> None:
    """``date,instrument,horizon,alpha,beta,residual`` rows for every defined cell."""
    alpha, beta, resid = truth.horizon(horizon)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["date", "instrument", "horizon", "alpha", "beta", "residual"])
        for t, date in enumerate(calendar.dates):
            iso = date.isoformat()
            for k in np.flatnonzero(~np.isnan(beta[t])):
                out.writerow(
                    [iso, truth.instruments[k], horizon, repr(float(alpha[t, k])),
                     repr(float(beta[t, k])), repr(float(resid[t, k]))]
                )
