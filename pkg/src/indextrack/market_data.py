"""Price and index-weight panels, the trading calendar and horizon returns.

Panels are dense ``(n_steps, n_instruments)`` arrays aligned to a
:class:`TradingCalendar`. Absent prices are ``NaN`` and absent weights are
``0``; nothing is ever imputed.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import MissingDataError, PanelFormatError, PanelValidationError

WEIGHT_SUM_TOLERANCE = 1e-6
WEIGHT_ROUNDOFF = 1e-12


@dataclass(frozen=True, eq=False)
class TradingCalendar:
    """Ordered trading dates; step ``t`` is the position of a date."""

    dates: tuple[dt.date, ...]

    def __post_init__(self):
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise PanelValidationError(f"calendar not strictly increasing at {b}")
        object.__setattr__(self, "_steps", {d: k for k, d in enumerate(self.dates)})

    def __len__(self) -> int:
        return len(self.dates)

    def date(self, step: int) -> dt.date:
        if step < 0:
            raise IndexError(step)
        return self.dates[step]

    def step(self, date: dt.date | str) -> int:
        if isinstance(date, str):
            date = dt.date.fromisoformat(date)
        try:
            return self._steps[date]
        except KeyError:
            raise KeyError(f"{date} is not a trading date") from None


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Close prices; ``values[t, k]`` is the price of ``instruments[k]`` at step ``t``."""

    calendar: TradingCalendar
    instruments: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.calendar), len(self.instruments)):
            raise PanelValidationError(
                f"price array shape {values.shape} does not match calendar/instruments"
            )
        present = ~np.isnan(values)
        bad = present & ~(values > 0)
        if bad.any():
            t, k = np.argwhere(bad)[0]
            raise PanelValidationError(
                f"non-positive price {values[t, k]!r} for {self.instruments[k]} "
                f"on {self.calendar.date(t)}"
            )
        for k, name in enumerate(self.instruments):
            idx = np.flatnonzero(present[:, k])
            if idx.size and idx[-1] - idx[0] + 1 != idx.size:
                raise PanelValidationError(f"price series of {name} has gaps")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_cols", {n: k for k, n in enumerate(self.instruments)})

    def column(self, instrument: str) -> int:
        try:
            return self._cols[instrument]
        except KeyError:
            raise KeyError(f"unknown instrument {instrument!r}") from None

    def series(self, instrument: str) -> np.ndarray:
        return self.values[:, self.column(instrument)]

    def price(self, instrument: str, step: int) -> float:
        return float(self.values[step, self.column(instrument)])


@dataclass(frozen=True, eq=False)
class UniverseCalendar:
    """Per-step index membership ``S_t`` and the id of the market index."""

    instruments: tuple[str, ...]
    members: np.ndarray
    index_id: str

    def members_at(self, step: int) -> list[str]:
        return [self.instruments[k] for k in np.flatnonzero(self.members[step])]


@dataclass(frozen=True, eq=False)
class IndexWeightPanel:
    """Index weights ``w^m_{i,t}``; zero outside the universe."""

    instruments: tuple[str, ...]
    values: np.ndarray

    def at(self, step: int) -> dict[str, float]:
        row = self.values[step]
        return {self.instruments[k]: float(row[k]) for k in np.flatnonzero(row > 0)}


class Panels(NamedTuple):
    calendar: TradingCalendar
    prices: PricePanel
    universe: UniverseCalendar
    weights: IndexWeightPanel

    @property
    def index_id(self) -> str:
        return self.universe.index_id

    @property
    def constituents(self) -> tuple[str, ...]:
        return self.universe.instruments

    def constituent_prices(self) -> np.ndarray:
        """Prices of the constituents in ``universe.instruments`` column order."""
        cols = [self.prices.column(n) for n in self.universe.instruments]
        return self.prices.values[:, cols]

    def index_prices(self) -> np.ndarray:
        return self.prices.series(self.index_id)


def horizon_return(prices: PricePanel, instrument: str, t: int, horizon: int) -> float:
    """Return of ``instrument`` from step ``t`` to ``t + horizon``: ``p_{t+T} / p_t - 1``."""
    k = prices.column(instrument)
    n = len(prices.calendar)
    start = prices.values[t, k] if 0 <= t < n else np.nan
    end = prices.values[t + horizon, k] if 0 <= t + horizon < n else np.nan
    if np.isnan(start):
        raise MissingDataError(instrument, t, "start")
    if np.isnan(end):
        raise MissingDataError(instrument, t + horizon, "end")
    return float(end / start - 1.0)


def horizon_returns(values: np.ndarray, horizon: int) -> np.ndarray:
    """Vectorised horizon returns: ``out[t] = values[t + horizon] / values[t] - 1``.

    Rows whose end point falls off the panel, or where either price is absent,
    are ``NaN``. Works on 1-d series and 2-d panels alike.
    """
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if horizon < values.shape[0]:
        out[:-horizon] = values[horizon:] / values[:-horizon] - 1.0
    return out


class ReturnPanel:
    """Horizon returns over a :class:`PricePanel`, cached per horizon."""

    def __init__(self, prices: PricePanel):
        self.prices = prices
        self._cache: dict[int, np.ndarray] = {}

    def array(self, horizon: int) -> np.ndarray:
        if horizon not in self._cache:
            self._cache[horizon] = horizon_returns(self.prices.values, horizon)
        return self._cache[horizon]

    def get(self, instrument: str, t: int, horizon: int) -> float:
        """Return ``r_{i,t:t+T}``; raises :class:`MissingDataError` if absent."""
        return horizon_return(self.prices, instrument, t, horizon)

    def series(self, instrument: str, horizon: int) -> np.ndarray:
        return self.array(horizon)[:, self.prices.column(instrument)]


# --------------------------------------------------------------------------
# CSV IO


def _read_rows(path: Path, header: Sequence[str]):
    """Yield ``(lineno, date, instrument, values)`` for a ``date,instrument,...`` file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise PanelFormatError(path, 1, "empty file") from None
        if [c.strip() for c in first] != list(header):
            raise PanelFormatError(path, 1, f"expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelFormatError(path, lineno, f"expected {len(header)} fields")
            date_s, name, *value_s = (c.strip() for c in row)
            try:
                date = dt.date.fromisoformat(date_s)
            except ValueError:
                raise PanelFormatError(path, lineno, f"bad date {date_s!r}") from None
            if not name:
                raise PanelFormatError(path, lineno, "empty instrument id")
            values = []
            for v in value_s:
                try:
                    x = float(v)
                except ValueError:
                    raise PanelFormatError(path, lineno, f"bad number {v!r}") from None
                if not np.isfinite(x):
                    raise PanelFormatError(path, lineno, f"non-finite value {v!r}")
                values.append(x)
            yield lineno, date, name, tuple(values)


def read_long_csv(path, header: Sequence[str]):
    """Parse a ``date,instrument,<value>...`` file into ``(dates, names, table)``.

    ``table`` maps ``(date, instrument)`` to the value, or to a tuple of
    values when the header has more than one value column. Duplicate keys
    are a format error.
    """
    path = Path(path)
    table: dict = {}
    single = len(header) == 3
    for lineno, date, name, values in _read_rows(path, header):
        if (date, name) in table:
            raise PanelFormatError(path, lineno, f"duplicate row for {name} on {date}")
        table[(date, name)] = values[0] if single else values
    dates = sorted({d for d, _ in table})
    names = sorted({n for _, n in table})
    return dates, names, table


def load_panels(prices_path, weights_path, index_id: str) -> Panels:
    """Load and validate ``prices.csv`` and ``weights.csv``.

    The index level series lives in ``prices.csv`` under ``index_id``. The
    weights file is authoritative for universe membership and must cover the
    same dates as the prices file. Weight rows summing to 1 within ``1e-6``
    are accepted; rows off by more than summation round-off (``1e-12``) are
    rescaled to sum to 1.
    """
    p_dates, p_names, p_table = read_long_csv(prices_path, ("date", "instrument", "close"))
    w_dates, w_names, w_table = read_long_csv(weights_path, ("date", "instrument", "weight"))

    if p_dates != w_dates:
        only_p = sorted(set(p_dates) - set(w_dates))
        only_w = sorted(set(w_dates) - set(p_dates))
        raise PanelValidationError(
            f"price and weight dates differ: {len(only_p)} only in prices "
            f"(first {only_p[:1]}), {len(only_w)} only in weights (first {only_w[:1]})"
        )
    if index_id not in p_names:
        raise PanelValidationError(f"index {index_id!r} has no price series")
    if index_id in w_names:
        raise PanelValidationError(f"index {index_id!r} must not carry index weights")

    calendar = TradingCalendar(tuple(p_dates))
    steps = {d: k for k, d in enumerate(p_dates)}
    instruments = tuple(p_names)
    cols = {n: k for k, n in enumerate(instruments)}

    for (date, name), value in p_table.items():
        if value <= 0:
            raise PanelValidationError(f"non-positive price {value!r} for {name} on {date}")
    values = np.full((len(calendar), len(instruments)), np.nan)
    for (date, name), value in p_table.items():
        values[steps[date], cols[name]] = value
    prices = PricePanel(calendar, instruments, values)

    constituents = tuple(n for n in w_names)
    missing = [n for n in constituents if n not in cols]
    if missing:
        raise PanelValidationError(f"constituents without prices: {missing[:5]}")
    wcols = {n: k for k, n in enumerate(constituents)}
    weights = np.zeros((len(calendar), len(constituents)))
    for (date, name), value in w_table.items():
        if value < 0:
            raise PanelValidationError(f"negative weight for {name} on {date}")
        weights[steps[date], wcols[name]] = value
    sums = weights.sum(axis=1)
    for t in np.flatnonzero(np.abs(sums - 1.0) > WEIGHT_SUM_TOLERANCE):
        raise PanelValidationError(
            f"index weights on {calendar.date(t)} sum to {sums[t]!r}, not 1"
        )
    # rows off by more than summation round-off are rescaled; others are kept
    # verbatim so that a write/load round trip reproduces the panel bitwise
    off = np.abs(sums - 1.0) > WEIGHT_ROUNDOFF
    weights[off] /= sums[off, None]
    members = weights > 0

    pcols = [cols[n] for n in constituents]
    no_price = members & np.isnan(values[:, pcols])
    if no_price.any():
        t, k = np.argwhere(no_price)[0]
        raise PanelValidationError(
            f"{constituents[k]} is an index member on {calendar.date(t)} without a price"
        )
    if np.isnan(values[:, cols[index_id]]).any():
        raise PanelValidationError(f"index {index_id!r} price series has gaps")

    universe = UniverseCalendar(constituents, members, index_id)
    return Panels(calendar, prices, universe, IndexWeightPanel(constituents, weights))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_prices(path, prices: PricePanel) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["date", "instrument", "close"])
        for t, date in enumerate(prices.calendar.dates):
            iso = date.isoformat()
            row = prices.values[t]
            for k, name in enumerate(prices.instruments):
                if not np.isnan(row[k]):
                    out.writerow([iso, name, _fmt(row[k])])


def write_weights(path, calendar: TradingCalendar, weights: IndexWeightPanel) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["date", "instrument", "weight"])
        for t, date in enumerate(calendar.dates):
            iso = date.isoformat()
            row = weights.values[t]
            for k in np.flatnonzero(row > 0):
                out.writerow([iso, weights.instruments[k], _fmt(row[k])])


def write_panels(directory, panels: Panels) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p, w = directory / "prices.csv", directory / "weights.csv"
    write_prices(p, panels.prices)
    write_weights(w, panels.calendar, panels.weights)
    return p, w


def read_weight_rows(path) -> dict[dt.date, dict[str, float]]:
    """Read a ``date,instrument,weight`` file (e.g. constructed portfolios)."""
    _, _, table = read_long_csv(path, ("date", "instrument", "weight"))
    out: dict[dt.date, dict[str, float]] = {}
    for (date, name), value in table.items():
        out.setdefault(date, {})[name] = value
    return out
