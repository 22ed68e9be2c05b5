"""Market data: OHLCV series, feature cubes and amplified state tensors.

Asset index 0 is always the riskless asset. It is synthesized here with a
constant close of 1 and never read from input files.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import make_rng

RISKLESS = "CASH"
FIELDS = ("open", "high", "low", "close", "volume")
CSV_HEADER = ("date", "asset", "open", "high", "low", "close", "volume")
DEFAULT_K = 100.0

# seven features per asset: own OHLC, 5/10-day moving averages, first risky close
DEFAULT_FEATURES = ("close", "open", "high", "low", "ma5", "ma10", "aux_close:1")


class DataError(ValueError):
    """Raised when market data fails validation."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PriceSeries:
    """OHLCV record for ``n`` assets over ``T`` trading days.

    ``values`` has shape ``(n, T, 5)`` with the last axis ordered as
    :data:`FIELDS`.
    """

    assets: tuple[str, ...]
    dates: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        n, T = len(self.assets), len(self.dates)
        if values.shape != (n, T, len(FIELDS)):
            raise DataError(f"values shape {values.shape} != {(n, T, len(FIELDS))}")
        if T == 0:
            raise DataError("no data")
        if list(self.dates) != sorted(set(self.dates)):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DataError("non-finite value")
        if np.any(values[:, :, 3] <= 0):
            raise DataError("non-positive close")
        if self.assets[0] != RISKLESS or np.any(values[0, :, 3] != 1.0):
            raise DataError("asset 0 must be the riskless asset with close 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def closes(self) -> np.ndarray:
        return self.values[:, :, 3]

    def field(self, name: str) -> np.ndarray:
        return self.values[:, :, FIELDS.index(name)]

    def asset_index(self, asset: str | int) -> int:
        if isinstance(asset, (int, np.integer)):
            if not 0 <= asset < self.n_assets:
                raise DataError(f"unknown asset index {asset}")
            return int(asset)
        if asset.lstrip("-").isdigit():
            return self.asset_index(int(asset))
        try:
            return self.assets.index(asset)
        except ValueError:
            raise DataError(f"unknown asset {asset!r}") from None


def _riskless_block(T: int) -> np.ndarray:
    return np.ones((T, len(FIELDS)))


def load_ohlcv(path) -> PriceSeries:
    """Read a long-format OHLCV CSV (one row per date and asset).

    The riskless asset is prepended at index 0. Every asset must have a row
    for every date; errors carry the offending 1-based data row number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("no data")
        if tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise DataError(f"header must be {','.join(CSV_HEADER)}", row=0)
        records: dict[str, dict[str, tuple[int, list[float]]]] = {}
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise DataError(f"expected {len(CSV_HEADER)} columns, got {len(row)}", row=row_no)
            date, asset = row[0].strip(), row[1].strip()
            try:
                dt.date.fromisoformat(date)
            except ValueError:
                raise DataError(f"bad date {date!r}", row=row_no) from None
            if not asset or asset == RISKLESS:
                raise DataError(f"invalid asset name {asset!r}", row=row_no)
            try:
                nums = [float(c) for c in row[2:]]
            except ValueError:
                raise DataError("non-numeric field", row=row_no) from None
            if not all(math.isfinite(x) for x in nums):
                raise DataError("non-finite field", row=row_no)
            if min(nums[:4]) <= 0:
                raise DataError("non-positive price", row=row_no)
            if nums[4] < 0:
                raise DataError("negative volume", row=row_no)
            per_asset = records.setdefault(asset, {})
            if date in per_asset:
                raise DataError(f"duplicate row for {asset} on {date}", row=row_no)
            per_asset[date] = (row_no, nums)

    if not records:
        raise DataError("no data")
    dates = sorted({d for per_asset in records.values() for d in per_asset})
    assets = list(records)
    T = len(dates)
    values = np.empty((len(assets) + 1, T, len(FIELDS)))
    values[0] = _riskless_block(T)
    for a, asset in enumerate(assets, start=1):
        per_asset = records[asset]
        missing = [d for d in dates if d not in per_asset]
        if missing:
            last_row = max(r for r, _ in per_asset.values())
            raise DataError(f"asset {asset} has no row for {missing[0]} (date gap)", row=last_row)
        values[a] = [per_asset[d][1] for d in dates]
    return PriceSeries((RISKLESS, *assets), tuple(dates), values)


def write_ohlcv(series: PriceSeries, path) -> None:
    """Write the risky assets of ``series`` in the CSV input format."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for t, date in enumerate(series.dates):
            for a in range(1, series.n_assets):
                writer.writerow([date, series.assets[a], *(repr(float(x)) for x in series.values[a, t])])


@dataclass(frozen=True)
class SyntheticSpec:
    """Per-day GBM drift and volatility for each risky asset."""

    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    days: int
    names: tuple[str, ...] = ()
    start_price: float = 1.0
    start_date: str = "2000-01-03"
    volume: float = 1.0e6

    def __post_init__(self):
        if len(self.mu) != len(self.sigma):
            raise ValueError("mu and sigma must have the same length")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma must be >= 0")
        if self.start_price <= 0:
            raise ValueError("start_price must be > 0")
        if self.names and len(self.names) != len(self.mu):
            raise ValueError("names must match mu in length")


def business_days(start: str, count: int) -> tuple[str, ...]:
    day = dt.date.fromisoformat(start)
    out = []
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += dt.timedelta(days=1)
    return tuple(out)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> PriceSeries:
    """Geometric Brownian motion closes with OHLC derived from them.

    ``close[t] = close[t-1] * exp(mu - sigma**2 / 2 + sigma * z[t])`` with
    ``z`` drawn from a Philox stream keyed by ``seed``. The open is the
    previous close, high/low bracket open and close, volume is constant.
    """
    mu = np.asarray(spec.mu, dtype=np.float64)[:, None]
    sigma = np.asarray(spec.sigma, dtype=np.float64)[:, None]
    n_risky, T = len(spec.mu), spec.days
    z = make_rng(seed).standard_normal((n_risky, max(T - 1, 0)))
    increments = mu - 0.5 * sigma**2 + sigma * z
    log_path = np.concatenate([np.zeros((n_risky, 1)), np.cumsum(increments, axis=1)], axis=1)
    close = spec.start_price * np.exp(log_path)
    opens = np.concatenate([close[:, :1], close[:, :-1]], axis=1)

    values = np.empty((n_risky + 1, T, len(FIELDS)))
    values[0] = _riskless_block(T)
    values[1:, :, 0] = opens
    values[1:, :, 1] = np.maximum(opens, close)
    values[1:, :, 2] = np.minimum(opens, close)
    values[1:, :, 3] = close
    values[1:, :, 4] = spec.volume
    names = spec.names or tuple(f"A{i}" for i in range(1, n_risky + 1))
    return PriceSeries((RISKLESS, *names), business_days(spec.start_date, T), values)


def moving_average(series: PriceSeries, asset: int | str, window: int) -> np.ndarray:
    """Trailing mean of closes; the first ``window - 1`` days use the shorter prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    close = series.closes[series.asset_index(asset)]
    return _trailing_mean(close, window)


def _trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    head = min(window - 1, len(x))
    out = np.empty(len(x))
    out[:head] = np.cumsum(x[:head]) / np.arange(1, head + 1)
    if len(x) >= window:
        out[head:] = np.lib.stride_tricks.sliding_window_view(x, window).mean(axis=1)
    return out


@dataclass(frozen=True)
class FeatureCube:
    """Feature tensor ``entries[i, t, j]`` for asset i, day t, feature j."""

    entries: np.ndarray
    feature_names: tuple[str, ...]
    dates: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 3 or entries.shape[2] != len(self.feature_names):
            raise DataError("entries must be (n, T, m) with m = len(feature_names)")
        if "close" not in self.feature_names:
            raise DataError("feature 'close' is required")
        if not np.all(np.isfinite(entries)):
            raise DataError("feature cube has non-finite entries")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n_assets(self) -> int:
        return self.entries.shape[0]

    @property
    def n_days(self) -> int:
        return self.entries.shape[1]

    @property
    def n_features(self) -> int:
        return self.entries.shape[2]

    @property
    def closes(self) -> np.ndarray:
        return self.entries[:, :, self.feature_names.index("close")]


def _feature_column(series: PriceSeries, name: str) -> np.ndarray:
    if name in FIELDS:
        return series.field(name)
    if name.startswith("ma") and name[2:].isdigit():
        window = int(name[2:])
        return np.stack([moving_average(series, a, window) for a in range(series.n_assets)])
    if name.startswith("aux_close:"):
        ref = series.asset_index(name.split(":", 1)[1])
        return np.broadcast_to(series.closes[ref], (series.n_assets, series.n_days))
    raise DataError(f"unknown feature {name!r}")


def build_feature_cube(series: PriceSeries, feature_spec: Sequence[str]) -> FeatureCube:
    """Stack the requested features into an ``(n, T, m)`` cube.

    Recognised names: ``close``, ``open``, ``high``, ``low``, ``volume``,
    ``maN`` (N-day moving average of closes) and ``aux_close:<asset>``,
    which repeats another asset's close on every asset row.
    """
    feature_spec = tuple(feature_spec)
    if "close" not in feature_spec:
        raise DataError("feature spec must include 'close'")
    columns = [_feature_column(series, name) for name in feature_spec]
    return FeatureCube(np.stack(columns, axis=-1), feature_spec, series.dates)


@dataclass(frozen=True)
class StateTensor:
    entries: np.ndarray  # (n, d, m), oldest day first
    t_end: int


def amplify_state(cube: FeatureCube, t_end: int, d: int, K: float = DEFAULT_K) -> StateTensor:
    """Day-over-day feature ratios scaled by ``K`` for the ``d`` days ending at ``t_end``.

    Days are 0-based. A day with no predecessor in the series (index 0 or
    earlier) contributes exactly ``K``.
    """
    if t_end < 0 or t_end >= cube.n_days:
        raise ValueError(f"t_end {t_end} outside [0, {cube.n_days})")
    if d < 1:
        raise ValueError("horizon d must be >= 1")
    if K <= 0:
        raise ValueError("K must be > 0")
    n, m = cube.n_assets, cube.n_features
    out = np.full((n, d, m), float(K))
    first = max(t_end - d + 1, 1)
    if first <= t_end:
        num = cube.entries[:, first : t_end + 1, :]
        den = cube.entries[:, first - 1 : t_end, :]
        if np.any(den == 0):
            raise ZeroDivisionError("zero feature value in amplification denominator")
        out[:, d - (t_end - first + 1) :, :] = K * (num / den)
    out.setflags(write=False)
    return StateTensor(out, t_end)
