"""Daily volatility measures built from intraday OHLC bars.

All kernels work on raw log prices, so variance-type outputs are in squared
log-return units.  The model consumes volatility-scale inputs; use
:func:`to_model_input` to convert a variance series into percentage units
(``100 * sqrt(v)``) when assembling a :class:`DailySeries`.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FOUR_LN2 = 4.0 * math.log(2.0)

MEASURE_KINDS = (
    "Return2",
    "Range2",
    "RangeOvernight2",
    "RV",
    "RR",
    "ScaledRV",
    "ScaledRR",
    "SubRV",
    "SubRR",
)


class MeasureError(ValueError):
    """Invalid price input or an undefined measure."""


@dataclass(frozen=True)
class IntradayDay:
    """One trading day of regularly spaced OHLC bars.

    ``bars`` is an ``(N, 4)`` array with columns open, high, low, close.
    ``prev_close`` is the previous session's close, or ``None`` for the first
    day of a file (overnight measures are then undefined).
    """

    date: _dt.date
    bar_interval_minutes: int
    bars: np.ndarray
    prev_close: float | None = None

    def __post_init__(self):
        bars = np.asarray(self.bars, dtype=float)
        if bars.ndim != 2 or bars.shape[1] != 4:
            raise MeasureError(f"{self.date}: bars must have shape (N, 4)")
        if bars.shape[0] < 1:
            raise MeasureError(f"{self.date}: empty bar list")
        if self.bar_interval_minutes < 1:
            raise MeasureError(f"{self.date}: bar interval must be positive")
        if not np.all(np.isfinite(bars)) or np.any(bars <= 0):
            raise MeasureError(f"{self.date}: prices must be finite and > 0")
        o, h, l, c = bars.T
        if np.any(l > np.minimum(o, c)) or np.any(h < np.maximum(o, c)):
            raise MeasureError(f"{self.date}: bar violates low <= open/close <= high")
        if self.prev_close is not None and not self.prev_close > 0:
            raise MeasureError(f"{self.date}: previous close must be > 0")
        bars.setflags(write=False)
        object.__setattr__(self, "bars", bars)

    @property
    def n_bars(self) -> int:
        return self.bars.shape[0]

    @property
    def open(self) -> float:
        return float(self.bars[0, 0])

    @property
    def high(self) -> float:
        return float(self.bars[:, 1].max())

    @property
    def low(self) -> float:
        return float(self.bars[:, 2].min())

    @property
    def close(self) -> float:
        return float(self.bars[-1, 3])

    def price_path(self) -> np.ndarray:
        """Sampled prices ``P_0..P_N``: the first open followed by each bar close."""
        return np.concatenate(([self.bars[0, 0]], self.bars[:, 3]))


@dataclass
class MeasureSeries:
    """A daily measure; ``start_index`` counts days dropped for lack of history."""

    dates: list
    values: np.ndarray
    kind: str
    start_index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.dates) != self.values.shape[0]:
            raise MeasureError("dates and values differ in length")
        if self.kind not in MEASURE_KINDS:
            raise MeasureError(f"unknown measure kind {self.kind!r}")

    def __len__(self):
        return self.values.shape[0]


def _positive(*prices):
    for p in prices:
        if not (p > 0 and math.isfinite(p)):
            raise MeasureError(f"price must be finite and > 0, got {p!r}")


def daily_return(close_t: float, close_prev: float) -> float:
    """Percentage log-return ``100 * (ln close_t - ln close_prev)``."""
    _positive(close_t, close_prev)
    return 100.0 * (math.log(close_t) - math.log(close_prev))


def parkinson_range_sq(high: float, low: float) -> float:
    """Squared log range scaled by ``1 / (4 ln 2)``."""
    _positive(high, low)
    if high < low:
        raise MeasureError(f"high {high} below low {low}")
    return (math.log(high) - math.log(low)) ** 2 / FOUR_LN2


def range_overnight(high: float, low: float, prev_close: float, squared: bool = False) -> float:
    """Log range widened to include the previous close.

    With ``squared=True`` the result is squared and divided by ``4 ln 2``.
    """
    _positive(high, low, prev_close)
    if high < low:
        raise MeasureError(f"high {high} below low {low}")
    rao = math.log(max(high, prev_close)) - math.log(min(low, prev_close))
    return rao * rao / FOUR_LN2 if squared else rao


def realized_variance(day: IntradayDay) -> float:
    """Sum of squared intraday log-returns, anchored at the first bar's open."""
    return float(np.sum(np.diff(np.log(day.price_path())) ** 2))


def realized_range(day: IntradayDay) -> float:
    """Sum of squared per-bar log ranges over ``4 ln 2``."""
    bars = day.bars
    return float(np.sum((np.log(bars[:, 1]) - np.log(bars[:, 2])) ** 2) / FOUR_LN2)


def _offsets(day: IntradayDay, coarse_minutes: int, fine_minutes: int) -> int:
    if fine_minutes != day.bar_interval_minutes:
        raise MeasureError(
            f"{day.date}: fine frequency {fine_minutes} min does not match "
            f"bar interval {day.bar_interval_minutes} min"
        )
    if coarse_minutes < fine_minutes or coarse_minutes % fine_minutes:
        raise MeasureError(
            f"coarse interval {coarse_minutes} not a multiple of fine interval {fine_minutes}"
        )
    nk = coarse_minutes // fine_minutes
    if day.n_bars < nk:
        raise MeasureError(
            f"{day.date}: {day.n_bars} bars cannot fill one {coarse_minutes}-min window"
        )
    return nk


def _window_starts(n_bars: int, offset: int, nk: int) -> range:
    # complete windows only: start + nk <= n_bars
    return range(offset, n_bars - nk + 1, nk)


def offset_grid_rv(day: IntradayDay, coarse_minutes: int, fine_minutes: int) -> np.ndarray:
    """Coarse-grid RV for each fine offset that has at least one complete window."""
    nk = _offsets(day, coarse_minutes, fine_minutes)
    logp = np.log(day.price_path())
    out = []
    for i in range(nk):
        pts = logp[i::nk]
        if pts.shape[0] < 2:
            continue
        out.append(float(np.sum(np.diff(pts) ** 2)))
    return np.array(out)


def offset_grid_rr(day: IntradayDay, coarse_minutes: int, fine_minutes: int) -> np.ndarray:
    """Unnormalized coarse-grid sum of squared log ranges, per fine offset.

    Window high/low are the max/min of the fine bars' highs/lows inside it.
    """
    nk = _offsets(day, coarse_minutes, fine_minutes)
    logh = np.log(day.bars[:, 1])
    logl = np.log(day.bars[:, 2])
    out = []
    for i in range(nk):
        starts = _window_starts(day.n_bars, i, nk)
        if len(starts) == 0:
            continue
        total = 0.0
        for a in starts:
            total += (logh[a : a + nk].max() - logl[a : a + nk].min()) ** 2
        out.append(total)
    return np.array(out)


def subsample_rv(day: IntradayDay, coarse_minutes: int, fine_minutes: int) -> float:
    """Coarse-frequency RV averaged over all fine-grid starting offsets.

    Offsets whose grid holds no complete coarse window are left out of the
    average; trailing partial windows are dropped.
    """
    return float(np.mean(offset_grid_rv(day, coarse_minutes, fine_minutes)))


def subsample_rr(day: IntradayDay, coarse_minutes: int, fine_minutes: int) -> float:
    """Coarse-frequency realized range averaged over fine-grid offsets."""
    rr = offset_grid_rr(day, coarse_minutes, fine_minutes)
    return float(np.sum(rr) / (FOUR_LN2 * rr.shape[0]))


def resample_bars(day: IntradayDay, minutes: int) -> IntradayDay:
    """Aggregate bars to a coarser interval; a trailing partial bar is dropped."""
    nk = _offsets(day, minutes, day.bar_interval_minutes)
    if nk == 1:
        return day
    m = day.n_bars // nk
    b = day.bars[: m * nk].reshape(m, nk, 4)
    coarse = np.column_stack(
        (b[:, 0, 0], b[:, :, 1].max(axis=1), b[:, :, 2].min(axis=1), b[:, -1, 3])
    )
    return IntradayDay(day.date, minutes, coarse, day.prev_close)


def scale_measure(hf: MeasureSeries, daily: MeasureSeries, q: int = 66, kind: str | None = None) -> MeasureSeries:
    """Rescale a high-frequency measure by the trailing ``q``-day ratio
    ``sum(daily) / sum(hf)``.

    The first ``q`` days have no full history and are dropped; the returned
    series records this in ``start_index``.
    """
    if q < 1:
        raise MeasureError("scaling window q must be >= 1")
    if list(hf.dates) != list(daily.dates):
        raise MeasureError("high-frequency and daily series are not aligned")
    n = len(hf)
    if n <= q:
        raise MeasureError(f"need more than q={q} days to scale, got {n}")
    h = hf.values
    d = daily.values
    ch = np.concatenate(([0.0], np.cumsum(h)))
    cd = np.concatenate(([0.0], np.cumsum(d)))
    t = np.arange(q, n)
    hsum = ch[t] - ch[t - q]
    dsum = cd[t] - cd[t - q]
    if np.any(hsum <= 0):
        bad = hf.dates[int(t[np.argmax(hsum <= 0)])]
        raise MeasureError(f"zero trailing high-frequency sum before {bad}: degenerate scale")
    if kind is None:
        kind = {"RV": "ScaledRV", "RR": "ScaledRR"}.get(hf.kind, hf.kind)
    return MeasureSeries(
        dates=list(hf.dates[q:]),
        values=dsum / hsum * h[q:],
        kind=kind,
        start_index=hf.start_index + q,
        meta={"q": q},
    )


def compute_measure(
    days: Sequence[IntradayDay],
    kind: str,
    coarse_minutes: int | None = None,
    q: int = 66,
) -> MeasureSeries:
    """Build a daily series of ``kind`` from consecutive trading days.

    ``coarse_minutes`` sets the sampling interval of the high-frequency kinds
    (defaults to the bar interval).  Kinds needing the previous close skip the
    first day when it has none.
    """
    if kind not in MEASURE_KINDS:
        raise MeasureError(f"unknown measure kind {kind!r}")
    if not days:
        raise MeasureError("no trading days")
    fine = days[0].bar_interval_minutes
    coarse = coarse_minutes or fine
    meta = {"coarse_minutes": coarse, "fine_minutes": fine}

    if kind in ("ScaledRV", "ScaledRR"):
        base, ref = ("RV", "Return2") if kind == "ScaledRV" else ("RR", "Range2")
        hf = compute_measure(days, base, coarse)
        daily = compute_measure(days, ref, coarse)
        common = set(hf.dates) & set(daily.dates)
        hf = _restrict(hf, common)
        daily = _restrict(daily, common)
        out = scale_measure(hf, daily, q, kind)
        out.meta.update(meta)
        return out

    dates, vals = [], []
    start = 0
    for k, day in enumerate(days):
        if kind == "Return2":
            if day.prev_close is None:
                start = k + 1
                continue
            v = (math.log(day.close) - math.log(day.prev_close)) ** 2
        elif kind == "Range2":
            v = parkinson_range_sq(day.high, day.low)
        elif kind == "RangeOvernight2":
            if day.prev_close is None:
                start = k + 1
                continue
            v = range_overnight(day.high, day.low, day.prev_close, squared=True)
        elif kind == "RV":
            v = realized_variance(resample_bars(day, coarse))
        elif kind == "RR":
            v = realized_range(resample_bars(day, coarse))
        elif kind == "SubRV":
            v = subsample_rv(day, coarse, fine)
        else:
            v = subsample_rr(day, coarse, fine)
        dates.append(day.date)
        vals.append(v)
    return MeasureSeries(dates, np.array(vals), kind, start_index=start, meta=meta)


def _restrict(series: MeasureSeries, keep: set) -> MeasureSeries:
    mask = np.array([d in keep for d in series.dates])
    return MeasureSeries(
        [d for d in series.dates if d in keep],
        series.values[mask],
        series.kind,
        series.start_index + int(np.argmax(mask)),
        dict(series.meta),
    )


def daily_returns(days: Sequence[IntradayDay]) -> tuple[list, np.ndarray]:
    """Percentage close-to-close returns for every day with a previous close."""
    dates, r = [], []
    for day in days:
        if day.prev_close is None:
            continue
        dates.append(day.date)
        r.append(daily_return(day.close, day.prev_close))
    return dates, np.array(r)


def to_model_input(values: np.ndarray) -> np.ndarray:
    """Variance-scale measure (log units) to percentage volatility units."""
    return 100.0 * np.sqrt(np.asarray(values, dtype=float))


@dataclass
class DailySeries:
    """Aligned percentage returns and model-input measure ``x_t``."""

    dates: list
    r: np.ndarray
    x: np.ndarray
    measure_kind: str = "RV"

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if not (len(self.dates) == self.r.shape[0] == self.x.shape[0]):
            raise MeasureError("returns and measure are not aligned")

    def __len__(self):
        return self.r.shape[0]

    @classmethod
    def from_days(cls, days: Sequence[IntradayDay], kind: str, coarse_minutes=None, q=66):
        measure = compute_measure(days, kind, coarse_minutes, q)
        rdates, r = daily_returns(days)
        rmap = dict(zip(rdates, r))
        keep = [i for i, d in enumerate(measure.dates) if d in rmap]
        dates = [measure.dates[i] for i in keep]
        return cls(
            dates,
            np.array([rmap[d] for d in dates]),
            to_model_input(measure.values[keep]),
            kind,
        )
