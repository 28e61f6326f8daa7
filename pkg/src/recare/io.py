"""CSV readers/writers, run metadata headers and ``key = value`` config files.

Every file written here starts with ``#``-prefixed metadata lines and then a
fixed CSV header.  Numbers are printed with 10 significant digits and no
timestamps are recorded, so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io as _io
import math
import os
from collections import OrderedDict
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .forecasting import ForecastSeries
from .measures import DailySeries, IntradayDay, MeasureSeries
from .model import PARAM_NAMES
from .simulation import GENERATOR

INTRADAY_HEADER = ("date", "time", "open", "high", "low", "close")
MEASURE_HEADER = ("date", "value", "kind")
SERIES_HEADER = ("date", "r", "x")
SIM_HEADER = ("t", "r", "x")
FORECAST_HEADER = ("date", "model", "var", "es", "return")
CHAIN_HEADER = ("iter", "phase", "block", "accepted") + PARAM_NAMES + ("loglik",)


class CsvFormatError(ValueError):
    """Malformed CSV content, located by file, line and column."""

    def __init__(self, path, line: int, column: str | None, message: str):
        self.path, self.line, self.column = str(path), line, column
        where = f"{path}, line {line}" + (f", column '{column}'" if column else "")
        super().__init__(f"{where}: {message}")


def fmt(v) -> str:
    """Decimal rendering with 10 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.10g}"
    return str(v)


def metadata_lines(command: str, seed=None, config: dict | None = None) -> list:
    lines = [f"# recare {__version__}", f"# command: {command}", f"# generator: {GENERATOR}"]
    if seed is not None:
        lines.append(f"# seed: {seed}")
    for k in sorted(config or {}):
        lines.append(f"# config.{k}: {config[k]}")
    return lines


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], meta: Sequence[str] = ()) -> None:
    buf = _io.StringIO()
    for line in meta:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if path in (None, "-"):
        print(text, end="")
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _data_lines(path):
    """Yield ``(line_number, fields)`` for non-comment, non-blank lines."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, next(csv.reader([s]))


def _read_table(path, expected: Sequence[str] | None = None, alternatives: Sequence[Sequence[str]] = ()):
    it = _data_lines(path)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise CsvFormatError(path, 1, None, "empty file") from None
    header = [h.strip() for h in header]
    allowed = [tuple(expected)] if expected else []
    allowed += [tuple(a) for a in alternatives]
    if allowed and tuple(header) not in allowed:
        raise CsvFormatError(path, lineno, None, f"expected header {','.join(allowed[0])}, got {','.join(header)}")
    rows = []
    for ln, fields in it:
        if len(fields) != len(header):
            raise CsvFormatError(path, ln, None, f"expected {len(header)} fields, got {len(fields)}")
        rows.append((ln, [f.strip() for f in fields]))
    return header, rows


def _float(path, ln, col, text) -> float:
    try:
        v = float(text)
    except ValueError:
        raise CsvFormatError(path, ln, col, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise CsvFormatError(path, ln, col, f"non-finite value: {text!r}")
    return v


def _date(path, ln, col, text) -> _dt.date:
    try:
        return _dt.date.fromisoformat(text)
    except ValueError:
        raise CsvFormatError(path, ln, col, f"not an ISO date: {text!r}") from None


def _time(path, ln, col, text) -> int:
    """Minutes after midnight of an ``HH:MM`` or ``HH:MM:SS`` label."""
    try:
        t = _dt.time.fromisoformat(text)
    except ValueError:
        raise CsvFormatError(path, ln, col, f"not a time of day: {text!r}") from None
    if t.second:
        raise CsvFormatError(path, ln, col, "bar times must fall on whole minutes")
    return t.hour * 60 + t.minute


# ---------------------------------------------------------------------------
# intraday bars


def read_intraday_csv(path, bar_minutes: int | None = None) -> list:
    """Parse ``date,time,open,high,low,close`` rows into trading days.

    Bars must be regularly spaced within each day; a gap is reported as a
    missing bar.  The interval is inferred from the data unless given.
    """
    _, rows = _read_table(path, INTRADAY_HEADER)
    if not rows:
        raise CsvFormatError(path, 2, None, "no bars")
    grouped: "OrderedDict[_dt.date, list]" = OrderedDict()
    for ln, f in rows:
        d = _date(path, ln, "date", f[0])
        minute = _time(path, ln, "time", f[1])
        prices = [_float(path, ln, c, v) for c, v in zip(INTRADAY_HEADER[2:], f[2:])]
        if grouped and d != next(reversed(grouped)) and d in grouped:
            raise CsvFormatError(path, ln, "date", f"date {d} is not contiguous")
        if grouped and d < next(reversed(grouped)):
            raise CsvFormatError(path, ln, "date", "dates are not in ascending order")
        grouped.setdefault(d, []).append((ln, minute, prices))
    if bar_minutes is None:
        diffs = [b[1] - a[1] for bars in grouped.values() for a, b in zip(bars, bars[1:])]
        pos = [x for x in diffs if x > 0]
        bar_minutes = min(pos) if pos else 1
    days = []
    prev_close = None
    for d, bars in grouped.items():
        for (_, m0, _), (ln, m1, _) in zip(bars, bars[1:]):
            if m1 <= m0:
                raise CsvFormatError(path, ln, "time", "bar times are not increasing")
            if m1 - m0 != bar_minutes:
                raise CsvFormatError(path, ln, "time", f"missing bar: gap of {m1 - m0} minutes, expected {bar_minutes}")
        arr = np.array([b[2] for b in bars])
        try:
            day = IntradayDay(d, bar_minutes, arr, prev_close)
        except ValueError as exc:
            raise CsvFormatError(path, bars[0][0], None, str(exc)) from None
        days.append(day)
        prev_close = day.close
    return days


# ---------------------------------------------------------------------------
# measure and daily series files


def write_measure_csv(path, series: MeasureSeries, meta=()) -> None:
    rows = ((d.isoformat() if hasattr(d, "isoformat") else d, v, series.kind)
            for d, v in zip(series.dates, series.values))
    write_csv(path, MEASURE_HEADER, rows, meta)


def read_measure_csv(path) -> MeasureSeries:
    _, rows = _read_table(path, MEASURE_HEADER)
    if not rows:
        raise CsvFormatError(path, 2, None, "no rows")
    kinds = {f[2] for _, f in rows}
    if len(kinds) != 1:
        raise CsvFormatError(path, rows[0][0], "kind", "mixed measure kinds in one file")
    dates = [_date(path, ln, "date", f[0]) for ln, f in rows]
    vals = [_float(path, ln, "value", f[1]) for ln, f in rows]
    return MeasureSeries(dates, np.array(vals), kinds.pop())


def write_series_csv(path, series: DailySeries, meta=()) -> None:
    rows = ((d.isoformat() if hasattr(d, "isoformat") else d, r, x)
            for d, r, x in zip(series.dates, series.r, series.x))
    write_csv(path, SERIES_HEADER, rows, meta)


def read_series_csv(path) -> DailySeries:
    """Read ``date,r,x`` or simulator ``t,r,x`` files."""
    header, rows = _read_table(path, SERIES_HEADER, [SIM_HEADER])
    if len(rows) < 2:
        raise CsvFormatError(path, 2, None, "need at least two observations")
    if header[0] == "date":
        dates = [_date(path, ln, "date", f[0]) for ln, f in rows]
    else:
        dates = [int(_float(path, ln, "t", f[0])) for ln, f in rows]
    r = np.array([_float(path, ln, "r", f[1]) for ln, f in rows])
    x = np.array([_float(path, ln, "x", f[2]) for ln, f in rows])
    return DailySeries(dates, r, x, "input")


def write_simulation(path, ds, truth: dict, meta=()) -> str:
    """Write ``t,r,x`` plus a ``key,value`` truth sidecar; returns the sidecar path."""
    write_csv(path, SIM_HEADER, ((t + 1, r, x) for t, (r, x) in enumerate(zip(ds.r, ds.x))), meta)
    base = path[:-4] if path.endswith(".csv") else path
    side = base + ".truth.csv"
    write_csv(side, ("key", "value"), truth.items(), meta)
    return side


def read_key_values(path) -> dict:
    _, rows = _read_table(path, ("key", "value"))
    return {f[0]: f[1] for _, f in rows}


# ---------------------------------------------------------------------------
# forecasts


def _date_text(d):
    return d.isoformat() if hasattr(d, "isoformat") else d


def write_forecasts(path, series: Sequence[ForecastSeries], meta=()) -> None:
    rows = []
    for s in series:
        rows += [(_date_text(d), s.model_id, v, e, r) for d, v, e, r in zip(s.dates, s.var, s.es, s.realized)]
    write_csv(path, FORECAST_HEADER, rows, meta)


def read_forecasts(path) -> list:
    """Forecast series in file order, one per model label."""
    _, rows = _read_table(path, FORECAST_HEADER)
    by_model: "OrderedDict[str, list]" = OrderedDict()
    for ln, f in rows:
        by_model.setdefault(f[1], []).append(
            (f[0], _float(path, ln, "var", f[2]), _float(path, ln, "es", f[3]), _float(path, ln, "return", f[4]))
        )
    out = []
    for model, items in by_model.items():
        dates = [i[0] for i in items]
        out.append(ForecastSeries(dates, [i[1] for i in items], [i[2] for i in items],
                                  [i[3] for i in items], model))
    return out


# ---------------------------------------------------------------------------
# MCMC chain dump


def write_chain(path, chain, meta=()) -> None:
    """One row per block update: the state after that update."""
    phase_name = {0: "burnin", 1: "sampling"}

    def rows():
        n, nb, _ = chain.states.shape
        for i in range(n):
            for b in range(nb):
                yield (i + 1, phase_name[int(chain.phase[i])], b + 1, int(chain.accepted[i, b]),
                       *chain.states[i, b], chain.logliks[i, b])

    write_csv(path, CHAIN_HEADER, rows(), meta)


# ---------------------------------------------------------------------------
# config files


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise CsvFormatError(path, lineno, None, "expected 'key = value'")
            k, v = (p.strip() for p in s.split("=", 1))
            if not k:
                raise CsvFormatError(path, lineno, None, "empty key")
            out[k.replace("-", "_")] = v
    return out
