import datetime as dt

import numpy as np
import pytest

from recare.measures import IntradayDay


def make_day(closes, interval=1, date=dt.date(2020, 1, 2), prev_close=None, spread=0.002, open_=None, rng=None):
    """Bars whose closes follow ``closes``; highs/lows straddle open and close."""
    closes = np.asarray(closes, dtype=float)
    opens = np.concatenate(([closes[0] if open_ is None else open_], closes[:-1]))
    hi = np.maximum(opens, closes)
    lo = np.minimum(opens, closes)
    if rng is not None:
        hi = hi * (1 + spread * rng.random(closes.size))
        lo = lo * (1 - spread * rng.random(closes.size))
    bars = np.column_stack((opens, hi, lo, closes))
    return IntradayDay(date, interval, bars, prev_close)


def random_day(n_bars, rng, interval=1, date=dt.date(2020, 1, 2), prev_close=None):
    logp = np.log(100.0) + np.cumsum(0.001 * rng.standard_normal(n_bars + 1))
    p = np.exp(logp)
    return make_day(p[1:], interval, date, prev_close, open_=p[0], rng=rng)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
