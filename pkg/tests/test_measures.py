import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recare.measures import (
    FOUR_LN2,
    DailySeries,
    IntradayDay,
    MeasureError,
    MeasureSeries,
    compute_measure,
    daily_return,
    offset_grid_rr,
    offset_grid_rv,
    parkinson_range_sq,
    range_overnight,
    realized_range,
    realized_variance,
    resample_bars,
    scale_measure,
    subsample_rr,
    subsample_rv,
    to_model_input,
)

from .conftest import make_day, random_day

prices = st.floats(min_value=1e-3, max_value=1e6, allow_nan=False, allow_infinity=False)


# daily_return

def test_daily_return_identical_prices():
    assert daily_return(100, 100) == 0.0


def test_daily_return_one_percent_up():
    # [DERIVED] mpmath: 100*ln(1.01)
    assert daily_return(101, 100) == pytest.approx(0.9950330853168083, rel=1e-14)


def test_daily_return_antisymmetric():
    assert daily_return(100, 101) == pytest.approx(-daily_return(101, 100), rel=1e-15)


@pytest.mark.parametrize("a,b", [(0, 100), (100, -1), (math.nan, 1)])
def test_daily_return_rejects_bad_prices(a, b):
    with pytest.raises(MeasureError):
        daily_return(a, b)


# parkinson_range_sq

def test_parkinson_zero_range():
    assert parkinson_range_sq(50.0, 50.0) == 0.0


def test_parkinson_unit_log_range():
    # [DERIVED] mpmath: 1/(4 ln 2)
    assert parkinson_range_sq(math.e * 10, 10) == pytest.approx(0.36067376022224085, rel=1e-14)


def test_parkinson_high_below_low():
    with pytest.raises(MeasureError):
        parkinson_range_sq(9, 10)


@given(prices, st.floats(min_value=0, max_value=2), st.floats(min_value=1e-3, max_value=1e3))
def test_parkinson_scale_invariant(low, width, c):
    high = low * math.exp(width)
    assert parkinson_range_sq(c * high, c * low) == pytest.approx(parkinson_range_sq(high, low), rel=1e-9, abs=1e-15)


# range_overnight

def test_range_overnight_inactive_prev_close():
    assert range_overnight(102, 99, 100) == pytest.approx(math.log(102 / 99), rel=1e-15)


def test_range_overnight_gap_up():
    assert range_overnight(102, 99, 103) == pytest.approx(math.log(103) - math.log(99), rel=1e-15)


def test_range_overnight_example():
    # [DERIVED] mpmath: ln(105/99)
    assert range_overnight(102, 99, 105) == pytest.approx(0.05884050002293344, rel=1e-13)


def test_range_overnight_squared_variant():
    v = range_overnight(102, 99, 105, squared=True)
    assert v == pytest.approx(math.log(105 / 99) ** 2 / FOUR_LN2, rel=1e-14)


# realized_variance / realized_range

def test_rv_constant_closes():
    assert realized_variance(make_day([10.0] * 6)) == 0.0


def test_rv_two_bars():
    day = make_day([100.0, 101.0])
    assert realized_variance(day) == pytest.approx(math.log(1.01) ** 2, rel=1e-13)


def test_rv_single_bar_is_open_to_close():
    day = IntradayDay(dt.date(2020, 1, 2), 5, [[100, 103, 99, 102]])
    assert realized_variance(day) == pytest.approx(math.log(1.02) ** 2, rel=1e-13)


def test_rr_flat_bars():
    day = IntradayDay(dt.date(2020, 1, 2), 5, [[10, 10, 10, 10]] * 3)
    assert realized_range(day) == 0.0


def test_rr_single_bar_matches_parkinson():
    day = IntradayDay(dt.date(2020, 1, 2), 5, [[10, 10 * math.e, 10, 12]])
    assert realized_range(day) == pytest.approx(1 / FOUR_LN2, rel=1e-14)


def test_bar_validation():
    with pytest.raises(MeasureError):
        IntradayDay(dt.date(2020, 1, 2), 5, [[10, 9, 8, 10]])
    with pytest.raises(MeasureError):
        IntradayDay(dt.date(2020, 1, 2), 5, np.empty((0, 4)))
    with pytest.raises(MeasureError):
        IntradayDay(dt.date(2020, 1, 2), 5, [[10, 11, 0, 10]])


# scale_measure

def _series(vals, kind="RV"):
    dates = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(len(vals))]
    return MeasureSeries(dates, np.array(vals, dtype=float), kind)


def test_scale_hand_example():
    out = scale_measure(_series([1, 1, 4]), _series([2, 2, 7], "Return2"), q=2)
    assert out.values.tolist() == [8.0]
    assert out.start_index == 2


def test_scale_identity_and_constant_ratio(rng):
    hf = rng.random(80) + 0.1
    same = scale_measure(_series(hf), _series(hf, "Return2"), q=10)
    np.testing.assert_allclose(same.values, hf[10:], rtol=1e-12)
    double = scale_measure(_series(hf), _series(2 * hf, "Return2"), q=10)
    np.testing.assert_allclose(double.values, 2 * hf[10:], rtol=1e-12)


def test_scale_degenerate_and_short():
    with pytest.raises(MeasureError, match="degenerate"):
        scale_measure(_series([0, 0, 1]), _series([1, 1, 1], "Return2"), q=2)
    with pytest.raises(MeasureError):
        scale_measure(_series([1, 1]), _series([1, 1], "Return2"), q=2)


# sub-sampling

def test_subsample_single_offset_equals_plain(rng):
    day = random_day(30, rng, interval=5)
    assert subsample_rv(day, 5, 5) == realized_variance(day)
    assert subsample_rr(day, 5, 5) == pytest.approx(realized_range(day), rel=1e-12)


def test_subsample_at_coarse_equals_resampled_when_one_offset(rng):
    day = random_day(30, rng, interval=1)
    coarse = resample_bars(day, 5)
    assert offset_grid_rv(day, 5, 1)[0] == pytest.approx(realized_variance(coarse), rel=1e-12)
    assert offset_grid_rr(day, 5, 1)[0] / FOUR_LN2 == pytest.approx(realized_range(coarse), rel=1e-12)


def test_subsample_is_mean_of_offset_grids(rng):
    day = random_day(47, rng)
    assert subsample_rv(day, 5, 1) == pytest.approx(np.mean(offset_grid_rv(day, 5, 1)), rel=1e-15)
    assert subsample_rr(day, 5, 1) == pytest.approx(np.mean(offset_grid_rr(day, 5, 1)) / FOUR_LN2, rel=1e-15)


def test_subsample_constant_price():
    day = make_day([20.0] * 30)
    assert subsample_rv(day, 5, 1) == 0.0
    assert subsample_rr(day, 5, 1) == 0.0


def test_subsample_whole_day_window_is_parkinson(rng):
    day = random_day(5, rng)
    assert subsample_rr(day, 5, 1) == pytest.approx(parkinson_range_sq(day.high, day.low), rel=1e-12)


def test_subsample_bad_frequencies(rng):
    day = random_day(30, rng)
    with pytest.raises(MeasureError):
        subsample_rv(day, 7, 2)
    with pytest.raises(MeasureError):
        subsample_rv(day, 4, 3)
    with pytest.raises(MeasureError):
        subsample_rv(random_day(3, rng), 5, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=5, max_value=60), st.integers(min_value=0, max_value=10_000),
       st.floats(min_value=0.01, max_value=100))
def test_measures_nonnegative_and_rr_scale_invariant(n_bars, seed, c):
    day = random_day(n_bars, np.random.default_rng(seed))
    scaled = IntradayDay(day.date, 1, day.bars * c)
    for f in (realized_variance, realized_range):
        assert f(day) >= 0
    assert subsample_rv(day, 5, 1) >= 0
    assert subsample_rr(scaled, 5, 1) == pytest.approx(subsample_rr(day, 5, 1), rel=1e-9, abs=1e-18)
    assert realized_range(scaled) == pytest.approx(realized_range(day), rel=1e-9, abs=1e-18)


# series assembly

def _days(rng, n=5, bars=30):
    out, prev = [], None
    for k in range(n):
        d = random_day(bars, rng, date=dt.date(2020, 1, 1) + dt.timedelta(days=k), prev_close=prev)
        out.append(d)
        prev = d.close
    return out


def test_compute_measure_kinds(rng):
    days = _days(rng)
    rv = compute_measure(days, "RV", 5)
    assert len(rv) == 5 and rv.kind == "RV"
    r2 = compute_measure(days, "Return2")
    assert len(r2) == 4 and r2.start_index == 1
    rao = compute_measure(days, "RangeOvernight2")
    assert len(rao) == 4
    sub = compute_measure(days, "SubRR", 5)
    assert sub.values[0] == pytest.approx(subsample_rr(days[0], 5, 1))
    with pytest.raises(MeasureError):
        compute_measure(days, "Bogus")


def test_compute_scaled_measure(rng):
    days = _days(rng, n=12)
    out = compute_measure(days, "ScaledRV", 5, q=3)
    assert out.kind == "ScaledRV" and len(out) == 11 - 3


def test_daily_series_units(rng):
    days = _days(rng)
    s = DailySeries.from_days(days, "RV", 5)
    assert len(s) == 4
    assert s.r[0] == pytest.approx(daily_return(days[1].close, days[0].close))
    assert s.x[0] == pytest.approx(100 * math.sqrt(realized_variance(resample_bars(days[1], 5))))
    np.testing.assert_allclose(to_model_input([0.0001]), [1.0])
