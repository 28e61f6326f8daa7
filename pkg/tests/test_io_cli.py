import datetime as dt
import subprocess
import sys

import numpy as np
import pytest

from recare import io as rio
from recare.cli import EXIT_MISSING, EXIT_OK, EXIT_RANGE, EXIT_RUNTIME, EXIT_USAGE, main, parse_config
from recare.forecasting import ForecastSeries
from recare.measures import realized_variance, resample_bars
from recare.simulation import RgarchSimParams, simulate_rgarch

from .conftest import random_day


def write_intraday(path, days):
    lines = ["date,time,open,high,low,close"]
    for d in days:
        for k, (o, h, l, c) in enumerate(d.bars):
            minute = 9 * 60 + 30 + k * d.bar_interval_minutes
            lines.append(f"{d.date},{minute // 60:02d}:{minute % 60:02d},{float(o)!r},{float(h)!r},{float(l)!r},{float(c)!r}")
    path.write_text("\n".join(lines) + "\n")


def sim_file(tmp_path, n=400, seed=3, name="sim.csv"):
    ds = simulate_rgarch(RgarchSimParams(n=n), seed=seed)
    p = tmp_path / name
    rio.write_csv(str(p), rio.SIM_HEADER, ((t + 1, r, x) for t, (r, x) in enumerate(zip(ds.r, ds.x))))
    return p, ds


def forecast_file(tmp_path, name, shift, seed=0, m=600):
    rng = np.random.default_rng(seed)
    sigma = np.exp(0.2 * rng.standard_normal(m))
    r = sigma * np.random.default_rng(99).standard_normal(m)
    var = sigma * -2.326 + shift
    fs = ForecastSeries([f"d{i}" for i in range(m)], var, var * 1.15, r, name)
    p = tmp_path / f"{name}.csv"
    rio.write_forecasts(str(p), [fs])
    return p


# CSV helpers

def test_fmt_ten_significant_digits():
    assert rio.fmt(1 / 3) == "0.3333333333"
    assert rio.fmt(np.float64(-1234567.891234)) == "-1234567.891"
    assert rio.fmt(7) == "7" and rio.fmt(float("nan")) == "nan" and rio.fmt(True) == "1"


def test_intraday_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    days = [random_day(30, rng, date=dt.date(2021, 3, d)) for d in (1, 2)]
    p = tmp_path / "bars.csv"
    write_intraday(p, days)
    got = rio.read_intraday_csv(str(p))
    assert [d.date for d in got] == [dt.date(2021, 3, 1), dt.date(2021, 3, 2)]
    assert got[0].bar_interval_minutes == 1
    np.testing.assert_array_equal(got[1].bars, days[1].bars)
    assert got[1].prev_close == days[0].close


def test_intraday_missing_bar(tmp_path):
    rng = np.random.default_rng(1)
    p = tmp_path / "bars.csv"
    write_intraday(p, [random_day(10, rng)])
    lines = p.read_text().splitlines()
    del lines[5]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(rio.CsvFormatError, match="missing bar") as err:
        rio.read_intraday_csv(str(p))
    assert err.value.line == 6 and err.value.column == "time"


def test_malformed_price_names_file_line_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("date,time,open,high,low,close\n2020-01-02,09:30,1,1.1,0.9,1\n2020-01-02,09:31,1,abc,0.9,1\n")
    with pytest.raises(rio.CsvFormatError) as err:
        rio.read_intraday_csv(str(p))
    msg = str(err.value)
    assert str(p) in msg and "line 3" in msg and "'high'" in msg


def test_series_and_forecast_roundtrip(tmp_path):
    p, ds = sim_file(tmp_path, 50)
    s = rio.read_series_csv(str(p))
    np.testing.assert_allclose(s.r, ds.r, rtol=1e-9)
    f = forecast_file(tmp_path, "A", 0.0, m=30)
    back = rio.read_forecasts(str(f))
    assert len(back) == 1 and back[0].model_id == "A" and len(back[0]) == 30


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nalpha = 0.025\nfirst-min-iters = 50  # trailing\n\n")
    assert rio.read_config_file(str(p)) == {"alpha": "0.025", "first_min_iters": "50"}
    p.write_text("just words\n")
    with pytest.raises(rio.CsvFormatError):
        rio.read_config_file(str(p))


# exit codes

def test_no_args_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_console_script_no_args():
    proc = subprocess.run([sys.executable, "-m", "recare.cli"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE


def test_unknown_flag_and_missing_input_flag(tmp_path):
    assert main(["simulate", "--bogus"]) == EXIT_USAGE
    assert main(["fit"]) == EXIT_USAGE


def test_out_of_range_and_missing_file(tmp_path):
    assert main(["simulate", "--alpha", "0.7"]) == EXIT_RANGE
    assert main(["forecast", "--input", "x.csv", "--window", "50"]) == EXIT_RANGE
    assert main(["fit", "--input", str(tmp_path / "nope.csv")]) == EXIT_MISSING


def test_malformed_csv_is_runtime_error(tmp_path, capsys):
    p = tmp_path / "s.csv"
    p.write_text("t,r,x\n1,0.1,1.0\n2,zz,1.0\n")
    assert main(["fit", "--input", str(p), "--estimator", "ml", "--tau", "0.002"]) == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "line 3" in err and "'r'" in err


def test_config_file_keys(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n = 250\nalpha = 0.02\n")
    args, eff = parse_config(["simulate", "--config", str(cfg), "--alpha", "0.03"])
    assert args.n == 250 and args.alpha == 0.03
    cfg.write_text("nonsense = 1\n")
    assert main(["simulate", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["simulate", "--config", str(tmp_path / "none.cfg")]) == EXIT_MISSING
    cfg.write_text(f"input = {tmp_path / 'missing.csv'}\n")
    assert main(["fit", "--config", str(cfg)]) == EXIT_MISSING


# commands

def test_simulate_metadata_roundtrip(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--n", "300", "--alpha", "0.01", "--seed", "7", "-o", str(out)]) == EXIT_OK
    text = out.read_text().splitlines()
    assert "# seed: 7" in text and "# config.alpha: 0.01" in text and "# command: simulate" in text
    assert any(line.startswith("# generator: ") for line in text)
    truth = rio.read_key_values(str(tmp_path / "sim.truth.csv"))
    assert float(truth["beta2"]) == 0.75
    s = rio.read_series_csv(str(out))
    ds = simulate_rgarch(RgarchSimParams(n=300), 0.01, np.random.SeedSequence(7, spawn_key=(0,)))
    np.testing.assert_allclose(s.r, ds.r, rtol=1e-9)


def test_measures_command(tmp_path):
    rng = np.random.default_rng(4)
    days = [random_day(30, rng, date=dt.date(2021, 3, d)) for d in (1, 2, 3)]
    bars = tmp_path / "bars.csv"
    write_intraday(bars, days)
    out, series = tmp_path / "rv.csv", tmp_path / "series.csv"
    rc = main(["measures", "--input", str(bars), "--kind", "RV", "--coarse-minutes", "5",
               "-o", str(out), "--series-output", str(series)])
    assert rc == EXIT_OK
    ms = rio.read_measure_csv(str(out))
    assert ms.values[0] == pytest.approx(realized_variance(resample_bars(days[0], 5)), rel=1e-9)
    assert len(rio.read_series_csv(str(series))) == 2


def test_fit_forecast_backtest_mcs_pipeline(tmp_path, capsys):
    data, _ = sim_file(tmp_path, 260)
    fit_out = tmp_path / "fit.csv"
    assert main(["fit", "--input", str(data), "--estimator", "ml", "--ml-grid-size", "3",
                 "-o", str(fit_out)]) == EXIT_OK
    assert "beta2" in fit_out.read_text()
    small = ["--burnin", "200", "--sampling", "200", "--M1", "3", "--M2", "2", "--first-min-iters", "100",
             "--first-max-iters", "200", "--later-min-iters", "50", "--later-max-iters", "100",
             "--stall-window", "50"]
    chain = tmp_path / "chain.csv"
    assert main(["fit", "--input", str(data), "--chain", str(chain), "-o", str(tmp_path / "b.csv")] + small) == EXIT_OK
    header = [l for l in chain.read_text().splitlines() if not l.startswith("#")][0]
    assert header.startswith("iter,phase,block,accepted,beta1")
    ts = tmp_path / "ts.csv"
    assert main(["tausearch", "--input", str(data), "-o", str(ts)] + small[4:]) == EXIT_OK
    fc = tmp_path / "fc.csv"
    assert main(["forecast", "--input", str(data), "--window", "250", "--estimator", "ml",
                 "--ml-grid-size", "2", "--refit-interval", "5", "-o", str(fc)]) == EXIT_OK
    assert len(rio.read_forecasts(str(fc))[0]) == 10

    a, b = forecast_file(tmp_path, "A", 0.0), forecast_file(tmp_path, "B", 0.5)
    comb = tmp_path / "comb.csv"
    assert main(["combine", "--inputs", str(a), str(b), "--rule", "Min", "-o", str(comb)]) == EXIT_OK
    assert rio.read_forecasts(str(comb))[0].model_id == "FC-Min"
    rep = tmp_path / "bt.csv"
    assert main(["backtest", "--inputs", str(a), str(b), "--B", "100", "-o", str(rep)]) == EXIT_OK
    assert "uc_p" in rep.read_text()
    mcs = tmp_path / "mcs.csv"
    assert main(["mcs", "--inputs", str(a), str(b), "--B", "200", "-o", str(mcs)]) == EXIT_OK
    assert "statistic,model,pvalue,included" in mcs.read_text()


def test_outputs_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        p = tmp_path / f"o{k}.csv"
        assert main(["simulate", "--n", "250", "--seed", "11", "-o", str(p)]) == EXIT_OK
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
