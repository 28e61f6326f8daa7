"""Command-line interface.

Exit codes: 0 success, 1 runtime failure (including malformed input files),
2 usage error (unknown flag or config key), 3 out-of-range value,
4 missing input file.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import io as rio
from .estimation import (
    McmcConfig,
    RecareData,
    TauSearchConfig,
    RecareTauObjective,
    fit_bayes,
    fit_mcmc,
    fit_ml,
    full_grid_tau_search,
    ml_estimate,
    two_step_tau_search,
)
from .evaluation import backtest, fz_joint_loss, model_confidence_set
from .expectile import expectile_to_es
from .forecasting import COMBINATION_RULES, RollingConfig, combine_forecasts, rolling_forecast
from .measures import MEASURE_KINDS, DailySeries, compute_measure
from .model import PARAM_NAMES
from .simulation import RgarchSimParams, map_rgarch_to_recare, replication_seed, simulate_rgarch
from .table1 import Table1Config, reproduce_table1

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_RANGE, EXIT_MISSING = 0, 1, 2, 3, 4
THREADS_ENV = "RECARE_THREADS"
COMMANDS = ("measures", "simulate", "fit", "tausearch", "forecast", "combine", "backtest", "mcs", "reproduce-table1")
# settings that change how a run executes but not what it produces
_EXECUTION_ONLY = {"threads", "config", "command", "output", "chain", "series_output", "replications", "verbose"}


class RangeError(ValueError):
    pass


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _common(p: argparse.ArgumentParser, seed=True, alpha=True):
    p.add_argument("--config", help="flat 'key = value' file; flags override its values")
    p.add_argument("--output", "-o", default="-", help="output path ('-' for stdout)")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if alpha:
        p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--verbose", "-v", action="store_true")


def _mcmc_opts(p):
    g = p.add_argument_group("MCMC")
    g.add_argument("--burnin", type=int, default=10_000)
    g.add_argument("--sampling", type=int, default=10_000)
    g.add_argument("--adapt-interval", type=int, default=100)


def _search_opts(p):
    g = p.add_argument_group("tau search")
    g.add_argument("--M1", type=int, default=7)
    g.add_argument("--M2", type=int, default=6)
    g.add_argument("--m1", type=float, default=0.0001)
    g.add_argument("--m2", type=float, default=None, help="upper grid end (default alpha/1.5)")
    g.add_argument("--first-min-iters", type=int, default=10_000)
    g.add_argument("--first-max-iters", type=int, default=15_000)
    g.add_argument("--later-min-iters", type=int, default=2_000)
    g.add_argument("--later-max-iters", type=int, default=10_000)
    g.add_argument("--stall-window", type=int, default=1_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recare", description="Realized-CARE tail-risk toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("measures", help="daily realized measures from intraday bars")
    _common(p, seed=False, alpha=False)
    p.add_argument("--input", help="CSV date,time,open,high,low,close")
    p.add_argument("--kind", choices=MEASURE_KINDS, default="RV")
    p.add_argument("--coarse-minutes", type=int, default=None)
    p.add_argument("--q", type=int, default=66, help="scaling window in days")
    p.add_argument("--series-output", default=None, help="also write model inputs as date,r,x")

    p = sub.add_parser("simulate", help="simulate square-root Re-GARCH data")
    _common(p)
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--reps", type=int, default=1)

    p = sub.add_parser("fit", help="estimate Re-CARE on a date,r,x series")
    _common(p)
    p.add_argument("--input", help="CSV date,r,x or t,r,x")
    p.add_argument("--variant", choices=("SAV", "IG"), default="SAV")
    p.add_argument("--estimator", choices=("bayes", "ml"), default="bayes")
    p.add_argument("--tau", type=float, default=None, help="fixed expectile level (skips the search)")
    p.add_argument("--ml-grid-size", type=int, default=20)
    p.add_argument("--chain", default=None, help="write the full chain as CSV")
    _mcmc_opts(p)
    _search_opts(p)

    p = sub.add_parser("tausearch", help="expectile-level search trace")
    _common(p)
    p.add_argument("--input", help="CSV date,r,x or t,r,x")
    p.add_argument("--variant", choices=("SAV", "IG"), default="SAV")
    p.add_argument("--method", choices=("two-step", "grid"), default="two-step")
    p.add_argument("--scorer", choices=("rwm", "ml"), default="rwm")
    p.add_argument("--criterion", choices=("qloss", "vrate"), default="qloss")
    p.add_argument("--grid-size", type=int, default=20)
    _search_opts(p)

    p = sub.add_parser("forecast", help="rolling one-step-ahead VaR/ES forecasts")
    _common(p)
    p.add_argument("--input", help="CSV date,r,x or t,r,x")
    p.add_argument("--variant", choices=("SAV", "IG"), default="SAV")
    p.add_argument("--estimator", choices=("bayes", "ml"), default="bayes")
    p.add_argument("--window", type=int, default=2000)
    p.add_argument("--refit-interval", type=int, default=1)
    p.add_argument("--model-id", default=None)
    p.add_argument("--ml-grid-size", type=int, default=20)
    _mcmc_opts(p)
    _search_opts(p)

    p = sub.add_parser("combine", help="combine forecast files day by day")
    _common(p, seed=False, alpha=False)
    p.add_argument("--inputs", nargs="+", help="forecast CSV files")
    p.add_argument("--rule", choices=COMBINATION_RULES, default="Mean")

    p = sub.add_parser("backtest", help="VaR/ES backtests for forecast files")
    _common(p)
    p.add_argument("--inputs", nargs="+", help="forecast CSV files")
    p.add_argument("--B", type=int, default=1000, help="ES t-test bootstrap resamples")

    p = sub.add_parser("mcs", help="model confidence set on FZ losses")
    _common(p)
    p.add_argument("--inputs", nargs="+", help="forecast CSV files")
    p.add_argument("--confidence", type=float, default=0.9)
    p.add_argument("--statistic", choices=("R", "SQ", "both"), default="both")
    p.add_argument("--B", type=int, default=5000)
    p.add_argument("--block-length", type=int, default=None)

    p = sub.add_parser("reproduce-table1", help="simulation study of the two estimators")
    _common(p)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--no-ml", action="store_true")
    p.add_argument("--ml-grid-size", type=int, default=20)
    p.add_argument("--replications", default=None, help="also write per-replication estimates")
    _mcmc_opts(p)
    _search_opts(p)
    p.set_defaults(seed=42)
    return parser


_LIST_KEYS = {"inputs"}
_BOOL_KEYS = {"no_ml", "verbose"}


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_config(argv):
    """Parse flags, merge an optional config file underneath them and validate.

    Returns ``(namespace, effective_config)``; raises ``SystemExit`` with the
    documented exit codes on usage errors.
    """
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)
    if args.config:
        try:
            values = rio.read_config_file(args.config)
        except FileNotFoundError as exc:
            print(f"recare: {exc}", file=sys.stderr)
            raise SystemExit(EXIT_MISSING) from None
        except ValueError as exc:
            print(f"recare: {exc}", file=sys.stderr)
            raise SystemExit(EXIT_USAGE) from None
        known = vars(args)
        defaults = {}
        for k, v in values.items():
            if k not in known or k in ("command", "config"):
                print(f"recare: unknown config key '{k}' in {args.config}", file=sys.stderr)
                raise SystemExit(EXIT_USAGE)
            if k in _LIST_KEYS:
                defaults[k] = v.replace(",", " ").split()
            elif k in _BOOL_KEYS:
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[k] = v
        _subparser(parser, args.command).set_defaults(**defaults)
        args = parser.parse_args(argv)
    for key in ("input", "inputs"):
        if hasattr(args, key) and not getattr(args, key):
            print(f"recare {args.command}: --{key} is required", file=sys.stderr)
            raise SystemExit(EXIT_USAGE)
    try:
        _validate(args)
    except RangeError as exc:
        print(f"recare: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_RANGE) from None
    for path in _input_paths(args):
        if not os.path.exists(path):
            print(f"recare: input file not found: {path}", file=sys.stderr)
            raise SystemExit(EXIT_MISSING)
    effective = {k: _show(v) for k, v in vars(args).items() if k not in _EXECUTION_ONLY and v is not None}
    return args, effective


def _show(v):
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return v


def _input_paths(args):
    if getattr(args, "input", None):
        yield args.input
    for p in getattr(args, "inputs", None) or ():
        yield p


def _check(cond, msg):
    if not cond:
        raise RangeError(msg)


def _validate(a):
    alpha = getattr(a, "alpha", None)
    if alpha is not None:
        _check(0 < alpha < 0.5, f"--alpha must lie in (0, 0.5), got {alpha}")
    _check(a.threads >= 1, "--threads must be >= 1")
    positive = ("n", "reps", "burnin", "adapt_interval", "window", "refit_interval", "B", "q",
                "coarse_minutes", "grid_size", "ml_grid_size", "first_min_iters", "later_min_iters",
                "stall_window", "block_length")
    for k in positive:
        v = getattr(a, k, None)
        if v is not None:
            _check(v >= 1, f"--{k.replace('_', '-')} must be >= 1, got {v}")
    if getattr(a, "sampling", None) is not None:
        _check(a.sampling >= 1, "--sampling must be >= 1")
    if getattr(a, "window", None) is not None:
        _check(a.window >= 200, "--window must be >= 200")
    if getattr(a, "command", None) == "reproduce-table1":
        _check(a.n >= 200, "--n must be >= 200")
    if getattr(a, "confidence", None) is not None:
        _check(0 < a.confidence < 1, "--confidence must lie in (0, 1)")
    if getattr(a, "tau", None) is not None:
        _check(0 < a.tau < alpha, "--tau must lie in (0, alpha)")
    if hasattr(a, "M1"):
        try:
            _search_config(a)
            if hasattr(a, "burnin"):
                _mcmc_config(a)
        except ValueError as exc:
            raise RangeError(str(exc)) from None


def _mcmc_config(a) -> McmcConfig:
    return McmcConfig(burnin_iters=a.burnin, sampling_iters=a.sampling, seed=a.seed,
                      adapt_interval=a.adapt_interval)


def _search_config(a) -> TauSearchConfig:
    return TauSearchConfig(alpha=a.alpha, M1=a.M1, m1=a.m1, m2=a.m2, M2=a.M2,
                           first_min_iters=a.first_min_iters, first_max_iters=a.first_max_iters,
                           later_min_iters=a.later_min_iters, later_max_iters=a.later_max_iters,
                           stall_window=a.stall_window)


# ---------------------------------------------------------------------------
# commands


def cmd_measures(a, meta):
    days = rio.read_intraday_csv(a.input)
    series = compute_measure(days, a.kind, a.coarse_minutes, a.q)
    rio.write_measure_csv(a.output, series, meta)
    if a.series_output:
        rio.write_series_csv(a.series_output, DailySeries.from_days(days, a.kind, a.coarse_minutes, a.q), meta)


def cmd_simulate(a, meta):
    truth = map_rgarch_to_recare(alpha=a.alpha)
    sim = RgarchSimParams(n=a.n)
    for i in range(a.reps):
        ds = simulate_rgarch(sim, a.alpha, replication_seed(a.seed, i))
        record = {name: getattr(truth, name) for name in PARAM_NAMES}
        record.update(tau=truth.tau, sqrt_h_next=ds.sqrt_h_next, var_next=ds.var_next,
                      es_next=ds.es_next, redraws=ds.redraws, replication=i)
        path = a.output
        if a.output == "-":
            rio.write_csv("-", rio.SIM_HEADER, ((t + 1, r, x) for t, (r, x) in enumerate(zip(ds.r, ds.x))), meta)
            continue
        if a.reps > 1:
            base = path[:-4] if path.endswith(".csv") else path
            path = f"{base}_{i:04d}.csv"
        rio.write_simulation(path, ds, record, meta + [f"# replication: {i}"])


def _data(a):
    s = rio.read_series_csv(a.input)
    return RecareData(s.r, s.x, a.alpha, a.variant), s


def cmd_fit(a, meta):
    data, _ = _data(a)
    mcmc, search = _mcmc_config(a), _search_config(a)
    summary = {}
    chain = None
    if a.estimator == "bayes":
        if a.tau is None:
            fit = fit_bayes(data, mcmc, search, seed=a.seed)
        else:
            fit = fit_mcmc(data, a.tau, mcmc, seed=a.seed)
        chain = fit.chain
        summary.update(fit.summary())
        for k, name in enumerate(PARAM_NAMES):
            summary[f"{name}_maxlik"] = float(fit.ml_draw[k])
    else:
        if a.tau is None:
            grid = np.linspace(search.m1, search.m2, a.ml_grid_size)
            fit = fit_ml(data, grid, seed=a.seed)
            summary.update(fit.summary())
            summary["converged"] = int(fit.converged)
        else:
            tgt = data.target(a.tau)
            res = ml_estimate(tgt.loglik, data.default_init(), np.random.default_rng(a.seed),
                              support=data.support, bounds=data.bounds())
            var_next = tgt.forecast(res.theta)
            summary = {"tau": a.tau, "var_next": var_next,
                       "es_next": float(expectile_to_es(var_next, a.tau, a.alpha))}
            summary.update({n: float(v) for n, v in zip(PARAM_NAMES, res.theta)})
            summary["loglik"] = res.loglik
            summary["converged"] = int(res.converged)
    rio.write_csv(a.output, ("key", "value"), summary.items(), meta)
    if a.chain and chain is not None:
        rio.write_chain(a.chain, chain, meta)


def cmd_tausearch(a, meta):
    data, _ = _data(a)
    search = _search_config(a)
    if a.method == "two-step":
        if a.scorer != "rwm" or a.criterion != "qloss":
            raise ValueError("the two-step search uses the RW-M scorer with the quantile-loss criterion")
        res = two_step_tau_search(RecareTauObjective(data, search, a.seed), search)
    else:
        grid = np.linspace(search.m1, search.m2, a.grid_size)
        res = full_grid_tau_search(data, grid, a.scorer, a.criterion, search, seed=a.seed)
    rows = [(p.tau, p.loss, p.iterations, int(p.ok), int(p is res.point)) for p in res.trace]
    rio.write_csv(a.output, ("tau", "loss", "iterations", "ok", "selected"), rows, meta)


def cmd_forecast(a, meta):
    s = rio.read_series_csv(a.input)
    cfg = RollingConfig(window=a.window, refit_interval=a.refit_interval, alpha=a.alpha, variant=a.variant,
                        estimator=a.estimator, mcmc=_mcmc_config(a), search=_search_config(a),
                        ml_grid_size=a.ml_grid_size, seed=a.seed)
    model_id = a.model_id or f"RC-{a.variant}"
    fc = rolling_forecast(s, cfg, model_id=model_id)
    extra = [f"# carried_forward_days: {int(fc.flags.sum())}"]
    rio.write_forecasts(a.output, [fc], meta + extra)


def _load_forecasts(paths):
    out = []
    for p in paths:
        out += rio.read_forecasts(p)
    names = [s.model_id for s in out]
    if len(set(names)) != len(names):
        raise ValueError("duplicate model labels across forecast files")
    return out


def cmd_combine(a, meta):
    series = _load_forecasts(a.inputs)
    rio.write_forecasts(a.output, [combine_forecasts(series, a.rule)], meta)


def cmd_backtest(a, meta):
    series = _load_forecasts(a.inputs)
    records = []
    for k, s in enumerate(series):
        rep = backtest(s, a.alpha, a.B, np.random.default_rng(np.random.SeedSequence(a.seed, spawn_key=(k,))))
        records.append(rep.record())
    header = tuple(records[0].keys())
    rio.write_csv(a.output, header, ([r[h] for h in header] for r in records), meta)
    if a.output != "-":
        _print_table(records)


def _print_table(records):
    cols = ("model", "m", "vrate", "uc_p", "cc_p", "dq1_p", "dq4_p", "vqr_p", "es_ttest_p", "fz_mean")
    print("  ".join(f"{c:>10}" for c in cols))
    for r in records:
        cells = []
        for c in cols:
            v = r[c]
            if c == "vrate":
                cell = f"{100 * v:.3f}%" + ("*" if r["uc_significant"] else "")
            elif isinstance(v, float):
                cell = f"{v:.4f}"
            else:
                cell = str(v)
            cells.append(f"{cell:>10}")
        print("  ".join(cells))
    print("* VRate significantly different from alpha by the UC test at the 5% level")


def cmd_mcs(a, meta):
    series = _load_forecasts(a.inputs)
    if len(series) < 2:
        raise ValueError("the MCS needs at least two models")
    first = series[0]
    for s in series[1:]:
        if list(s.dates) != list(first.dates):
            raise ValueError(f"dates of {s.model_id} do not align with {first.model_id}")
    L = np.column_stack([fz_joint_loss(s.realized, s.var, s.es, a.alpha)[1] for s in series])
    names = [s.model_id for s in series]
    kinds = ("R", "SQ") if a.statistic == "both" else (a.statistic,)
    rows = []
    for k, kind in enumerate(kinds):
        rng = np.random.default_rng(np.random.SeedSequence(a.seed, spawn_key=(k,)))
        res = model_confidence_set(L, a.confidence, kind, a.B, a.block_length, rng, names)
        order = {m: i + 1 for i, m in enumerate(res.eliminated)}
        for m in names:
            rows.append((kind, m, res.pvalues[m], int(m in res.included), order.get(m, 0)))
    rio.write_csv(a.output, ("statistic", "model", "pvalue", "included", "elimination_order"), rows, meta)


def cmd_reproduce_table1(a, meta):
    cfg = Table1Config(reps=a.reps, n=a.n, alpha=a.alpha, seed=a.seed, mcmc=_mcmc_config(a),
                       search=_search_config(a), ml=not a.no_ml, ml_grid_size=a.ml_grid_size)
    rep = reproduce_table1(cfg, a.threads)
    extra = [f"# replications_ok_rwm: {rep.n_ok_rwm}", f"# replications_ok_ml: {rep.n_ok_ml}",
             f"# replications_failed_rwm: {rep.n_failed_rwm}", f"# replications_failed_ml: {rep.n_failed_ml}"]
    rio.write_csv(a.output, ("parameter", "true", "rwm_mean", "rwm_rmse", "ml_mean", "ml_rmse"), rep.rows, meta + extra)
    if a.replications:
        names = [f"{e}_{n}" for e in ("rwm", "ml") for n in PARAM_NAMES + ("tau", "var", "es")]
        rows = []
        for r in rep.replications:
            vals = list(r.rwm if r.rwm is not None else [math.nan] * 11)
            vals += list(r.ml if r.ml is not None else [math.nan] * 11)
            rows.append([r.index, r.true_var, r.true_es, int(r.ml_converged)] + vals)
        rio.write_csv(a.replications, ["replication", "true_var", "true_es", "ml_converged"] + names, rows, meta)


HANDLERS = {
    "measures": cmd_measures,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "tausearch": cmd_tausearch,
    "forecast": cmd_forecast,
    "combine": cmd_combine,
    "backtest": cmd_backtest,
    "mcs": cmd_mcs,
    "reproduce-table1": cmd_reproduce_table1,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, effective = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    meta = rio.metadata_lines(args.command, getattr(args, "seed", None),
                              {k: v for k, v in effective.items() if k != "seed"})
    try:
        HANDLERS[args.command](args, meta)
    except FileNotFoundError as exc:
        print(f"recare: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, ArithmeticError, OverflowError) as exc:
        print(f"recare: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
