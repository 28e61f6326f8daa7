"""Rolling fixed-window one-step-ahead VaR/ES forecasts and their combination."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimation import McmcConfig, RecareData, TauSearchConfig, fit_bayes, fit_ml
from .expectile import expectile_to_es
from .model import FilterError, RecareParams, forecast_next, initial_expectile, run_filter

log = logging.getLogger(__name__)

COMBINATION_RULES = ("Mean", "Median", "Min", "Max")
_REDUCERS = {"Mean": np.mean, "Median": np.median, "Min": np.min, "Max": np.max}


@dataclass
class ForecastSeries:
    dates: list
    var: np.ndarray
    es: np.ndarray
    realized: np.ndarray
    model_id: str = "model"
    flags: np.ndarray | None = None  # True where parameters were carried forward
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.var = np.asarray(self.var, dtype=float)
        self.es = np.asarray(self.es, dtype=float)
        self.realized = np.asarray(self.realized, dtype=float)
        m = len(self.dates)
        if not (self.var.shape == self.es.shape == self.realized.shape == (m,)):
            raise ValueError("forecast series fields must have equal lengths")
        if self.flags is None:
            self.flags = np.zeros(m, dtype=bool)
        if np.any(self.es > self.var):
            raise ValueError(f"{self.model_id}: ES above VaR on some day")
        if np.any(self.var >= 0):
            warnings.warn(f"{self.model_id}: non-negative VaR forecasts", RuntimeWarning, stacklevel=2)

    def __len__(self):
        return len(self.dates)

    @property
    def hits(self) -> np.ndarray:
        return (self.realized < self.var).astype(np.int8)


@dataclass
class RollingConfig:
    window: int = 2000
    refit_interval: int = 1
    alpha: float = 0.01
    variant: str = "SAV"
    estimator: str = "bayes"
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    search: TauSearchConfig | None = None
    ml_grid_size: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.window < 200:
            raise ValueError("window must be at least 200")
        if self.refit_interval < 1:
            raise ValueError("refit_interval must be >= 1")
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if self.estimator not in ("bayes", "ml"):
            raise ValueError("estimator must be 'bayes' or 'ml'")
        if self.search is None:
            self.search = TauSearchConfig(alpha=self.alpha)


# fitter(r, x, previous (params or None), step index) -> RecareParams
Fitter = Callable[[np.ndarray, np.ndarray, "RecareParams | None", int], RecareParams]


def default_fitter(config: RollingConfig) -> Fitter:
    """Fitter running the configured estimator; refits warm-start from the
    previous window's estimate."""

    def fit(r, x, prev, step):
        data = RecareData(r, x, config.alpha, config.variant)
        init = prev.as_array() if prev is not None else None
        seed = np.random.SeedSequence(config.seed, spawn_key=(step,))
        if config.estimator == "bayes":
            res = fit_bayes(data, config.mcmc, config.search, seed=seed, init=init)
        else:
            grid = np.linspace(config.search.m1, config.search.m2, config.ml_grid_size)
            res = fit_ml(data, grid, seed=seed, init=init)
        return res.params

    return fit


def one_step(params: RecareParams, r, x) -> float:
    """Forecast of the next expectile after filtering the window ``(r, x)``."""
    mu0 = initial_expectile(r, params.alpha)
    out = run_filter(params, r, x, mu0)
    return float(forecast_next(params.as_array(), out.mu[-1], x[-1], params.variant == "IG"))


def rolling_forecast(
    data,
    config: RollingConfig,
    fitter: Fitter | None = None,
    params: RecareParams | None = None,
    model_id: str = "RC",
) -> ForecastSeries:
    """One-step-ahead forecasts for every day after the first ``window``.

    With ``params`` given, no estimation takes place.  Otherwise ``fitter``
    (by default the configured estimator) is called on the trailing window
    every ``refit_interval`` days; a failed fit carries the previous
    parameters forward and flags the day.
    """
    r = np.asarray(data.r, dtype=float)
    x = np.asarray(data.x, dtype=float)
    n = config.window
    total = r.shape[0]
    if total < n + 1:
        raise ValueError(f"need at least window + 1 = {n + 1} observations, got {total}")
    if fitter is None and params is None:
        fitter = default_fitter(config)
    m = total - n
    var = np.empty(m)
    flags = np.zeros(m, dtype=bool)
    taus = np.empty(m)
    current = params
    for k in range(m):
        t = n + k
        wr, wx = r[t - n : t], x[t - n : t]
        if params is None and k % config.refit_interval == 0:
            try:
                current = fitter(wr, wx, current, k)
            except (ArithmeticError, ValueError) as exc:
                if current is None:
                    raise
                log.warning("fit failed at step %d (%s); carrying parameters forward", k, exc)
                flags[k] = True
        try:
            var[k] = one_step(current, wr, wx)
        except FilterError:
            var[k] = var[k - 1] if k else np.nan
            flags[k] = True
        taus[k] = current.tau
    es = expectile_to_es(var, taus, config.alpha)
    dates = list(data.dates[n:]) if hasattr(data, "dates") else list(range(n, total))
    meta = {"window": n, "refit_interval": config.refit_interval, "alpha": config.alpha,
            "variant": config.variant, "estimator": "injected" if params is not None else config.estimator}
    return ForecastSeries(dates, var, es, r[n:], model_id, flags, meta)


def combine_forecasts(series: list, rule: str) -> ForecastSeries:
    """Day-wise combination of VaR and (separately) ES across models.

    ``Min`` is the most extreme (most negative) forecast, ``Max`` the least.
    """
    if rule not in _REDUCERS:
        raise ValueError(f"rule must be one of {COMBINATION_RULES}")
    if len(series) < 2:
        raise ValueError("need at least two forecast series")
    first = series[0]
    for s in series[1:]:
        if list(s.dates) != list(first.dates):
            raise ValueError(f"dates of {s.model_id} do not align with {first.model_id}")
        if not np.array_equal(s.realized, first.realized):
            raise ValueError(f"returns of {s.model_id} do not match {first.model_id}")
    f = _REDUCERS[rule]
    var = f(np.vstack([s.var for s in series]), axis=0)
    es = f(np.vstack([s.es for s in series]), axis=0)
    flags = np.any(np.vstack([s.flags for s in series]), axis=0)
    return ForecastSeries(list(first.dates), var, es, first.realized.copy(), f"FC-{rule}", flags,
                          {"rule": rule, "members": [s.model_id for s in series]})
