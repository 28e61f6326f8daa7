"""Simulation study: fit Re-CARE-SAV to square-root Re-GARCH replications
with the Bayesian and ML estimators and summarize bias and RMSE."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimation import McmcConfig, RecareData, TauSearchConfig, fit_bayes, fit_ml
from .model import PARAM_NAMES
from .simulation import RgarchSimParams, map_rgarch_to_recare, replication_seed, simulate_rgarch

log = logging.getLogger(__name__)

ROWS = PARAM_NAMES + ("tau", "VaR", "ES")


@dataclass
class Table1Config:
    reps: int = 100
    n: int = 3000
    alpha: float = 0.01
    seed: int = 42
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    search: TauSearchConfig | None = None
    ml: bool = True
    ml_grid_size: int = 20
    ml_starts: int = 5

    def __post_init__(self):
        if self.reps < 1 or self.n < 200:
            raise ValueError("need reps >= 1 and n >= 200")
        if self.search is None:
            self.search = TauSearchConfig(alpha=self.alpha)


@dataclass
class Replication:
    index: int
    true_var: float
    true_es: float
    rwm: np.ndarray | None  # 8 params, tau, VaR, ES
    ml: np.ndarray | None
    ml_converged: bool = False
    error: str = ""


def _row(fit) -> np.ndarray:
    return np.concatenate((fit.params.as_array(), [fit.tau, fit.var_next, fit.es_next]))


def run_replication(index: int, cfg: Table1Config) -> Replication:
    sim = RgarchSimParams(n=cfg.n)
    ds = simulate_rgarch(sim, cfg.alpha, replication_seed(cfg.seed, index))
    data = RecareData(ds.r, ds.x, cfg.alpha, "SAV")
    rwm = ml = None
    errors = []
    converged = False
    try:
        rwm = _row(fit_bayes(data, cfg.mcmc, cfg.search, seed=np.random.SeedSequence(cfg.seed, spawn_key=(index, 1))))
    except (ArithmeticError, ValueError) as exc:
        errors.append(f"rwm: {exc}")
    if cfg.ml:
        try:
            grid = np.linspace(cfg.search.m1, cfg.search.m2, cfg.ml_grid_size)
            fit = fit_ml(data, grid, seed=np.random.SeedSequence(cfg.seed, spawn_key=(index, 2)),
                         n_starts=cfg.ml_starts)
            ml, converged = _row(fit), fit.converged
        except (ArithmeticError, ValueError) as exc:
            errors.append(f"ml: {exc}")
    return Replication(index, ds.var_next, ds.es_next, rwm, ml, converged, "; ".join(errors))


def _run_one(args):
    return run_replication(*args)


def run_replications(cfg: Table1Config, threads: int = 1) -> list:
    """All replications in index order; results do not depend on ``threads``."""
    jobs = [(i, cfg) for i in range(cfg.reps)]
    if threads <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_one, jobs))


@dataclass
class Table1Report:
    rows: list  # (name, true, rwm_mean, rwm_rmse, ml_mean, ml_rmse)
    n_ok_rwm: int
    n_ok_ml: int
    n_failed_rwm: int
    n_failed_ml: int
    replications: list

    def as_dict(self) -> dict:
        return {r[0]: r[1:] for r in self.rows}


def summarize(reps: list, alpha: float = 0.01, with_ml: bool = True) -> Table1Report:
    truth = map_rgarch_to_recare(alpha=alpha)
    fixed = np.concatenate((truth.as_array(), [truth.tau]))
    tv = np.array([r.true_var for r in reps])
    te = np.array([r.true_es for r in reps])

    def stats(key):
        ok = [r for r in reps if getattr(r, key) is not None]
        if not ok:
            return np.full(11, math.nan), np.full(11, math.nan), 0
        est = np.array([getattr(r, key) for r in ok])
        true_each = np.column_stack((np.tile(fixed, (len(ok), 1)),
                                     [r.true_var for r in ok], [r.true_es for r in ok]))
        return est.mean(axis=0), np.sqrt(np.mean((est - true_each) ** 2, axis=0)), len(ok)

    rm, rr, nr = stats("rwm")
    mm, mr, nm = stats("ml") if with_ml else (np.full(11, math.nan), np.full(11, math.nan), 0)
    true_col = np.concatenate((fixed, [tv.mean(), te.mean()]))
    rows = [(name, true_col[k], rm[k], rr[k], mm[k], mr[k]) for k, name in enumerate(ROWS)]
    return Table1Report(rows, nr, nm, len(reps) - nr, (len(reps) - nm) if with_ml else 0, reps)


def reproduce_table1(cfg: Table1Config, threads: int = 1) -> Table1Report:
    reps = run_replications(cfg, threads)
    for r in reps:
        if r.error:
            log.warning("replication %d: %s", r.index, r.error)
    return summarize(reps, cfg.alpha, cfg.ml)
