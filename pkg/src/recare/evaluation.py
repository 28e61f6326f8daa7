"""VaR/ES backtests, the joint FZ scoring rule and the model confidence set."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import linprog
from scipy.special import xlogy

UC_SIGNIFICANCE = 0.05


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float
    df: int = 1
    note: str = ""

    @property
    def applicable(self) -> bool:
        return not math.isnan(self.pvalue)


def _hits(hits) -> np.ndarray:
    h = np.asarray(hits)
    if h.ndim != 1:
        raise ValueError("hits must be one-dimensional")
    return h.astype(float)


def hit_sequence(returns, var) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    v = np.asarray(var, dtype=float)
    if r.shape != v.shape:
        raise ValueError("returns and VaR are not aligned")
    return (r < v).astype(np.int8)


def vrate(forecasts, var=None) -> float:
    """Share of days with ``r_t < VaR_t``.

    Accepts a forecast series or a ``(returns, var)`` pair.
    """
    if var is None:
        r, var = forecasts.realized, forecasts.var
    else:
        r = forecasts
    h = hit_sequence(r, var)
    if h.size == 0:
        raise ValueError("empty forecast series")
    return float(h.mean())


def _bernoulli_ll(x, m, p) -> float:
    return float(xlogy(x, p) + xlogy(m - x, 1.0 - p))


def kupiec_uc(hits, alpha: float) -> TestResult:
    """Kupiec unconditional-coverage likelihood ratio, chi-square(1)."""
    h = _hits(hits)
    m = h.shape[0]
    if m < 1:
        raise ValueError("need at least one observation")
    x = float(h.sum())
    lr = -2.0 * (_bernoulli_ll(x, m, alpha) - _bernoulli_ll(x, m, x / m))
    lr = max(lr, 0.0)
    return TestResult(lr, float(stats.chi2.sf(lr, 1)), 1)


def christoffersen_ind(hits) -> float:
    """Likelihood ratio for first-order Markov dependence of the hits."""
    h = _hits(hits).astype(int)
    prev, cur = h[:-1], h[1:]
    n00 = float(np.sum((prev == 0) & (cur == 0)))
    n01 = float(np.sum((prev == 0) & (cur == 1)))
    n10 = float(np.sum((prev == 1) & (cur == 0)))
    n11 = float(np.sum((prev == 1) & (cur == 1)))
    p01 = n01 / (n00 + n01) if n00 + n01 > 0 else 0.0
    p11 = n11 / (n10 + n11) if n10 + n11 > 0 else 0.0
    p = (n01 + n11) / (n00 + n01 + n10 + n11)
    ll0 = xlogy(n00 + n10, 1 - p) + xlogy(n01 + n11, p)
    ll1 = xlogy(n00, 1 - p01) + xlogy(n01, p01) + xlogy(n10, 1 - p11) + xlogy(n11, p11)
    return max(float(-2.0 * (ll0 - ll1)), 0.0)


def christoffersen_cc(hits, alpha: float) -> TestResult:
    """Conditional coverage: UC plus the Markov independence ratio, chi-square(2)."""
    h = _hits(hits)
    if h.shape[0] < 2:
        raise ValueError("need at least two observations")
    lr = kupiec_uc(h, alpha).statistic + christoffersen_ind(h)
    return TestResult(lr, float(stats.chi2.sf(lr, 2)), 2)


def _dq_stat(h, v, alpha, lags):
    y = h[lags:] - alpha
    m = h.shape[0]
    cols = [np.ones(m - lags)] + [h[lags - k : m - k] - alpha for k in range(1, lags + 1)] + [v[lags:]]
    X = np.column_stack(cols)
    xtx = X.T @ X
    ridge = np.linalg.matrix_rank(xtx) < xtx.shape[0]
    if ridge:
        xtx = xtx + 1e-10 * np.eye(xtx.shape[0])
    xty = X.T @ y
    beta = np.linalg.solve(xtx, xty)
    return float(beta @ (X.T @ X) @ beta / (alpha * (1 - alpha))), ridge


def monte_carlo_pvalue(observed: float, simulated: np.ndarray, rng) -> float:
    """Dufour Monte Carlo p-value with randomized tie-breaking."""
    S = simulated.shape[0]
    u = rng.random(S + 1)
    ge = np.sum((simulated > observed) | ((simulated == observed) & (u[:S] >= u[S])))
    return float((ge + 1) / (S + 1))


def dq_test(hits, var, alpha: float, lags: int = 4, pvalue: str = "mc", n_sim: int = 1000,
            rng=None) -> TestResult:
    """Dynamic quantile test on a constant, ``lags`` lagged hits and VaR_t.

    The statistic is the Wald form with a chi-square(lags + 2) limit.  With
    rare hits that limit over-rejects, so by default the p-value is a Monte
    Carlo one: the statistic is recomputed for ``n_sim`` i.i.d.
    Bernoulli(alpha) hit sequences on the same VaR path.
    ``pvalue='chi2'`` gives the asymptotic p-value.
    """
    h = _hits(hits)
    v = np.asarray(var, dtype=float)
    m = h.shape[0]
    if v.shape != h.shape:
        raise ValueError("hits and VaR are not aligned")
    if m <= lags + 2:
        raise ValueError("too few observations for the requested lags")
    if pvalue not in ("mc", "chi2"):
        raise ValueError("pvalue must be 'mc' or 'chi2'")
    stat, ridge = _dq_stat(h, v, alpha, lags)
    note = "ridge" if ridge else ""
    if ridge:
        warnings.warn("singular DQ regressor matrix; adding a 1e-10 ridge", RuntimeWarning, stacklevel=2)
    df = lags + 2
    if pvalue == "chi2":
        return TestResult(stat, float(stats.chi2.sf(stat, df)), df, note)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sims = rng.random((n_sim, m)) < alpha
    sim_stats = np.array([_dq_stat(row.astype(float), v, alpha, lags)[0] for row in sims])
    return TestResult(stat, monte_carlo_pvalue(stat, sim_stats, rng), df, note)


def quantile_regression(y, X, q: float) -> np.ndarray:
    """Linear quantile regression by linear programming."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    m, k = X.shape
    c = np.concatenate((np.zeros(k), np.full(m, q), np.full(m, 1 - q)))
    eye = np.eye(m)
    A = np.hstack((X, eye, -eye))
    bounds = [(None, None)] * k + [(0, None)] * (2 * m)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise ArithmeticError(f"quantile regression failed: {res.message}")
    return res.x[:k]


def _hall_sheather(m: int, q: float, level: float = 0.05) -> float:
    z = stats.norm.ppf(1 - level / 2)
    x = stats.norm.ppf(q)
    h = m ** (-1 / 3) * z ** (2 / 3) * (1.5 * stats.norm.pdf(x) ** 2 / (2 * x * x + 1)) ** (1 / 3)
    return min(h, 0.99 * min(q, 1 - q))


def quantile_regression_cov(y, X, beta, q: float) -> np.ndarray:
    """Sandwich covariance with a Gaussian-kernel sparsity estimate."""
    m = X.shape[0]
    e = y - X @ beta
    hn = _hall_sheather(m, q)
    iqr = np.subtract(*np.percentile(e, [75, 25]))
    kappa = min(np.std(e, ddof=1), iqr / 1.34) if iqr > 0 else np.std(e, ddof=1)
    h = kappa * (stats.norm.ppf(q + hn) - stats.norm.ppf(q - hn))
    if not h > 0:
        raise ArithmeticError("degenerate residuals in quantile regression")
    f = stats.norm.pdf(e / h) / h
    H = (X * f[:, None]).T @ X / m
    J = X.T @ X / m
    Hinv = np.linalg.inv(H)
    return q * (1 - q) * Hinv @ J @ Hinv / m


def vqr_test(returns, var, alpha: float, method: str = "score") -> TestResult:
    """Test of (intercept, slope) = (0, 1) in the alpha-quantile regression
    of returns on VaR; intercept-only when VaR is constant.

    ``method='score'`` (default) is the score form: under the null the
    quantile-regression subgradient at (0, 1) has covariance
    ``alpha (1 - alpha) X'X``, which needs no sparsity estimate.
    ``method='wald'`` fits the regression and uses the kernel sandwich
    covariance; it over-rejects when exceedances are few.
    Both have a chi-square reference.
    """
    r = np.asarray(returns, dtype=float)
    v = np.asarray(var, dtype=float)
    if r.shape != v.shape:
        raise ValueError("returns and VaR are not aligned")
    if r.shape[0] < 50:
        raise ValueError("VQR needs at least 50 observations")
    if method not in ("score", "wald"):
        raise ValueError("method must be 'score' or 'wald'")
    if np.ptp(v) == 0:
        X = np.ones((r.shape[0], 1))
        y = r - v
        target = np.zeros(1)
        note = "constant VaR: intercept-only"
    else:
        X = np.column_stack((np.ones_like(v), v))
        y = r
        target = np.array([0.0, 1.0])
        note = ""
    df = X.shape[1]
    if method == "score":
        u = y - X @ target
        s = X.T @ (alpha - (u < 0))
        stat = float(s @ np.linalg.solve(alpha * (1 - alpha) * (X.T @ X), s))
    else:
        beta = quantile_regression(y, X, alpha)
        cov = quantile_regression_cov(y, X, beta, alpha)
        d = beta - target
        stat = float(d @ np.linalg.solve(cov, d))
    return TestResult(stat, float(stats.chi2.sf(stat, df)), df, note)


def es_bootstrap_ttest(returns, var, es, B: int = 1000, rng=None) -> TestResult:
    """Two-sided bootstrap t-test that ES residuals on violation days have mean zero.

    Fewer than two violations leaves the test undefined (``pvalue`` NaN).
    """
    r = np.asarray(returns, dtype=float)
    hit = r < np.asarray(var, dtype=float)
    d = (r - np.asarray(es, dtype=float))[hit]
    k = d.shape[0]
    if k < 2:
        return TestResult(math.nan, math.nan, 0, "not applicable: fewer than two violations")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mean, sd = d.mean(), d.std(ddof=1)
    scale = max(1.0, float(np.max(np.abs(d))))
    if sd <= 1e-12 * scale:
        return TestResult(0.0 if mean == 0 else math.inf, 1.0 if mean == 0 else 0.0, 0, "zero variance")
    t_obs = mean / (sd / math.sqrt(k))
    centred = d - mean
    idx = rng.integers(0, k, size=(B, k))
    sample = centred[idx]
    sd_b = sample.std(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_b = np.where(sd_b > 0, sample.mean(axis=1) / (sd_b / math.sqrt(k)), 0.0)
    p = float(np.mean(np.abs(t_b) >= abs(t_obs)))
    return TestResult(float(t_obs), p, 0)


def fz_joint_loss(returns, var, es, alpha: float) -> tuple[float, np.ndarray]:
    """Joint VaR/ES scoring rule with ``G1(x) = x`` and ``G2 = exp``."""
    r = np.asarray(returns, dtype=float)
    v = np.asarray(var, dtype=float)
    e = np.asarray(es, dtype=float)
    if not (r.shape == v.shape == e.shape):
        raise ValueError("returns, VaR and ES are not aligned")
    hit = (r < v).astype(float)
    try:
        with np.errstate(over="raise"):
            g = np.exp(e)
    except FloatingPointError as exc:
        raise OverflowError("exp(ES) overflows: malformed ES forecasts") from exc
    s = (hit - alpha) * v - hit * r + g * (e - v + hit / alpha * (v - r)) - g + 1.0 - math.log(1.0 - alpha)
    return float(np.sum(s)), s


@dataclass
class BacktestReport:
    model_id: str
    m: int
    n_violations: int
    vrate: float
    uc: TestResult
    cc: TestResult
    dq1: TestResult
    dq4: TestResult
    vqr: TestResult
    es_ttest: TestResult
    fz_mean: float
    alpha: float = 0.01

    @property
    def uc_significant(self) -> bool:
        return self.uc.pvalue < UC_SIGNIFICANCE

    def record(self) -> dict:
        out = {"model": self.model_id, "m": self.m, "n_violations": self.n_violations,
               "vrate": self.vrate, "uc_significant": int(self.uc_significant)}
        for name in ("uc", "cc", "dq1", "dq4", "vqr", "es_ttest"):
            t = getattr(self, name)
            out[f"{name}_stat"] = t.statistic
            out[f"{name}_p"] = t.pvalue
        out["fz_mean"] = self.fz_mean
        return out


def _safe(test, *args, **kw) -> TestResult:
    try:
        return test(*args, **kw)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return TestResult(math.nan, math.nan, 0, f"not applicable: {exc}")


def backtest(forecasts, alpha: float = 0.01, B: int = 1000, rng=None) -> BacktestReport:
    """Every backtest on one forecast series."""
    r, v, e = forecasts.realized, forecasts.var, forecasts.es
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    h = hit_sequence(r, v)
    m = h.shape[0]
    return BacktestReport(
        model_id=forecasts.model_id, m=m, n_violations=int(h.sum()), vrate=float(h.mean()),
        uc=kupiec_uc(h, alpha), cc=_safe(christoffersen_cc, h, alpha),
        dq1=_safe(dq_test, h, v, alpha, 1, rng=rng), dq4=_safe(dq_test, h, v, alpha, 4, rng=rng),
        vqr=_safe(vqr_test, r, v, alpha), es_ttest=es_bootstrap_ttest(r, v, e, B, rng),
        fz_mean=fz_joint_loss(r, v, e, alpha)[0] / m, alpha=alpha,
    )


# ---------------------------------------------------------------------------
# model confidence set


@dataclass
class McsResult:
    models: list
    included: list
    pvalues: dict
    eliminated: list
    statistic: str
    confidence: float
    B: int
    block_length: int
    seed: object = None
    meta: dict = field(default_factory=dict)

    def at(self, confidence: float) -> list:
        """Survivors at another confidence level from the same bootstrap."""
        return [mdl for mdl in self.models if self.pvalues[mdl] >= 1.0 - confidence]


def stationary_bootstrap_indices(m: int, B: int, block_length: float, rng) -> np.ndarray:
    """Politis-Romano resampling indices with geometric block lengths."""
    p = 1.0 / block_length
    idx = np.empty((B, m), dtype=np.int64)
    idx[:, 0] = rng.integers(0, m, B)
    new = rng.random((B, m)) < p
    jumps = rng.integers(0, m, (B, m))
    for t in range(1, m):
        idx[:, t] = np.where(new[:, t], jumps[:, t], (idx[:, t - 1] + 1) % m)
    return idx


def _studentize(num, var):
    scale = 1e-24 * (1.0 + num * num)
    zero = var <= scale
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(zero, np.where(num == 0, 0.0, np.sign(num) * np.inf), num / np.sqrt(np.where(zero, 1, var)))
    return t, zero


def model_confidence_set(
    losses,
    confidence: float = 0.9,
    statistic: str = "R",
    B: int = 5000,
    block_length: int | None = None,
    rng=None,
    models: list | None = None,
) -> McsResult:
    """Model confidence set by sequential elimination on loss differentials.

    ``losses`` is ``(m days, M models)``.  Bootstrap means come from one set
    of stationary-bootstrap resamples reused at every elimination step.  The
    ``R`` rule eliminates the model with the largest pairwise t statistic;
    ``SQ`` eliminates the model with the largest t statistic against the
    average of the current set.  MCS p-values are running maxima of the
    equivalence-test p-values.
    """
    L = np.asarray(losses, dtype=float)
    if L.ndim != 2 or L.shape[1] < 2:
        raise ValueError("need a (days, models) loss matrix with at least two models")
    if statistic not in ("R", "SQ"):
        raise ValueError("statistic must be 'R' or 'SQ'")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    m, M = L.shape
    names = list(models) if models is not None else [f"model{j}" for j in range(M)]
    if len(names) != M:
        raise ValueError("model labels do not match the loss matrix")
    block_length = block_length or int(math.ceil(m ** (1 / 3)))
    seed = rng
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    idx = stationary_bootstrap_indices(m, B, block_length, rng)
    means = L.mean(axis=0)
    boot = np.empty((B, M))
    for j in range(M):
        boot[:, j] = L[:, j][idx].mean(axis=1)
    dev = boot - means  # centred bootstrap means

    alive = list(range(M))
    pvals: dict = {}
    eliminated = []
    running = 0.0
    while len(alive) > 1:
        a = np.array(alive)
        if statistic == "R":
            d = means[a][:, None] - means[a][None, :]
            dd = dev[:, a][:, :, None] - dev[:, a][:, None, :]
            var = np.mean(dd * dd, axis=0)
            t, zero = _studentize(d, var)
            with np.errstate(divide="ignore", invalid="ignore"):
                tb = np.where(zero, 0.0, dd / np.sqrt(np.where(zero, 1, var)))
            stat = np.max(np.abs(t))
            boot_stat = np.max(np.abs(tb).reshape(B, -1), axis=1)
            worst = int(np.argmax(np.max(t, axis=1)))
        else:
            d = means[a][:, None] - means[a][None, :]
            dd = dev[:, a][:, :, None] - dev[:, a][:, None, :]
            var = np.mean(dd * dd, axis=0)
            t, zero = _studentize(d, var)
            with np.errstate(divide="ignore", invalid="ignore"):
                tb = np.where(zero, 0.0, dd / np.sqrt(np.where(zero, 1, var)))
            iu = np.triu_indices(len(alive), 1)
            stat = float(np.sum(t[iu] ** 2))
            boot_stat = np.sum(tb[:, iu[0], iu[1]] ** 2, axis=1)
            di = means[a] - means[a].mean()
            ddi = dev[:, a] - dev[:, a].mean(axis=1, keepdims=True)
            ti, _ = _studentize(di, np.mean(ddi * ddi, axis=0))
            worst = int(np.argmax(ti))
        p = 1.0 if stat == 0 else float(np.mean(boot_stat >= stat))
        running = max(running, p)
        out = alive.pop(worst)
        pvals[names[out]] = running
        eliminated.append(names[out])
    pvals[names[alive[0]]] = 1.0
    included = [names[j] for j in range(M) if pvals[names[j]] >= 1.0 - confidence]
    return McsResult(names, included, pvals, eliminated, statistic, confidence, B, block_length,
                     seed if isinstance(seed, int) else None)
