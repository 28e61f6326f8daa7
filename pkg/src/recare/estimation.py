"""Adaptive two-block MCMC, maximum likelihood and expectile-level search.

The samplers are generic: a *target* is any callable mapping a parameter
vector to ``(loglik, score)``, where ``score`` is an auxiliary criterion
(the in-sample quantile loss for Re-CARE targets) that is tracked but does
not drive the chain.  A *support* callable encodes the flat prior.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .expectile import expectile_to_es, violation_rate
from .model import (
    BLOCK1,
    BLOCK2,
    PARAM_NAMES,
    RecareParams,
    Variant,
    default_init,
    forecast_next,
    in_support,
    initial_expectile,
    loglik_kernel,
    run_filter,
)

log = logging.getLogger(__name__)

ADAPT_STEP = 0.05
SHAPE_ADAPT_AFTER = 5  # windows before the empirical covariance takes over
RIDGE = 1e-8
FAIL_PENALTY = 1e10

Target = Callable[[np.ndarray], "tuple[float, float]"]
Support = Callable[[np.ndarray], bool]


def _always(theta) -> bool:
    return True


def derive_rng(seed, *key) -> np.random.Generator:
    """Generator for sub-task ``key`` of a run seeded with ``seed``.

    ``seed`` may be an int or a SeedSequence; the key is appended to its
    spawn key so sibling tasks never share a stream regardless of the order
    (or process) they run in.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    else:
        ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# configuration and chain containers


@dataclass
class McmcConfig:
    burnin_iters: int = 10_000
    sampling_iters: int = 10_000
    target_accept: float = 0.234
    blocks: tuple = (BLOCK1, BLOCK2)
    seed: int = 0
    adapt_interval: int = 100

    def __post_init__(self):
        if self.burnin_iters < 1 or self.sampling_iters < 0:
            raise ValueError("iteration counts must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be >= 1")
        flat = sorted(i for b in self.blocks for i in b)
        if flat != list(range(len(flat))):
            raise ValueError("blocks must partition the parameter vector")


@dataclass
class TauSearchConfig:
    alpha: float = 0.01
    M1: int = 7
    m1: float = 0.0001
    m2: float | None = None
    M2: int = 6
    first_min_iters: int = 10_000
    first_max_iters: int = 15_000
    later_min_iters: int = 2_000
    later_max_iters: int = 10_000
    stall_window: int = 1_000

    def __post_init__(self):
        if self.m2 is None:
            self.m2 = self.alpha / 1.5
        if not 0 < self.m1 < self.m2 < self.alpha:
            raise ValueError("need 0 < m1 < m2 < alpha")
        if self.M1 < 3:
            raise ValueError("M1 must be at least 3")
        if self.M2 < 2 or self.M2 % 2:
            raise ValueError("M2 must be a positive even number")
        if not (self.first_min_iters <= self.first_max_iters and self.later_min_iters <= self.later_max_iters):
            raise ValueError("min iterations exceed max iterations")

    def step1_grid(self) -> np.ndarray:
        return np.linspace(self.m1, self.m2, self.M1)


@dataclass
class Proposal:
    """Random-walk proposal for one block: covariance ``scale^2 * shape``."""

    scale: float
    shape: np.ndarray

    def chol(self) -> np.ndarray:
        return self.scale * _safe_cholesky(self.shape)

    def copy(self) -> "Proposal":
        return Proposal(self.scale, self.shape.copy())


@dataclass
class McmcChain:
    """Draws recorded after every block update.

    ``states[i, b]`` is the parameter vector after block ``b`` of iteration
    ``i``; ``draws`` is the end-of-iteration state.
    """

    states: np.ndarray
    logliks: np.ndarray
    accepted: np.ndarray
    phase: np.ndarray  # 0 burn-in, 1 sampling
    blocks: tuple
    best_loglik: float
    best_theta: np.ndarray
    best_score: float = math.inf
    best_score_theta: np.ndarray | None = None
    proposals: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def draws(self) -> np.ndarray:
        return self.states[:, -1, :]

    @property
    def loglik(self) -> np.ndarray:
        return self.logliks[:, -1]

    def __len__(self):
        return self.states.shape[0]

    def phase_draws(self, phase: int) -> np.ndarray:
        return self.draws[self.phase == phase]

    def acceptance_rate(self, phase: int | None = None) -> np.ndarray:
        acc = self.accepted if phase is None else self.accepted[self.phase == phase]
        if acc.shape[0] == 0:
            return np.full(len(self.blocks), np.nan)
        return acc.mean(axis=0)

    def window_acceptance(self, window: int = 1000) -> np.ndarray:
        """Per-block acceptance over the last ``window`` burn-in iterations."""
        acc = self.accepted[self.phase == 0][-window:]
        return acc.mean(axis=0)

    def extend(self, other: "McmcChain") -> "McmcChain":
        better = other.best_loglik > self.best_loglik
        score_better = other.best_score < self.best_score
        return McmcChain(
            states=np.concatenate((self.states, other.states)),
            logliks=np.concatenate((self.logliks, other.logliks)),
            accepted=np.concatenate((self.accepted, other.accepted)),
            phase=np.concatenate((self.phase, other.phase)),
            blocks=self.blocks,
            best_loglik=other.best_loglik if better else self.best_loglik,
            best_theta=other.best_theta if better else self.best_theta,
            best_score=other.best_score if score_better else self.best_score,
            best_score_theta=other.best_score_theta if score_better else self.best_score_theta,
            proposals=other.proposals or self.proposals,
            meta={**self.meta, **other.meta},
        )


def _safe_cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        d = cov.shape[0]
        jitter = RIDGE * max(1.0, float(np.trace(cov)) / d)
        for _ in range(10):
            try:
                return np.linalg.cholesky(cov + jitter * np.eye(d))
            except np.linalg.LinAlgError:
                jitter *= 100
        return np.sqrt(jitter) * np.eye(d)


def initial_proposals(theta0, blocks, rel_step: float = 0.05, floor: float = 0.01) -> list:
    theta0 = np.asarray(theta0, dtype=float)
    props = []
    for b in blocks:
        steps = rel_step * np.maximum(np.abs(theta0[list(b)]), floor)
        props.append(Proposal(1.0, np.diag(steps**2)))
    return props


# ---------------------------------------------------------------------------
# random-walk Metropolis (burn-in and tau search)


def _rwm(
    target: Target,
    theta0,
    blocks,
    rng: np.random.Generator,
    *,
    min_iters: int,
    max_iters: int,
    stall_window: int | None,
    support: Support,
    proposals: list | None,
    adapt_interval: int,
    target_accept: float,
    adapt: bool = True,
    score_from: int = 0,
) -> McmcChain:
    theta = np.array(theta0, dtype=float)
    p = theta.shape[0]
    nb = len(blocks)
    if not support(theta):
        raise ValueError("initial parameters lie outside the prior support")
    ll, score = target(theta)
    if not math.isfinite(ll):
        raise ValueError("initial parameters give a non-finite likelihood")
    props = [q.copy() for q in proposals] if proposals else initial_proposals(theta, blocks)
    chols = [q.chol() for q in props]
    dims = [len(b) for b in blocks]
    idx = [np.asarray(b) for b in blocks]
    # shape adaptation needs the draws, so start from the proposal shapes
    base_shapes = [q.shape.copy() for q in props]

    states = np.empty((max_iters, nb, p))
    logliks = np.empty((max_iters, nb))
    accepted = np.zeros((max_iters, nb), dtype=bool)
    best_ll, best_theta = ll, theta.copy()
    best_score = score if math.isfinite(score) and score_from == 0 else math.inf
    best_score_theta = theta.copy()
    last_improve = 0
    n = 0
    while n < max_iters:
        w = min(adapt_interval, max_iters - n)
        z = rng.standard_normal((w, p))
        logu = np.log(rng.random((w, nb)))
        for k in range(w):
            i = n + k
            off = 0
            for b in range(nb):
                prop = theta.copy()
                prop[idx[b]] += chols[b] @ z[k, off : off + dims[b]]
                off += dims[b]
                if support(prop):
                    ll_new, sc_new = target(prop)
                    if logu[k, b] < ll_new - ll:
                        theta, ll, score = prop, ll_new, sc_new
                        accepted[i, b] = True
                if i >= score_from and score < best_score:
                    best_score, best_score_theta = score, theta.copy()
                states[i, b] = theta
                logliks[i, b] = ll
            if ll > best_ll:
                best_ll, best_theta = ll, theta.copy()
                last_improve = i
            if stall_window is not None and i + 1 >= min_iters and i - last_improve >= stall_window:
                n = i + 1
                break
        else:
            n += w
            if adapt and w == adapt_interval:
                win = accepted[n - w : n].mean(axis=0)
                for b in range(nb):
                    props[b].scale *= math.exp(ADAPT_STEP if win[b] > target_accept else -ADAPT_STEP)
                    if n >= SHAPE_ADAPT_AFTER * adapt_interval:
                        hist = states[n // 2 : n, -1][:, idx[b]]
                        emp = np.atleast_2d(np.cov(hist, rowvar=False))
                        if np.all(np.isfinite(emp)) and np.trace(emp) > 0:
                            d = dims[b]
                            props[b].shape = (2.38**2 / d) * emp + RIDGE * np.diag(np.diag(base_shapes[b]))
                    chols[b] = props[b].chol()
            continue
        break
    return McmcChain(
        states=states[:n],
        logliks=logliks[:n],
        accepted=accepted[:n],
        phase=np.zeros(n, dtype=np.int8),
        blocks=tuple(tuple(b) for b in blocks),
        best_loglik=best_ll,
        best_theta=best_theta,
        best_score=best_score,
        best_score_theta=best_score_theta,
        proposals=props,
        meta={"iterations": n},
    )


def rwm_burnin(
    target: Target,
    init,
    config: McmcConfig,
    rng: np.random.Generator | None = None,
    *,
    support: Support = _always,
    proposals: list | None = None,
) -> McmcChain:
    """Block-wise Gaussian random-walk Metropolis with scale adaptation.

    Every ``adapt_interval`` iterations each block's scale is multiplied by
    ``exp(+0.05)`` when the windowed acceptance exceeds the target and by
    ``exp(-0.05)`` otherwise; after a few windows the proposal shape follows
    the empirical covariance of the second half of the chain so far.
    The tuned proposals are returned on ``chain.proposals``.
    """
    rng = rng if rng is not None else derive_rng(config.seed, 0)
    chain = _rwm(
        target, init, config.blocks, rng,
        min_iters=config.burnin_iters, max_iters=config.burnin_iters, stall_window=None,
        support=support, proposals=proposals,
        adapt_interval=config.adapt_interval, target_accept=config.target_accept,
    )
    rates = chain.acceptance_rate()
    if np.any(rates == 0):
        warnings.warn(f"burn-in block acceptance is zero: {rates}", RuntimeWarning, stacklevel=2)
    return chain


# ---------------------------------------------------------------------------
# independent-kernel Metropolis-Hastings (sampling)


class _Mixture:
    """Equal-weight mixture of N(m, c*Sigma) for c in (1, 10, 100)."""

    factors = (1.0, 10.0, 100.0)

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        d = self.mean.shape[0]
        cov = np.atleast_2d(cov)
        chol = None
        try:
            chol = np.linalg.cholesky(cov)
            if np.min(np.diag(chol)) <= 1e-12 * max(1.0, float(np.max(np.diag(chol)))):
                chol = None
        except np.linalg.LinAlgError:
            pass
        if chol is None:
            warnings.warn("singular IK-MH covariance; adding a 1e-8 ridge", RuntimeWarning, stacklevel=3)
            cov = cov + RIDGE * np.eye(d)
            chol = _safe_cholesky(cov)
        self.chol = chol
        self.d = d
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self.lognorm = np.array(
            [-0.5 * (d * math.log(2 * math.pi) + logdet + d * math.log(c)) for c in self.factors]
        ) + math.log(1.0 / 3.0)

    def draw(self, comp: int, z: np.ndarray) -> np.ndarray:
        return self.mean + math.sqrt(self.factors[comp]) * (self.chol @ z)

    def logpdf(self, v: np.ndarray) -> float:
        y = np.linalg.solve(self.chol, v - self.mean) if self.d > 1 else (v - self.mean) / self.chol[0, 0]
        q = float(y @ y)
        return float(logsumexp(self.lognorm - 0.5 * q / np.array(self.factors)))


def ikmh_sampling(
    target: Target,
    burnin_chain: McmcChain,
    config: McmcConfig,
    rng: np.random.Generator | None = None,
    *,
    support: Support = _always,
) -> McmcChain:
    """Independent-kernel MH per block from a three-component Gaussian mixture.

    Means and covariance come from the last 10% of the burn-in draws; the
    mixture covariances are Sigma, 10 Sigma and 100 Sigma.
    """
    if len(burnin_chain) == 0:
        raise ValueError("burn-in chain is empty")
    rng = rng if rng is not None else derive_rng(config.seed, 1)
    blocks = burnin_chain.blocks
    tail = burnin_chain.draws[-max(2, len(burnin_chain) // 10):]
    idx = [np.asarray(b) for b in blocks]
    mixes = [_Mixture(tail[:, ix].mean(axis=0), np.cov(tail[:, ix], rowvar=False)) for ix in idx]

    theta = burnin_chain.draws[-1].copy()
    ll, _ = target(theta)
    nb = len(blocks)
    p = theta.shape[0]
    n = config.sampling_iters
    states = np.empty((n, nb, p))
    logliks = np.empty((n, nb))
    accepted = np.zeros((n, nb), dtype=bool)
    best_ll, best_theta = burnin_chain.best_loglik, burnin_chain.best_theta.copy()
    cur_q = [mixes[b].logpdf(theta[idx[b]]) for b in range(nb)]
    comps = rng.integers(0, 3, size=(n, nb))
    z = rng.standard_normal((n, p))
    logu = np.log(rng.random((n, nb)))
    for i in range(n):
        off = 0
        for b in range(nb):
            d = len(idx[b])
            v = mixes[b].draw(comps[i, b], z[i, off : off + d])
            off += d
            prop = theta.copy()
            prop[idx[b]] = v
            if support(prop):
                ll_new, _ = target(prop)
                if math.isfinite(ll_new):
                    q_new = mixes[b].logpdf(v)
                    if logu[i, b] < ll_new - ll + cur_q[b] - q_new:
                        theta, ll = prop, ll_new
                        cur_q[b] = q_new
                        accepted[i, b] = True
            states[i, b] = theta
            logliks[i, b] = ll
        if ll > best_ll:
            best_ll, best_theta = ll, theta.copy()
    return McmcChain(
        states=states, logliks=logliks, accepted=accepted,
        phase=np.ones(n, dtype=np.int8), blocks=blocks,
        best_loglik=best_ll, best_theta=best_theta,
        best_score=burnin_chain.best_score, best_score_theta=burnin_chain.best_score_theta,
        proposals=burnin_chain.proposals, meta={"sampling_iterations": n},
    )


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    sd: np.ndarray
    ml_draw: np.ndarray
    ml_loglik: float
    n_draws: int

    def params(self, tau: float, alpha: float, variant: Variant = "SAV") -> RecareParams:
        return RecareParams.from_array(self.mean, tau, alpha, variant)


def posterior_estimate(chain: McmcChain) -> PosteriorSummary:
    """Component-wise mean and sd of the sampling-phase draws, plus the
    highest-likelihood draw seen anywhere in the chain."""
    draws = chain.phase_draws(1)
    if draws.shape[0] == 0:
        raise ValueError("chain has no sampling-phase draws")
    return PosteriorSummary(
        mean=draws.mean(axis=0),
        sd=draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(draws.shape[1]),
        ml_draw=chain.best_theta.copy(),
        ml_loglik=chain.best_loglik,
        n_draws=draws.shape[0],
    )


def run_mcmc(target: Target, init, config: McmcConfig, *, support: Support = _always,
             proposals: list | None = None, seed=None) -> McmcChain:
    """Burn-in followed by IK-MH sampling; one chain with phase markers."""
    seed = config.seed if seed is None else seed
    burn = rwm_burnin(target, init, config, derive_rng(seed, 0), support=support, proposals=proposals)
    if config.sampling_iters == 0:
        return burn
    samp = ikmh_sampling(target, burn, config, derive_rng(seed, 1), support=support)
    return burn.extend(samp)


# ---------------------------------------------------------------------------
# maximum likelihood


@dataclass
class MlResult:
    theta: np.ndarray
    loglik: float
    converged: bool
    n_converged: int
    n_starts: int
    message: str = ""


def _stationarity_constraint(theta):
    return 1.0 - 1e-8 - (theta[1] + theta[2] * theta[4])


def ml_estimate(
    loglik: Callable[[np.ndarray], float],
    init,
    rng: np.random.Generator | None = None,
    *,
    support: Support = _always,
    n_starts: int = 5,
    jitter: float = 0.1,
    constrained: bool = True,
    bounds: Sequence | None = None,
    maxiter: int = 500,
) -> MlResult:
    """Local maximizer of ``loglik`` from ``init`` plus randomized restarts.

    Uses SLSQP with the stationarity inequality (when ``constrained``) and
    optional bounds.  Failed evaluations are mapped to a large penalty,
    which is what makes the optimizer fragile on the Re-CARE likelihood.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    init = np.asarray(init, dtype=float)

    def objective(th):
        if not support(th):
            return FAIL_PENALTY
        v = loglik(th)
        return -v if math.isfinite(v) else FAIL_PENALTY

    starts = [init]
    for _ in range(n_starts - 1):
        for _attempt in range(100):
            cand = init + jitter * np.maximum(np.abs(init), 0.05) * rng.standard_normal(init.shape[0])
            if support(cand) and math.isfinite(loglik(cand)):
                starts.append(cand)
                break
    cons = [{"type": "ineq", "fun": _stationarity_constraint}] if constrained else []
    best = None
    n_conv = 0
    for s in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(objective, s, method="SLSQP", constraints=cons, bounds=bounds,
                           options={"maxiter": maxiter, "ftol": 1e-10})
        th = res.x if np.all(np.isfinite(res.x)) else s
        val = -objective(th)
        if val <= -FAIL_PENALTY:
            th, val = s, -objective(s)
        ok = bool(res.success) and val > -FAIL_PENALTY
        n_conv += ok
        if best is None or val > best[1]:
            best = (th, val, ok, str(res.message))
    return MlResult(best[0], best[1], best[2], n_conv, len(starts), best[3])


# ---------------------------------------------------------------------------
# Re-CARE targets


@dataclass
class RecareData:
    """In-sample returns and measure with the settings shared by all fits."""

    r: np.ndarray
    x: np.ndarray
    alpha: float = 0.01
    variant: Variant = "SAV"
    mu0: float | None = None

    def __post_init__(self):
        self.r = np.ascontiguousarray(self.r, dtype=float)
        self.x = np.ascontiguousarray(self.x, dtype=float)
        if self.r.shape != self.x.shape or self.r.ndim != 1 or self.r.shape[0] < 2:
            raise ValueError("r and x must be aligned 1-d series of length >= 2")
        if self.mu0 is None:
            self.mu0 = initial_expectile(self.r, self.alpha)

    def target(self, tau: float) -> "RecareTarget":
        return RecareTarget(self, tau)

    def support(self, theta) -> bool:
        return in_support(theta, self.variant)

    def default_init(self) -> np.ndarray:
        return default_init(self.r, self.x, self.alpha, self.variant)

    def bounds(self):
        lo = [None] * 8
        lo[7] = 1e-6
        if self.variant == "IG":
            lo[0] = lo[1] = lo[2] = 1e-10
        return [(v, None) for v in lo]


class RecareTarget:
    """Joint log-likelihood and in-sample quantile loss at a fixed tau."""

    def __init__(self, data: RecareData, tau: float):
        if not 0.0 < tau < 0.5:
            raise ValueError("tau must lie in (0, 0.5)")
        self.data = data
        self.tau = float(tau)
        self._ig = data.variant == "IG"

    def __call__(self, theta) -> tuple[float, float]:
        d = self.data
        ll, ql, _ = loglik_kernel(theta, self.tau, d.alpha, d.r, d.x, d.mu0, self._ig)
        return ll, ql

    def loglik(self, theta) -> float:
        return self(theta)[0]

    def support(self, theta) -> bool:
        return self.data.support(theta)

    def params(self, theta) -> RecareParams:
        return RecareParams.from_array(theta, self.tau, self.data.alpha, self.data.variant)

    def mu(self, theta) -> np.ndarray:
        return run_filter(self.params(theta), self.data.r, self.data.x, self.data.mu0).mu

    def forecast(self, theta) -> float:
        """One-step-ahead expectile after the last in-sample day."""
        mu = self.mu(theta)
        return float(forecast_next(np.asarray(theta, dtype=float), mu[-1], self.data.x[-1], self._ig))


@dataclass
class TauPoint:
    """Result of scoring one expectile level."""

    tau: float
    loss: float
    theta: np.ndarray | None
    mle_theta: np.ndarray | None = None
    iterations: int = 0
    proposals: list | None = None
    ok: bool = True
    extra: dict = field(default_factory=dict)


def rwm_tau_objective(
    data: RecareData | Target,
    tau: float,
    init,
    *,
    min_iters: int,
    max_iters: int,
    stall_window: int = 1000,
    rng: np.random.Generator | None = None,
    proposals: list | None = None,
    support: Support | None = None,
    blocks=(BLOCK1, BLOCK2),
    adapt_interval: int = 100,
    target_accept: float = 0.234,
    score_from: int = 0,
) -> TauPoint:
    """Stochastic search at one tau: every RW-M iterate is scored by the
    quantile loss and the minimum is returned.  The first ``score_from``
    iterations are a transient and are not scored: the quantile loss does
    not depend on tau, so draws near the starting point would otherwise
    score alike at every tau.

    Stops once the running likelihood maximum has not moved for
    ``stall_window`` iterations (after ``min_iters``), or at ``max_iters``.
    ``data`` may also be a bare target callable, in which case ``tau`` is
    only recorded.
    """
    if isinstance(data, RecareData):
        target = data.target(tau)
        support = support or data.support
    else:
        target = data
        support = support or _always
    chain = _rwm(
        target, init, blocks, rng if rng is not None else np.random.default_rng(0),
        min_iters=min_iters, max_iters=max_iters, stall_window=stall_window,
        support=support, proposals=proposals,
        adapt_interval=adapt_interval, target_accept=target_accept, score_from=score_from,
    )
    return TauPoint(
        tau=float(tau), loss=float(chain.best_score), theta=chain.best_score_theta,
        mle_theta=chain.best_theta, iterations=len(chain), proposals=chain.proposals,
        extra={"best_loglik": chain.best_loglik, "acceptance": chain.acceptance_rate()},
    )


class RecareTauObjective:
    """Callable ``(tau, warm, key) -> TauPoint`` used by the tau searches.

    ``warm`` is the previous :class:`TauPoint` (or ``None`` for a cold
    start); its MLE draw and tuned proposals seed the next run.
    """

    def __init__(self, data: RecareData, config: TauSearchConfig, seed=0, init=None):
        self.data = data
        self.config = config
        self.seed = seed
        self.init = np.asarray(init, dtype=float) if init is not None else data.default_init()

    def __call__(self, tau: float, warm: TauPoint | None, key=()) -> TauPoint:
        c = self.config
        rng = derive_rng(self.seed, *key)
        if warm is None:
            return rwm_tau_objective(self.data, tau, self.init, rng=rng,
                                     min_iters=c.first_min_iters, max_iters=c.first_max_iters,
                                     stall_window=c.stall_window, score_from=c.first_min_iters // 2)
        init = warm.mle_theta if warm.mle_theta is not None else self.init
        return rwm_tau_objective(self.data, tau, init, rng=rng, proposals=warm.proposals,
                                 min_iters=c.later_min_iters, max_iters=c.later_max_iters,
                                 stall_window=c.stall_window, score_from=c.later_min_iters // 2)


@dataclass
class TauSearchResult:
    tau: float
    point: TauPoint
    trace: list
    boundary: bool = False

    @property
    def theta(self):
        return self.point.theta

    @property
    def n_evaluations(self) -> int:
        return len(self.trace)


def refine_grid(grid: np.ndarray, k: int, M2: int) -> tuple[np.ndarray, bool]:
    """Step-2 points strictly inside the bracket around ``grid[k]``.

    Interior minimizer: ``M2/2`` equally spaced points on each side, with the
    bracket endpoints and the centre excluded.  Boundary minimizer: ``M2``
    points strictly inside the single adjacent interval.
    """
    last = len(grid) - 1
    if 0 < k < last:
        half = M2 // 2
        left = grid[k - 1] + (grid[k] - grid[k - 1]) * np.arange(1, half + 1) / (half + 1)
        right = grid[k] + (grid[k + 1] - grid[k]) * np.arange(1, half + 1) / (half + 1)
        return np.concatenate((left, right)), False
    lo, hi = (grid[0], grid[1]) if k == 0 else (grid[last - 1], grid[last])
    return lo + (hi - lo) * np.arange(1, M2 + 1) / (M2 + 1), True


def two_step_tau_search(objective: Callable, config: TauSearchConfig) -> TauSearchResult:
    """Coarse grid on ``[m1, m2]`` followed by a refined grid around its minimizer.

    Step-1 points are evaluated in order with warm starts from the previous
    point; every Step-2 point is warm-started from the Step-1 minimizer.
    """
    grid = config.step1_grid()
    trace: list[TauPoint] = []
    warm = None
    for i, tau in enumerate(grid):
        pt = objective(float(tau), warm, (1, i))
        trace.append(pt)
        warm = pt if pt.ok else warm
    losses = np.array([pt.loss if pt.ok else np.inf for pt in trace])
    k = int(np.argmin(losses))
    fine, boundary = refine_grid(grid, k, config.M2)
    if boundary:
        warnings.warn("step-1 minimizer on the grid boundary; refining one interval",
                      RuntimeWarning, stacklevel=2)
    centre = trace[k]
    for j, tau in enumerate(fine):
        trace.append(objective(float(tau), centre, (2, j)))
    losses = np.array([pt.loss if pt.ok else np.inf for pt in trace])
    best = int(np.argmin(losses))
    return TauSearchResult(trace[best].tau, trace[best], trace, boundary)


def full_grid_tau_search(
    data: RecareData,
    grid,
    scorer: str = "rwm",
    criterion: str = "qloss",
    config: TauSearchConfig | None = None,
    seed=0,
    init=None,
    n_starts: int = 5,
) -> TauSearchResult:
    """Score every grid tau with RW-M or ML and pick the best by criterion.

    ``criterion='qloss'`` minimizes the quantile loss; ``'vrate'`` minimizes
    ``|VRate - alpha|`` with ties going to the smaller tau.  A failing grid
    point is recorded with ``ok=False`` and the search carries on.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be nonempty and ascending")
    if grid[0] <= 0 or grid[-1] >= data.alpha:
        raise ValueError("grid must lie inside (0, alpha)")
    if scorer not in ("rwm", "ml") or criterion not in ("qloss", "vrate"):
        raise ValueError("unknown scorer or criterion")
    config = config or TauSearchConfig(alpha=data.alpha)
    init = np.asarray(init, dtype=float) if init is not None else data.default_init()
    rw = RecareTauObjective(data, config, seed, init)
    trace: list[TauPoint] = []
    warm = None
    for i, tau in enumerate(grid):
        try:
            if scorer == "rwm":
                pt = rw(float(tau), warm, (3, i))
                warm = pt
                theta = pt.mle_theta if criterion == "vrate" else pt.theta
            else:
                tgt = data.target(tau)
                res = ml_estimate(tgt.loglik, init, derive_rng(seed, 4, i), support=data.support,
                                  n_starts=n_starts, bounds=data.bounds())
                theta = res.theta
                pt = TauPoint(float(tau), math.nan, theta, theta, extra={"converged": res.converged,
                                                                         "loglik": res.loglik})
            mu = data.target(tau).mu(theta)
            if criterion == "qloss":
                if scorer == "ml":
                    pt.loss = float(np.sum((data.alpha - (data.r < mu)) * (data.r - mu)))
            else:
                pt.loss = abs(violation_rate(data.r, mu) - data.alpha)
        except (ArithmeticError, ValueError) as exc:
            log.debug("grid point tau=%g failed: %s", tau, exc)
            pt = TauPoint(float(tau), math.inf, None, ok=False, extra={"error": str(exc)})
        trace.append(pt)
    losses = np.array([pt.loss if pt.ok else np.inf for pt in trace])
    best = int(np.argmin(losses))
    return TauSearchResult(trace[best].tau, trace[best], trace)


# ---------------------------------------------------------------------------
# end-to-end fits


@dataclass
class FitResult:
    params: RecareParams
    sd: np.ndarray
    tau: float
    var_next: float
    es_next: float
    chain: McmcChain | None = None
    search: TauSearchResult | None = None
    ml_draw: np.ndarray | None = None
    converged: bool = True

    def summary(self) -> dict:
        out = {"tau": self.tau, "var_next": self.var_next, "es_next": self.es_next}
        for k, name in enumerate(PARAM_NAMES):
            out[name] = float(self.params.as_array()[k])
            out[f"{name}_sd"] = float(self.sd[k])
        if self.chain is not None:
            burn = self.chain.acceptance_rate(0)
            samp = self.chain.acceptance_rate(1)
            for b in range(len(burn)):
                out[f"accept_burnin_block{b + 1}"] = float(burn[b])
                out[f"accept_sampling_block{b + 1}"] = float(samp[b])
            out["burnin_iters"] = int(np.sum(self.chain.phase == 0))
            out["sampling_iters"] = int(np.sum(self.chain.phase == 1))
        return out


def fit_mcmc(data: RecareData, tau: float, config: McmcConfig, init=None, proposals=None, seed=None) -> FitResult:
    """Full burn-in plus sampling run at a fixed tau; forecasts average over draws."""
    target = data.target(tau)
    init = np.asarray(init, dtype=float) if init is not None else data.default_init()
    chain = run_mcmc(target, init, config, support=data.support, proposals=proposals, seed=seed)
    post = posterior_estimate(chain)
    draws = chain.phase_draws(1)
    thin = max(1, draws.shape[0] // 1000)
    fc = np.array([target.forecast(th) for th in draws[::thin]])
    var_next = float(np.mean(fc))
    return FitResult(
        params=post.params(tau, data.alpha, data.variant), sd=post.sd, tau=float(tau),
        var_next=var_next, es_next=float(expectile_to_es(var_next, tau, data.alpha)),
        chain=chain, ml_draw=post.ml_draw,
    )


def fit_bayes(data: RecareData, mcmc: McmcConfig, search: TauSearchConfig, seed=0, init=None) -> FitResult:
    """Two-step tau search, then the full adaptive MCMC at the selected tau.

    The final chain starts from the search's best-likelihood draw at tau-hat
    with its tuned proposals.
    """
    obj = RecareTauObjective(data, search, seed, init)
    res = two_step_tau_search(obj, search)
    start = res.point.mle_theta
    fit = fit_mcmc(data, res.tau, mcmc, init=start, proposals=res.point.proposals,
                   seed=np.random.SeedSequence(_entropy(seed), spawn_key=_spawn(seed) + (5,)))
    fit.search = res
    return fit


def fit_ml(data: RecareData, grid, seed=0, init=None, n_starts: int = 5) -> FitResult:
    """Full-grid ML tau search by quantile loss, then the ML fit at tau-hat."""
    res = full_grid_tau_search(data, grid, scorer="ml", criterion="qloss", seed=seed,
                               init=init, n_starts=n_starts)
    if not res.point.ok:
        raise ArithmeticError("ML failed at every grid point")
    theta = res.point.theta
    target = data.target(res.tau)
    var_next = target.forecast(theta)
    return FitResult(
        params=target.params(theta), sd=np.full(8, np.nan), tau=res.tau,
        var_next=var_next, es_next=float(expectile_to_es(var_next, res.tau, data.alpha)),
        search=res, converged=bool(res.point.extra.get("converged", False)),
    )


def _entropy(seed):
    return seed.entropy if isinstance(seed, np.random.SeedSequence) else seed


def _spawn(seed) -> tuple:
    return tuple(seed.spawn_key) if isinstance(seed, np.random.SeedSequence) else ()
