"""Square-root Realized-GARCH data generator and its Re-CARE-SAV equivalent."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import norm

from .expectile import normal_es_quantile_level, true_tau_for_normal
from .model import RecareParams

GENERATOR = "numpy.random.Generator(PCG64)"


@dataclass(frozen=True)
class RgarchSimParams:
    omega: float = 0.02
    beta: float = 0.75
    gamma: float = 0.25
    xi: float = 0.1
    varphi: float = 0.9
    t1: float = -0.02
    t2: float = 0.02
    sigma_u: float = 0.3
    n: int = 3000
    h0: float | None = None

    def __post_init__(self):
        if not self.beta + self.gamma * self.varphi < 1:
            raise ValueError("beta + gamma*varphi must be < 1")
        if not self.sigma_u > 0:
            raise ValueError("sigma_u must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def fixed_point(self) -> float:
        """Volatility fixed point of the noise-free recursion."""
        return (self.omega + self.gamma * self.xi) / (1.0 - self.beta - self.gamma * self.varphi)


@dataclass
class SimulatedDataset:
    r: np.ndarray
    x: np.ndarray
    sqrt_h: np.ndarray
    sqrt_h_next: float
    var_next: float
    es_next: float
    alpha: float
    eps_star: np.ndarray
    u: np.ndarray
    redraws: int = 0

    def true_var(self) -> np.ndarray:
        return self.sqrt_h * norm.ppf(self.alpha)

    def true_es(self) -> np.ndarray:
        return self.sqrt_h * norm.ppf(normal_es_quantile_level(self.alpha))


@njit(cache=True)
def _path(eps, u, omega, beta, gamma, xi, varphi, t1, t2, start, s, x, r):
    n = eps.shape[0]
    for t in range(start, n):
        e = eps[t]
        x[t] = xi + varphi * s[t] + t1 * e + t2 * (e * e - 1.0) + u[t]
        r[t] = s[t] * e
        nxt = omega + beta * s[t] + gamma * x[t]
        if nxt <= 0.0:
            return t
        s[t + 1] = nxt
    return -1


def simulate_rgarch(params: RgarchSimParams = RgarchSimParams(), alpha: float = 0.01, seed=None) -> SimulatedDataset:
    """Simulate returns and a realized measure from the square-root Re-GARCH.

    A step that would push the volatility to zero or below has its innovation
    pair redrawn; more than 0.1% redraws triggers a warning.
    """
    rng = np.random.default_rng(seed)
    n = params.n
    eps = rng.standard_normal(n)
    u = params.sigma_u * rng.standard_normal(n)
    s = np.empty(n + 1)
    x = np.empty(n)
    r = np.empty(n)
    s[0] = params.h0 if params.h0 is not None else params.fixed_point
    start, redraws = 0, 0
    while True:
        fail = _path(eps, u, params.omega, params.beta, params.gamma, params.xi,
                     params.varphi, params.t1, params.t2, start, s, x, r)
        if fail < 0:
            break
        eps[fail] = rng.standard_normal()
        u[fail] = params.sigma_u * rng.standard_normal()
        start = fail
        redraws += 1
    if redraws > 0.001 * n:
        warnings.warn(f"{redraws} volatility redraws in {n} steps", RuntimeWarning, stacklevel=2)
    z = norm.ppf(alpha)
    zd = norm.ppf(normal_es_quantile_level(alpha))
    return SimulatedDataset(
        r=r, x=x, sqrt_h=s[:n].copy(), sqrt_h_next=float(s[n]),
        var_next=float(s[n] * z), es_next=float(s[n] * zd), alpha=alpha,
        eps_star=eps, u=u, redraws=redraws,
    )


def map_rgarch_to_recare(params: RgarchSimParams = RgarchSimParams(), alpha: float = 0.01) -> RecareParams:
    """Re-CARE-SAV parameters implied by the Re-GARCH with ``mu_t = sqrt(h_t) z_alpha``."""
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    z = float(norm.ppf(alpha))
    return RecareParams(
        beta1=params.omega * z,
        beta2=params.beta,
        beta3=params.gamma * z,
        xi=params.xi,
        phi=-params.varphi / z,
        tau1=params.t1 * z,
        tau2=params.t2 * z * z,
        sigma_u=params.sigma_u,
        tau=true_tau_for_normal(alpha),
        alpha=alpha,
        variant="SAV",
    )


def replication_seed(master: int, index: int) -> np.random.SeedSequence:
    """Independent seed for replication ``index`` of a run seeded with ``master``."""
    return np.random.SeedSequence(master, spawn_key=(index,))
