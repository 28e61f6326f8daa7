"""Expectile losses, the expectile-to-ES map and normal-benchmark levels."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

LOSS_FLOOR = 1e-300


class DegenerateFitError(ArithmeticError):
    """The asymmetric least-squares loss is zero, so the integrated likelihood is unbounded."""


@dataclass(frozen=True)
class ExpectileLevel:
    tau: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.tau < self.alpha <= 0.5:
            raise ValueError(f"need 0 < tau < alpha <= 0.5, got tau={self.tau}, alpha={self.alpha}")


def _pair(y, mu):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {mu.shape}")
    return y, mu


def als_loss(y, mu, tau: float) -> float:
    """Asymmetric least-squares loss ``sum |tau - I(y < mu)| (y - mu)^2``."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    y, mu = _pair(y, mu)
    e = y - mu
    w = np.where(e < 0, 1.0 - tau, tau)
    return float(np.sum(w * e * e))


def quantile_loss(y, mu, alpha: float) -> float:
    """Pinball loss ``sum (alpha - I(y < mu)) (y - mu)``."""
    y, mu = _pair(y, mu)
    e = y - mu
    return float(np.sum((alpha - (e < 0)) * e))


def violation_rate(y, mu) -> float:
    y, mu = _pair(y, mu)
    return float(np.mean(y < mu))


def expectile_to_es(mu_tau, tau: float, alpha: float):
    """Scale a tau-expectile into the ES at level ``alpha`` (zero-mean returns)."""
    if np.any(np.asarray(tau) == 0.5):
        raise ZeroDivisionError("tau = 0.5 makes the expectile-to-ES map singular")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return (1.0 + tau / ((1.0 - 2.0 * tau) * alpha)) * mu_tau


def es_multiplier(tau: float, alpha: float) -> float:
    return expectile_to_es(1.0, tau, alpha)


def care_loglik(y, mu, tau: float) -> float:
    """Integrated CARE log-likelihood ``-(n/2) ln ALS``.

    A zero loss raises :class:`DegenerateFitError`; losses below ``1e-300``
    are floored with a warning.
    """
    loss = als_loss(y, mu, tau)
    n = np.asarray(y).shape[0]
    return care_loglik_from_loss(loss, n)


def care_loglik_from_loss(loss: float, n: int) -> float:
    if loss <= 0.0:
        raise DegenerateFitError("ALS loss is zero: perfect fit, likelihood unbounded")
    if loss < LOSS_FLOOR:
        warnings.warn("ALS loss below 1e-300 floored", RuntimeWarning, stacklevel=3)
        loss = LOSS_FLOOR
    return -0.5 * n * math.log(loss)


def normal_es_quantile_level(alpha: float) -> float:
    """Quantile level at which the standard-normal ES at ``alpha`` falls."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = norm.ppf(alpha)
    return float(norm.cdf(-norm.pdf(z) / alpha))


def tau_from_ratio(ratio: float, alpha: float) -> float:
    """Invert ``1 + tau / ((1 - 2 tau) alpha) = ratio`` for tau."""
    k = (ratio - 1.0) * alpha
    return k / (1.0 + 2.0 * k)


def true_tau_for_normal(alpha: float) -> float:
    """Expectile level whose ES mapping reproduces the normal ES/VaR ratio."""
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    z = norm.ppf(alpha)
    ratio = (-norm.pdf(z) / alpha) / z
    return tau_from_ratio(ratio, alpha)


def sample_expectile(y, tau: float, tol: float = 1e-10, max_iter: int = 1000) -> float:
    """Sample tau-expectile by iterated weighted least squares."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty sample")
    mu = float(np.mean(y))
    for _ in range(max_iter):
        w = np.where(y < mu, 1.0 - tau, tau)
        new = float(np.sum(w * y) / np.sum(w))
        if abs(new - mu) <= tol:
            return new
        mu = new
    warnings.warn("sample_expectile did not converge", RuntimeWarning, stacklevel=2)
    return mu
