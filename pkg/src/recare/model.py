"""Realized-CARE filters and the joint log-likelihood.

Parameter vectors use the fixed order ``(beta1, beta2, beta3, xi, phi, tau1,
tau2, sigma_u)``.  The compiled kernel :func:`loglik_kernel` is the hot path
used by the samplers and optimizers; :func:`filter_sav` / :func:`filter_ig`
return the full set of intermediate series for inspection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Literal

import numpy as np
from numba import njit

from .expectile import care_loglik_from_loss

Variant = Literal["SAV", "IG"]

PARAM_NAMES = ("beta1", "beta2", "beta3", "xi", "phi", "tau1", "tau2", "sigma_u")
BLOCK1 = (0, 1, 2, 4)  # beta1, beta2, beta3, phi
BLOCK2 = (3, 5, 6, 7)  # xi, tau1, tau2, sigma_u

DIV_GUARD = 1e-8
LOG_2PI = math.log(2.0 * math.pi)

# kernel status codes
OK, SIGN_VIOLATION, DIV_GUARDED, NEG_RADICAND, NONFINITE = 0, 1, 2, 3, 4


class FilterError(ArithmeticError):
    """The expectile recursion left the admissible region."""


class SignViolationError(FilterError):
    pass


class DivisionGuardError(FilterError):
    pass


@dataclass(frozen=True)
class RecareParams:
    beta1: float
    beta2: float
    beta3: float
    xi: float
    phi: float
    tau1: float
    tau2: float
    sigma_u: float
    tau: float = 0.0
    alpha: float = 0.01
    variant: Variant = "SAV"

    def __post_init__(self):
        if self.variant not in ("SAV", "IG"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.sigma_u > 0:
            raise ValueError("sigma_u must be positive")
        if not check_stationarity(self):
            raise ValueError(
                f"parameters outside the support: beta2 + beta3*phi = "
                f"{self.beta2 + self.beta3 * self.phi:.6g}"
            )

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    @classmethod
    def from_array(cls, theta, tau=0.0, alpha=0.01, variant: Variant = "SAV") -> "RecareParams":
        theta = np.asarray(theta, dtype=float)
        return cls(*map(float, theta), tau=float(tau), alpha=float(alpha), variant=variant)

    def replace(self, **changes) -> "RecareParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return type(self)(**kw)


def _stationary(beta1, beta2, beta3, phi, sigma_u, ig) -> bool:
    if not beta2 + beta3 * phi < 1.0:
        return False
    if ig and not (beta1 > 0 and beta2 > 0 and beta3 > 0):
        return False
    return True


def check_stationarity(params) -> bool:
    """``beta2 + beta3*phi < 1``, plus positivity of the betas for IG."""
    if isinstance(params, RecareParams):
        return _stationary(params.beta1, params.beta2, params.beta3, params.phi,
                           params.sigma_u, params.variant == "IG")
    theta = np.asarray(params, dtype=float)
    return _stationary(theta[0], theta[1], theta[2], theta[4], theta[7], False)


def in_support(theta, variant: Variant = "SAV") -> bool:
    """Flat-prior support: stationarity, IG positivity and ``sigma_u > 0``."""
    theta = np.asarray(theta)
    if not np.all(np.isfinite(theta)):
        return False
    return theta[7] > 0 and _stationary(theta[0], theta[1], theta[2], theta[4], theta[7], variant == "IG")


@njit(cache=True)
def _recursion(theta, r, x, mu0, ig, mu, eps):
    n = r.shape[0]
    b1, b2, b3 = theta[0], theta[1], theta[2]
    mu[0] = mu0
    for t in range(1, n):
        if ig:
            rad = b1 + b2 * mu[t - 1] * mu[t - 1] + b3 * x[t - 1] * x[t - 1]
            if not rad >= 0.0:
                return NEG_RADICAND
            mu[t] = -math.sqrt(rad)
        else:
            mu[t] = b1 + b2 * mu[t - 1] + b3 * x[t - 1]
    for t in range(n):
        m = mu[t]
        if not math.isfinite(m):
            return NONFINITE
        if m >= 0.0:
            return SIGN_VIOLATION
        if m > -DIV_GUARD:
            return DIV_GUARDED
        eps[t] = r[t] / m
    return OK


@njit(cache=True)
def _measurement(theta, x, mu, eps, ig, u):
    n = x.shape[0]
    xi, phi, t1, t2 = theta[3], theta[4], theta[5], theta[6]
    e2bar = 0.0
    for t in range(n):
        e2bar += eps[t] * eps[t]
    e2bar /= n
    for t in range(n):
        e2 = eps[t] * eps[t]
        if ig:
            u[t] = x[t] * x[t] - xi - phi * mu[t] * mu[t] - t1 * eps[t] - t2 * (e2 - e2bar)
        else:
            u[t] = x[t] - xi - phi * abs(mu[t]) - t1 * eps[t] - t2 * (e2 - e2bar)
    return e2bar


@njit(cache=True)
def loglik_kernel(theta, tau, alpha, r, x, mu0, ig):
    """Return ``(loglik, quantile_loss, status)``; loglik is -inf unless status is OK.

    Single pass: with ``c_t = u_t - tau2 * e2bar`` the residual sum of squares
    is ``sum c^2 + 2 tau2 e2bar sum c + n (tau2 e2bar)^2``.
    """
    n = r.shape[0]
    b1, b2, b3 = theta[0], theta[1], theta[2]
    xi, phi, t1, t2 = theta[3], theta[4], theta[5], theta[6]
    als = 0.0
    qloss = 0.0
    sum_c = 0.0
    sum_c2 = 0.0
    sum_e2 = 0.0
    m = mu0
    for t in range(n):
        if t > 0:
            if ig:
                rad = b1 + b2 * m * m + b3 * x[t - 1] * x[t - 1]
                if not rad >= 0.0:
                    return -np.inf, np.inf, NEG_RADICAND
                m = -math.sqrt(rad)
            else:
                m = b1 + b2 * m + b3 * x[t - 1]
        if not math.isfinite(m):
            return -np.inf, np.inf, NONFINITE
        if m >= 0.0:
            return -np.inf, np.inf, SIGN_VIOLATION
        if m > -DIV_GUARD:
            return -np.inf, np.inf, DIV_GUARDED
        ep = r[t] / m
        e2 = ep * ep
        sum_e2 += e2
        if ig:
            c = x[t] * x[t] - xi - phi * m * m - t1 * ep - t2 * e2
        else:
            c = x[t] - xi + phi * m - t1 * ep - t2 * e2
        sum_c += c
        sum_c2 += c * c
        e = r[t] - m
        if e < 0.0:
            als += (1.0 - tau) * e * e
            qloss += (alpha - 1.0) * e
        else:
            als += tau * e * e
            qloss += alpha * e
    k = t2 * sum_e2 / n
    ss = sum_c2 + 2.0 * k * sum_c + n * k * k
    if not als > 0.0:
        return -np.inf, qloss, NONFINITE
    s2 = theta[7] * theta[7]
    ll = -0.5 * n * math.log(als) - 0.5 * (n * LOG_2PI + n * math.log(s2) + ss / s2)
    if not math.isfinite(ll):
        return -np.inf, qloss, NONFINITE
    return ll, qloss, OK


@njit(cache=True)
def forecast_next(theta, mu_last, x_last, ig):
    if ig:
        return -math.sqrt(theta[0] + theta[1] * mu_last * mu_last + theta[2] * x_last * x_last)
    return theta[0] + theta[1] * mu_last + theta[2] * x_last


@dataclass
class FilterOutput:
    mu: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    eps2_bar: float
    loglik_r: float
    loglik_x: float

    @property
    def loglik(self) -> float:
        return self.loglik_r + self.loglik_x


def _prepare(params, r, x):
    if isinstance(params, RecareParams):
        theta, tau, variant = params.as_array(), params.tau, params.variant
    else:
        raise TypeError("params must be RecareParams")
    r = np.ascontiguousarray(r, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    if r.shape != x.shape or r.ndim != 1:
        raise ValueError("r and x must be aligned 1-d series")
    if r.shape[0] < 2:
        raise ValueError("need at least two observations")
    return theta, tau, variant, r, x


def _run_filter(params: RecareParams, r, x, mu0: float, ig: bool) -> FilterOutput:
    theta, tau, _, r, x = _prepare(params, r, x)
    if not mu0 < 0:
        raise SignViolationError("initial expectile must be negative")
    n = r.shape[0]
    mu = np.empty(n)
    eps = np.empty(n)
    status = _recursion(theta, r, x, float(mu0), ig, mu, eps)
    if status == SIGN_VIOLATION:
        raise SignViolationError("expectile recursion produced a non-negative value")
    if status == DIV_GUARDED:
        raise DivisionGuardError(f"|mu_t| below {DIV_GUARD}")
    if status != OK:
        raise FilterError(f"expectile recursion failed (status {status})")
    u = np.empty(n)
    e2bar = _measurement(theta, x, mu, eps, ig, u)
    s2 = params.sigma_u**2
    loglik_x = -0.5 * float(np.sum(LOG_2PI + math.log(s2) + u * u / s2))
    e = r - mu
    als = float(np.sum(np.where(e < 0, 1.0 - tau, tau) * e * e))
    loglik_r = care_loglik_from_loss(als, n)
    return FilterOutput(mu, u, eps, float(e2bar), loglik_r, loglik_x)


def filter_sav(params: RecareParams, r, x, mu0: float) -> FilterOutput:
    """Re-CARE-SAV: ``mu_t = b1 + b2 mu_{t-1} + b3 x_{t-1}`` with the
    absolute-expectile measurement equation."""
    return _run_filter(params, r, x, mu0, False)


def filter_ig(params: RecareParams, r, x, mu0: float) -> FilterOutput:
    """Re-CARE-IG: ``mu_t = -sqrt(b1 + b2 mu_{t-1}^2 + b3 x_{t-1}^2)``; the
    measurement equation is in squared units."""
    return _run_filter(params, r, x, mu0, True)


def run_filter(params: RecareParams, r, x, mu0: float) -> FilterOutput:
    return _run_filter(params, r, x, mu0, params.variant == "IG")


def joint_loglik(params: RecareParams, r, x, mu0: float, variant: Variant | None = None) -> float:
    """CARE plus measurement log-likelihood; ``-inf`` when the filter fails."""
    if variant is not None and variant != params.variant:
        params = params.replace(variant=variant)
    theta, tau, variant, r, x = _prepare(params, r, x)
    ll, _, _ = loglik_kernel(theta, tau, params.alpha, r, x, float(mu0), variant == "IG")
    return float(ll)


def initial_expectile(r, alpha: float) -> float:
    """Recursion start value: the empirical alpha-quantile of the returns."""
    q = float(np.quantile(np.asarray(r, dtype=float), alpha))
    return q if q < -DIV_GUARD else -max(abs(q), 1e-4)


def default_init(r, x, alpha: float, variant: Variant = "SAV") -> np.ndarray:
    """Support-interior starting vector scaled to the data.

    ``beta3`` and ``xi`` are moment-matched so the implied mean expectile
    equals the empirical alpha-quantile and the mean residual is zero.  If
    that SAV path leaves the negative half-line (possible when the measure
    takes negative values) ``beta3`` is shrunk toward zero, with ``beta1``
    keeping the mean level.
    """
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    q = initial_expectile(r, alpha)
    b2, phi = 0.7, 0.4
    sd = float(np.std(x, ddof=1))
    if variant == "IG":
        xm2 = float(np.mean(x * x))
        b1 = 0.01
        b3 = max((q * q * (1 - b2) - b1) / xm2, 1e-4)
        phi = min(phi, 0.9 * (1 - b2) / b3)
        xi = xm2 - phi * q * q
        sd = float(np.std(x * x, ddof=1))
    else:
        xm = float(np.mean(x))
        b1 = -0.01
        b3 = (q * (1 - b2) - b1) / xm if xm > 0 else -0.01
        xi = xm - phi * abs(q)
        mu, eps = np.empty_like(r), np.empty_like(r)
        for shrink in (1.0, 0.75, 0.5, 0.25, 0.0):
            theta = np.array([q * (1 - b2) - shrink * b3 * xm, b2, shrink * b3])
            if _recursion(theta, r, x, q, False, mu, eps) == OK:
                b1, b3 = theta[0], theta[2]
                break
    return np.array([b1, b2, b3, xi, phi, 0.01, 0.01, max(sd, 1e-3)])
