"""Pre-inflection analytics for a Poisson purchase process.

Before the inflection point purchases arrive with iid exponential gaps, so
the n-fold convolution of the gap distribution is an Erlang(n, rate) law
and the count N_t is Poisson(rate * t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp


@dataclass(frozen=True)
class RenewalModel:
    rate: float
    fit_r2: float = 1.0
    n_obs: int = 0

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be positive and finite, got {self.rate}")
        if not 0 <= self.fit_r2 <= 1:
            raise ValueError(f"fit_r2 must lie in [0, 1], got {self.fit_r2}")

    @property
    def mean_interarrival(self) -> float:
        return 1.0 / self.rate


def fit_exponential(interarrivals) -> RenewalModel:
    """Maximum-likelihood exponential fit with an ECDF-based R^2."""
    x = np.asarray(interarrivals, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 interarrival times")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("interarrival times must be positive and finite")
    rate = 1.0 / x.mean()
    xs = np.sort(x)
    ecdf = np.searchsorted(xs, xs, side="right") / xs.size
    fitted = -np.expm1(-rate * xs)
    ss_tot = np.sum((ecdf - ecdf.mean()) ** 2)
    r2 = 0.0 if ss_tot == 0 else 1.0 - np.sum((ecdf - fitted) ** 2) / ss_tot
    return RenewalModel(rate, float(np.clip(r2, 0.0, 1.0)), int(x.size))


def _check(n, rate, t):
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if not t >= 0:
        raise ValueError(f"t must be non-negative, got {t}")


def _log_poisson_terms(k, mean):
    return k * math.log(mean) - mean - gammaln(k + 1)


def _erlang_cdf_sf(n: int, rate: float, t: float) -> tuple[float, float]:
    """(P(S_n <= t), P(S_n > t)) each accurate to relative precision.

    P(S_n > t) = P(N_t < n) is the Poisson lower tail, P(S_n <= t) the
    upper tail. Whichever tail is the smaller one is summed directly in
    log space and the other is obtained as its complement.
    """
    x = rate * t
    if x == 0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    if x < n:
        # upper tail: terms decrease for k >= n > x
        chunk, k0, logs = 256, n, []
        while True:
            k = np.arange(k0, k0 + chunk, dtype=float)
            terms = _log_poisson_terms(k, x)
            logs.append(terms)
            if terms[-1] < terms[0] - 50 or terms[-1] < -800:
                break
            k0 += chunk
            chunk *= 2
        log_upper = float(logsumexp(np.concatenate(logs)))
        return math.exp(log_upper), -math.expm1(log_upper)
    log_lower = float(logsumexp(_log_poisson_terms(np.arange(n, dtype=float), x)))
    return -math.expm1(log_lower), math.exp(log_lower)


def erlang_cdf(n: int, rate: float, t: float) -> float:
    """P(S_n <= t) for S_n a sum of n iid Exponential(rate) gaps."""
    _check(n, rate, t)
    return _erlang_cdf_sf(int(n), float(rate), float(t))[0]


def erlang_sf(n: int, rate: float, t: float) -> float:
    """P(S_n > t) = P(fewer than n arrivals by t)."""
    _check(n, rate, t)
    return _erlang_cdf_sf(int(n), float(rate), float(t))[1]


def _rate(model) -> float:
    return model.rate if isinstance(model, RenewalModel) else float(model)


def failure_probability(model, tipping_point: int, lifetime: float, include_zero: bool = True) -> float:
    """Probability that fewer than ``tipping_point`` purchases occur by ``lifetime``.

    ``include_zero=False`` drops the zero-purchase outcome, i.e. returns
    F_1(L) - F_theta(L); the default returns 1 - F_theta(L).
    """
    rate = _rate(model)
    if int(tipping_point) != tipping_point or tipping_point < 1:
        raise ValueError("tipping_point must be a positive integer")
    if not lifetime > 0:
        raise ValueError("lifetime must be positive")
    _, sf = _erlang_cdf_sf(int(tipping_point), rate, float(lifetime))
    if include_zero:
        return sf
    return max(sf - math.exp(-rate * lifetime), 0.0)


def conditional_failure_probability(
    model,
    tipping_point: int,
    n1: int,
    t1: float,
    lifetime: float,
    include_zero: bool = True,
) -> float:
    """Failure probability given ``n1`` purchases observed at time ``t1``."""
    rate = _rate(model)
    if not 0 <= t1 <= lifetime:
        raise ValueError(f"need 0 <= t1 <= lifetime, got t1={t1}, lifetime={lifetime}")
    if n1 < 0:
        raise ValueError("n1 must be non-negative")
    if int(tipping_point) != tipping_point or tipping_point < 1:
        raise ValueError("tipping_point must be a positive integer")
    if n1 >= tipping_point:
        return 0.0
    remaining = float(lifetime - t1)
    need = int(tipping_point - n1)
    _, sf = _erlang_cdf_sf(need, rate, remaining)
    if include_zero:
        return sf
    return max(sf - math.exp(-rate * remaining), 0.0)


def tipping_time_density(tipping_point: int, rate: float, t):
    """Gamma(shape=tipping_point, rate) density of the tipping time."""
    _check(tipping_point, rate, np.min(t))
    t = np.asarray(t, dtype=float)
    k = int(tipping_point)
    with np.errstate(divide="ignore", invalid="ignore"):
        logpdf = k * math.log(rate) + (k - 1) * np.log(t) - rate * t - gammaln(k)
    out = np.exp(logpdf)
    if k == 1:
        out = np.where(t == 0, rate, out)
    return float(out) if out.ndim == 0 else out


def tipping_time_cdf(tipping_point: int, rate: float, t):
    """Vectorised :func:`erlang_cdf` over ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.array([erlang_cdf(tipping_point, rate, float(v)) for v in t.ravel()])
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def implied_rate(mean_tipping_point: float, mean_tipping_time: float) -> float:
    """Rate consistent with E[S_theta] = theta / rate."""
    return mean_tipping_point / mean_tipping_time
