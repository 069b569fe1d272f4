"""Post-inflection analytics: novelty decay and multiplicative growth.

After the inflection point each hourly step multiplies the count by
(1 + r(t) X_t), where r is the novelty-decay factor and X_t iid positive
noise. Averaging log counts over a cohort aligned at the inflection time
gives the hourly decay table; an exponential law exp(a t + b) is fitted to
it for extrapolation.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .deal_model import Dataset, PurchaseTrace

log = logging.getLogger(__name__)


class DecayEstimationError(ValueError):
    """Raised when a cohort cannot support decay estimation."""


@dataclass(frozen=True, eq=False)
class NoveltyDecay:
    """Hourly decay table with an optional exponential fit.

    ``t`` holds hours after inflection (1, 2, ...) and ``r`` the decay
    factor, normalised so that r(1) = 1. Beyond the table, r follows
    exp(a t + b) when the fit is available.
    """

    t: np.ndarray
    r: np.ndarray
    a: float | None = None
    b: float | None = None
    fit_r2: float | None = None

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        r = np.array(self.r, dtype=float).reshape(-1)
        if t.shape != r.shape or t.size == 0:
            raise ValueError("decay table needs matching, non-empty t and r")
        if t[0] != 1 or not math.isclose(r[0], 1.0, rel_tol=1e-9):
            raise ValueError("decay table must start at t=1 with r=1")
        if np.any(r < 0):
            raise ValueError("decay factors must be non-negative")
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "r", r)

    def __eq__(self, other):
        if not isinstance(other, NoveltyDecay):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.r, other.r)
            and (self.a, self.b, self.fit_r2) == (other.a, other.b, other.fit_r2)
        )

    __hash__ = None

    @classmethod
    def exponential(cls, a: float, b: float, horizon: int = 1) -> "NoveltyDecay":
        """Decay with r(1) = 1 and r(t) = exp(a t + b) for t >= 2.

        ``horizon`` sets how many hours are materialised in the table;
        later hours use the same law.
        """
        t = np.arange(1, max(int(horizon), 1) + 1, dtype=float)
        r = np.exp(a * t + b)
        r[0] = 1.0
        return cls(t, r, a, b, None)

    @property
    def horizon(self) -> int:
        return int(self.t[-1])

    def table(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.r.tolist()))

    def __call__(self, hours):
        """r at integer hours after inflection (table inside, fit beyond)."""
        h = np.asarray(hours, dtype=float)
        out = np.interp(h, self.t, self.r)
        beyond = h > self.t[-1]
        if np.any(beyond):
            if self.a is None or self.b is None:
                raise ValueError(
                    f"decay table ends at t={self.horizon}; fit it before extrapolating"
                )
            out = np.where(beyond, np.exp(self.a * h + self.b), out)
        out = np.where(h < 1, 0.0, out)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GrowthNoise:
    """Distribution of the hourly growth multiplier X_t.

    ``lognormal``: log X ~ Normal(mu, sigma). ``constant``: X = mu, which
    allows a degenerate X = 0.
    """

    family: str = "lognormal"
    mu: float = math.log(0.25)
    sigma: float = 0.5

    def __post_init__(self):
        if self.family not in ("lognormal", "constant"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.family == "constant" and self.mu < 0:
            raise ValueError("constant growth multiplier must be non-negative")

    @property
    def mean(self) -> float:
        if self.family == "constant":
            return self.mu
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "constant":
            return np.full(size, float(self.mu))
        return rng.lognormal(self.mu, self.sigma, size)


@dataclass(frozen=True)
class PropagationModel:
    decay: NoveltyDecay
    noise: GrowthNoise = GrowthNoise()
    step_hours: float = 1.0

    def __post_init__(self):
        if not self.step_hours > 0:
            raise ValueError("step_hours must be positive")


def align_at_inflection(
    ds: Dataset,
    horizon: int,
    inflection=None,
) -> Dataset:
    """Re-index traces to hours 0..horizon after their inflection point.

    ``inflection`` may be None (use each trace's tipping time), a number
    (same hour for every deal) or a mapping deal_id -> hour (None entries
    are skipped). Traces that never inflect or end before inflection +
    horizon are left out.
    """
    out = []
    steps = np.arange(int(horizon) + 1, dtype=float)
    for tr in ds:
        if inflection is None:
            t0 = tr.tipped_at
        elif isinstance(inflection, dict):
            t0 = inflection.get(tr.deal_id)
        else:
            t0 = float(inflection)
        if t0 is None or len(tr) == 0:
            continue
        if tr.t[-1] + 1e-9 < t0 + horizon:
            continue
        out.append(PurchaseTrace(tr.deal_id, steps, tr.counts_at(t0 + steps)))
    return Dataset(tuple(out), ds.provenance)


def _log_count_matrix(cohort: Dataset, horizon: int) -> np.ndarray:
    rows, skipped = [], []
    steps = np.arange(int(horizon) + 1, dtype=float)
    for tr in cohort:
        n = tr.counts_at(steps)
        if np.any(n <= 0):
            skipped.append(tr.deal_id)
            continue
        rows.append(np.log(n))
    if skipped:
        log.warning("excluded %d trace(s) with zero purchases inside the horizon", len(skipped))
    if not rows:
        raise DecayEstimationError("no usable traces in cohort")
    return np.vstack(rows)


def estimate_decay(cohort: Dataset, horizon: int) -> NoveltyDecay:
    """Decay table r(1..horizon) from a cohort aligned at inflection.

    r(t) = (E log N_t - E log N_{t-1}) / (E log N_1 - E log N_0), with the
    expectations taken as cohort means.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    mean_log = _log_count_matrix(cohort, horizon).mean(axis=0)
    inc = np.diff(mean_log)
    if not inc[0] > 0:
        raise DecayEstimationError("cohort shows no growth in the first hour after inflection")
    r = inc / inc[0]
    r[0] = 1.0
    return NoveltyDecay(np.arange(1, horizon + 1), np.clip(r, 0.0, None))


def fit_decay_exponential(decay: NoveltyDecay, include_anchor: bool = False) -> NoveltyDecay:
    """Least-squares line through (t, log r(t)).

    The t=1 point is fixed at 1 by normalisation and is left out of the fit
    unless ``include_anchor`` is set. Points with r <= 0 are dropped.
    """
    t, r = decay.t, decay.r
    keep = r > 0
    if not include_anchor:
        keep &= t > 1
    if keep.sum() < 3:
        raise DecayEstimationError("need at least 3 positive decay points to fit")
    x, y = t[keep], np.log(r[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return replace(decay, a=float(slope), b=float(intercept), fit_r2=float(r2))


def fit_standard_errors(decay: NoveltyDecay, include_anchor: bool = False) -> tuple[float, float]:
    """Standard errors of (a, b) for the fit above."""
    t, r = decay.t, decay.r
    keep = r > 0
    if not include_anchor:
        keep &= t > 1
    x, y = t[keep], np.log(r[keep])
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(x.size - 2, 1)
    cov = np.linalg.inv(X.T @ X) * (resid @ resid) / dof
    return float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1]))


def expected_log_growth(model: PropagationModel, hours: int) -> float:
    """E[log N_T - log N_0] ~= sum_{t=1}^{T} r(t) E[X]."""
    T = int(hours)
    if T <= 0:
        return 0.0
    r = model.decay(np.arange(1, T + 1))
    return float(np.sum(r) * model.noise.mean)


def decay_csv_text(decay: NoveltyDecay) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_hours", "r"])
    for t, r in decay.table():
        w.writerow([repr(t), repr(r)])
    return buf.getvalue()


def parse_decay_csv(text: str) -> NoveltyDecay:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["t_hours", "r"]:
        raise ValueError("expected header t_hours,r")
    t = [float(a) for a, _ in rows[1:]]
    r = [float(b) for _, b in rows[1:]]
    return NoveltyDecay(t, r)


def decay_to_dict(decay: NoveltyDecay) -> dict:
    return {
        "t_hours": decay.t.tolist(),
        "r": decay.r.tolist(),
        "a": decay.a,
        "b": decay.b,
        "fit_r2": decay.fit_r2,
    }


def decay_from_dict(d: dict) -> NoveltyDecay:
    if "t_hours" in d:
        return NoveltyDecay(d["t_hours"], d["r"], d.get("a"), d.get("b"), d.get("fit_r2"))
    return NoveltyDecay.exponential(d["a"], d["b"], d.get("horizon", 1))
