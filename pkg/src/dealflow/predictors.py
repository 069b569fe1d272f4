"""Purchase-count predictors: two baselines, attribute regression (MLR),
the log-linear social-propagation predictor (SP) and the hybrid policies."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .deal_model import Dataset, DealAttributes, PurchaseTrace

log = logging.getLogger(__name__)

BASE_FEATURES = ("intercept", "log_tipping_point", "featured", "duration", "limited", "price", "discount")
CATEGORICAL_FIELDS = ("launch_day", "category", "city")
# singular values below this fraction of the largest are treated as zero
RCOND = 1e-10


class TrainingError(ValueError):
    """Raised when a predictor cannot be trained on the given data."""


class RankDeficiencyWarning(UserWarning):
    pass


def _to_int(x: float) -> int:
    if not math.isfinite(x):
        raise OverflowError(f"prediction {x} is not finite")
    return int(max(0.0, math.floor(x + 0.5)))


# ---------------------------------------------------------------- baselines


def predict_baseline1(n_t1: int) -> int:
    if n_t1 < 0:
        raise ValueError("purchase counts are non-negative")
    return int(n_t1)


@dataclass(frozen=True)
class Baseline2Params:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("baseline2 parameters must be finite")


def train_baseline2(pairs) -> Baseline2Params:
    """OLS fit of n_t2 = alpha * n_t1 + beta."""
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if arr.shape[0] < 2:
        raise TrainingError("baseline2 needs at least 2 (n_t1, n_t2) pairs")
    x, y = arr[:, 0], arr[:, 1]
    if np.all(x == x[0]):
        raise TrainingError("baseline2 design is degenerate: all n_t1 equal")
    xc = x - x.mean()
    alpha = float(xc @ (y - y.mean()) / (xc @ xc))
    beta = float(y.mean() - alpha * x.mean())
    return Baseline2Params(alpha, beta)


def predict_baseline2(params: Baseline2Params, n_t1: int) -> int:
    return _to_int(params.alpha * n_t1 + params.beta)


# ---------------------------------------------------------------- MLR


@dataclass(frozen=True)
class AttributeEncoder:
    launch_day: tuple[str, ...] = ()
    category: tuple[str, ...] = ()
    city: tuple[str, ...] = ()

    @classmethod
    def fit(cls, attrs) -> "AttributeEncoder":
        attrs = list(attrs)
        return cls(*(tuple(sorted({getattr(a, f) for a in attrs})) for f in CATEGORICAL_FIELDS))

    def vocab(self, name: str) -> tuple[str, ...]:
        return getattr(self, name)

    @property
    def feature_names(self) -> list[str]:
        names = list(BASE_FEATURES)
        for f in CATEGORICAL_FIELDS:
            names += [f"{f}={v}" for v in self.vocab(f)]
        return names

    @property
    def n_blocks(self) -> int:
        return sum(1 for f in CATEGORICAL_FIELDS if self.vocab(f))


def encode_attributes(a: DealAttributes, enc: AttributeEncoder) -> np.ndarray:
    """[1, log theta, f, L, l, p, d, one-hot(w), one-hot(c), one-hot(g)].

    A category missing from the encoder's vocabulary yields an all-zero block.
    """
    if a.tipping_point < 1:
        raise ValueError("tipping point must be >= 1")
    head = [
        1.0,
        math.log(a.tipping_point),
        float(a.featured),
        float(a.duration_hours),
        float(a.limited),
        float(a.price),
        float(a.discount_pct),
    ]
    blocks = []
    for f in CATEGORICAL_FIELDS:
        vocab = enc.vocab(f)
        block = np.zeros(len(vocab))
        value = getattr(a, f)
        if value in vocab:
            block[vocab.index(value)] = 1.0
        blocks.append(block)
    return np.concatenate([np.array(head), *blocks])


@dataclass(frozen=True, eq=False)
class MlrModel:
    coefficients: np.ndarray
    encoder: AttributeEncoder
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    rank: int
    n_rows: int
    r_squared: float
    adj_r_squared: float
    residual_norm: float

    @property
    def feature_names(self) -> list[str]:
        return self.encoder.feature_names

    def coefficient_table(self) -> list[tuple[str, float, float, float, float]]:
        return list(
            zip(
                self.feature_names,
                self.coefficients.tolist(),
                self.std_errors.tolist(),
                self.t_values.tolist(),
                self.p_values.tolist(),
            )
        )

    def categorical_coefficients(self, name: str) -> dict[str, float]:
        names = self.feature_names
        prefix = f"{name}="
        return {n[len(prefix):]: float(c) for n, c in zip(names, self.coefficients) if n.startswith(prefix)}


def fit_ols(X: np.ndarray, y: np.ndarray, rcond: float = RCOND):
    """Minimum-norm least squares with classical inference.

    Returns (beta, std_errors, rank, residual_sum_of_squares). Standard
    errors use the pseudo-inverse of X'X, so they stay finite for
    non-identifiable directions.
    """
    beta, _, rank, sv = np.linalg.lstsq(X, y, rcond=rcond)
    resid = y - X @ beta
    rss = float(resid @ resid)
    dof = X.shape[0] - rank
    sigma2 = rss / dof if dof > 0 else float("nan")
    cov = sigma2 * np.linalg.pinv(X.T @ X, rcond=rcond, hermitian=True)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return beta, se, int(rank), rss


def train_mlr(ds: Dataset, target_hours: float | None = None) -> MlrModel:
    """Regress log N on encoded attributes.

    The response is the final count, or the count at ``target_hours``.
    """
    rows = []
    for tr in ds:
        if tr.attributes is None:
            raise TrainingError(f"trace {tr.deal_id!r} has no attributes")
        n = tr.final_count if target_hours is None else tr.count_at(target_hours)
        if n < 1:
            raise TrainingError(f"trace {tr.deal_id!r} has no purchases; log undefined")
        rows.append((tr.attributes, n))
    if len(rows) < 2:
        raise TrainingError("MLR needs at least 2 rows")
    enc = AttributeEncoder.fit(a for a, _ in rows)
    X = np.vstack([encode_attributes(a, enc) for a, _ in rows])
    y = np.log([n for _, n in rows])
    beta, se, rank, rss = fit_ols(X, y)

    # each non-empty one-hot block sums to the intercept column
    expected_rank = min(X.shape[1] - enc.n_blocks, X.shape[0])
    if rank < expected_rank:
        warnings.warn(
            f"MLR design is rank deficient (rank {rank} of {X.shape[1]} columns); "
            "using the minimum-norm solution",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    n, dof = X.shape[0], X.shape[0] - rank
    with np.errstate(divide="ignore", invalid="ignore"):
        t_values = np.where(se > 0, beta / se, np.nan)
    p_values = 2 * stats.t.sf(np.abs(t_values), dof) if dof > 0 else np.full_like(beta, np.nan)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - rss / ss_tot if ss_tot > 0 else 1.0
    adj = 1 - (1 - r2) * (n - 1) / dof if dof > 0 and rank > 1 else r2
    return MlrModel(beta, enc, se, t_values, p_values, rank, n, r2, adj, math.sqrt(rss))


def predict_mlr(model: MlrModel, a: DealAttributes) -> int:
    return _to_int(math.exp(float(encode_attributes(a, model.encoder) @ model.coefficients)))


# ---------------------------------------------------------------- SP


@dataclass(frozen=True)
class SpEntry:
    t1: float
    t2: float
    slope: float
    intercept: float
    r_squared: float
    n: int
    slope_se: float = float("nan")
    intercept_se: float = float("nan")


@dataclass
class SpModel:
    entries: dict[tuple[float, float], SpEntry] = field(default_factory=dict)

    def add(self, entry: SpEntry) -> None:
        self.entries[(float(entry.t1), float(entry.t2))] = entry

    def get(self, t1: float, t2: float) -> SpEntry:
        try:
            return self.entries[(float(t1), float(t2))]
        except KeyError:
            raise KeyError(f"SP model not trained for t1={t1}, t2={t2}") from None

    def pairs(self) -> list[tuple[float, float]]:
        return sorted(self.entries)


def train_sp(ds: Dataset, t1: float, t2: float) -> SpEntry:
    """OLS of log N_t2 on log N_t1 over traces with purchases at both times."""
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    x, y, skipped = [], [], 0
    for tr in ds:
        a, b = tr.count_at(t1), tr.count_at(t2)
        if a < 1 or b < 1:
            skipped += 1
            continue
        x.append(math.log(a))
        y.append(math.log(b))
    if skipped:
        log.warning("SP(%g->%g): excluded %d trace(s) with zero purchases", t1, t2, skipped)
    if len(x) < 2:
        raise TrainingError(f"SP({t1}->{t2}) needs at least 2 usable traces, got {len(x)}")
    x, y = np.array(x), np.array(y)
    if np.all(x == x[0]):
        raise TrainingError(f"SP({t1}->{t2}) design is degenerate: all log N_t1 equal")
    X = np.column_stack([np.ones_like(x), x])
    beta, se, _, rss = fit_ols(X, y)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - rss / ss_tot if ss_tot > 0 else 1.0
    return SpEntry(float(t1), float(t2), float(beta[1]), float(beta[0]), r2, int(x.size), float(se[1]), float(se[0]))


def predict_sp(model, n_t1: int, t1: float | None = None, t2: float | None = None) -> int:
    """exp(slope log n_t1 + intercept); zero counts fall back to baseline1."""
    entry = model if isinstance(model, SpEntry) else model.get(t1, t2)
    if n_t1 < 1:
        log.warning("SP called with n_t1=0; falling back to baseline1")
        return predict_baseline1(n_t1)
    return _to_int(math.exp(entry.slope * math.log(n_t1) + entry.intercept))


# ---------------------------------------------------------------- hybrid


@dataclass(frozen=True)
class HybridPolicy:
    """Chooses baseline1 or SP for a trace prefix.

    ``groupon``: baseline1 for very popular deals (first-hour purchases
    above ``popularity_override``) and for deals not yet tipped, SP
    otherwise. ``livingsocial``: baseline1 before ``cutoff_hours``, SP after.
    """

    mode: str = "groupon"
    cutoff_hours: float = 3.0
    popularity_override: int = 100

    def __post_init__(self):
        if self.mode not in ("groupon", "livingsocial"):
            raise ValueError(f"unknown hybrid mode {self.mode!r}")
        if self.cutoff_hours < 0:
            raise ValueError("cutoff_hours must be >= 0")

    def choose(self, prefix: PurchaseTrace, t1: float, tipping_point: int | None = None) -> str:
        if self.mode == "livingsocial":
            return "baseline1" if t1 < self.cutoff_hours else "sp"
        if prefix.count_at(min(1.0, t1)) > self.popularity_override:
            return "baseline1"
        if tipping_point is None:
            if prefix.attributes is None:
                raise ValueError("groupon policy needs the deal's tipping point")
            tipping_point = prefix.attributes.tipping_point
        return "sp" if prefix.count_at(t1) >= tipping_point else "baseline1"


def predict_hybrid(
    policy: HybridPolicy,
    prefix: PurchaseTrace,
    t1: float,
    t2: float,
    sp_model,
    tipping_point: int | None = None,
) -> int:
    n_t1 = prefix.count_at(t1)
    if policy.choose(prefix, t1, tipping_point) == "baseline1":
        return predict_baseline1(n_t1)
    if sp_model is None:
        raise ValueError("hybrid policy selected SP but no SP model was supplied")
    return predict_sp(sp_model, n_t1, t1, t2)


# ---------------------------------------------------------------- serialization


def models_to_dict(
    t2: float,
    baseline2: dict[float, Baseline2Params] | None = None,
    sp: SpModel | None = None,
    mlr: MlrModel | None = None,
) -> dict:
    out: dict = {"t2": t2}
    if baseline2:
        out["baseline2"] = [{"t1": t1, "alpha": p.alpha, "beta": p.beta} for t1, p in sorted(baseline2.items())]
    if sp is not None:
        out["sp"] = [
            {
                "t1": e.t1,
                "t2": e.t2,
                "slope": e.slope,
                "intercept": e.intercept,
                "r_squared": e.r_squared,
                "n": e.n,
                "slope_se": e.slope_se,
                "intercept_se": e.intercept_se,
            }
            for _, e in sorted(sp.entries.items())
        ]
    if mlr is not None:
        out["mlr"] = {
            "features": mlr.feature_names,
            "coefficients": mlr.coefficients.tolist(),
            "std_errors": mlr.std_errors.tolist(),
            "t_values": mlr.t_values.tolist(),
            "p_values": mlr.p_values.tolist(),
            "rank": mlr.rank,
            "n_rows": mlr.n_rows,
            "r_squared": mlr.r_squared,
            "adj_r_squared": mlr.adj_r_squared,
            "residual_norm": mlr.residual_norm,
            "vocabularies": {f: list(mlr.encoder.vocab(f)) for f in CATEGORICAL_FIELDS},
        }
    return out


def models_from_dict(d: dict):
    """Inverse of :func:`models_to_dict`: (t2, baseline2, sp, mlr)."""
    b2 = {float(e["t1"]): Baseline2Params(e["alpha"], e["beta"]) for e in d.get("baseline2", [])}
    sp = None
    if "sp" in d:
        sp = SpModel()
        for e in d["sp"]:
            sp.add(SpEntry(**e))
    mlr = None
    if "mlr" in d:
        m = d["mlr"]
        enc = AttributeEncoder(*(tuple(m["vocabularies"][f]) for f in CATEGORICAL_FIELDS))

        def arr(key):
            return np.array([np.nan if v is None else v for v in m[key]], dtype=float)

        mlr = MlrModel(
            arr("coefficients"),
            enc,
            arr("std_errors"),
            arr("t_values"),
            arr("p_values"),
            m["rank"],
            m["n_rows"],
            m["r_squared"],
            m["adj_r_squared"],
            m["residual_norm"],
        )
    return float(d["t2"]), b2, sp, mlr
