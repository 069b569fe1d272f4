"""Synthetic deal cohorts from the two-phase purchase model.

Phase one is a (possibly diurnally modulated) Poisson process. Once the
deal inflects, the count grows hourly by a factor (1 + r(t) X_t). Every
deal draws from its own random stream seeded by (seed, deal_index), so a
cohort is identical whatever the order or parallelism of generation.
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .deal_model import TIME_EPS, Dataset, DealAttributes, PurchaseTrace
from .propagation import GrowthNoise, NoveltyDecay, PropagationModel, decay_from_dict, decay_to_dict

_FIXED = re.compile(r"^fixed\(\s*([0-9.eE+-]+)\s*\)$")


class SimConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class SimConfig:
    """Parameters of a synthetic cohort.

    ``inflection_rule`` is ``"tipping"`` (propagation starts at the first
    sample that reaches the tipping point) or ``"fixed(h)"``. A positive
    ``scale_dispersion`` gives every deal a popularity scale
    s = exp(scale_dispersion * Z) that multiplies both its purchase rate and
    its tipping point.
    """

    rate: float = 2.1
    tipping_point: int = 22
    lifetime: float = 24.0
    dt: float = 1.0 / 3.0
    propagation: PropagationModel = field(
        default_factory=lambda: PropagationModel(NoveltyDecay.exponential(-0.21, -2.0, 16))
    )
    inflection_rule: str = "tipping"
    seasonality: tuple[float, ...] | None = None
    launch_hour: int = 0
    max_sales: int | None = None
    seed: int = 0
    scale_dispersion: float = 0.0

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise SimConfigError("rate", "must be positive")
        if int(self.tipping_point) != self.tipping_point or self.tipping_point < 1:
            raise SimConfigError("tipping_point", "must be a positive integer")
        if not self.lifetime > 0:
            raise SimConfigError("lifetime", "must be positive")
        if not self.dt > 0:
            raise SimConfigError("dt", "must be positive")
        if self.inflection_rule != "tipping":
            m = _FIXED.match(self.inflection_rule)
            if not m or not float(m.group(1)) >= 0:
                raise SimConfigError("inflection_rule", "must be 'tipping' or 'fixed(h)' with h >= 0")
        if self.seasonality is not None:
            s = np.asarray(self.seasonality, dtype=float)
            if s.shape != (24,) or np.any(s < 0):
                raise SimConfigError("seasonality", "needs 24 non-negative entries")
            if abs(s.mean() - 1.0) > 1e-9:
                raise SimConfigError("seasonality", "entries must average 1")
            object.__setattr__(self, "seasonality", tuple(float(v) for v in s))
        if not 0 <= self.launch_hour <= 23:
            raise SimConfigError("launch_hour", "must lie in 0-23")
        if self.max_sales is not None and self.max_sales < 1:
            raise SimConfigError("max_sales", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise SimConfigError("seed", "must be a 64-bit unsigned integer")
        if self.scale_dispersion < 0:
            raise SimConfigError("scale_dispersion", "must be >= 0")

    @property
    def fixed_inflection(self) -> float | None:
        m = _FIXED.match(self.inflection_rule)
        return float(m.group(1)) if m else None

    @classmethod
    def groupon(cls, **overrides) -> "SimConfig":
        return cls(**overrides)

    @classmethod
    def livingsocial(cls, **overrides) -> "SimConfig":
        base = dict(
            rate=10.0,
            tipping_point=1,
            propagation=PropagationModel(NoveltyDecay.exponential(-0.11, -0.28, 20)),
            inflection_rule="fixed(4)",
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["propagation"] = {
            "decay": decay_to_dict(self.propagation.decay),
            "noise": asdict(self.propagation.noise),
            "step_hours": self.propagation.step_hours,
        }
        d["seasonality"] = list(self.seasonality) if self.seasonality is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SimConfigError(sorted(unknown)[0], "unknown config field")
        if "propagation" in d:
            p = d["propagation"]
            try:
                decay = decay_from_dict(p.get("decay", {"a": -0.21, "b": -2.0, "horizon": 16}))
                noise = GrowthNoise(**p.get("noise", {}))
                d["propagation"] = PropagationModel(decay, noise, float(p.get("step_hours", 1.0)))
            except (KeyError, TypeError, ValueError) as exc:
                raise SimConfigError("propagation", str(exc)) from exc
        if d.get("seasonality") is not None:
            d["seasonality"] = tuple(d["seasonality"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise SimConfigError("config", str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SimResult:
    dataset: Dataset
    inflection: dict[str, float | None]
    tipping_times: dict[str, float | None]
    config: SimConfig

    @property
    def per_deal_inflection(self) -> list[tuple[str, float | None]]:
        return list(self.inflection.items())


def deal_rng(seed: int, deal_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(deal_index)]))


def _segments(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints covering [0, last grid time] and the grid's position in them."""
    k_last = int(math.floor(cfg.lifetime / cfg.dt + TIME_EPS))
    grid = np.arange(k_last + 1) * cfg.dt
    points = grid
    if cfg.seasonality is not None:
        hours = np.arange(1, int(math.ceil(grid[-1])) + 1, dtype=float)
        hours = hours[hours < grid[-1]]
        points = np.union1d(np.round(grid, 12), hours)
    grid_pos = np.searchsorted(points, grid - TIME_EPS)
    return points, grid_pos


def _simulate(cfg: SimConfig, deal_index: int):
    rng = deal_rng(cfg.seed, deal_index)
    scale = math.exp(cfg.scale_dispersion * rng.standard_normal())
    rate = cfg.rate * scale
    theta = max(1, int(round(cfg.tipping_point * scale)))
    cap = cfg.max_sales

    points, grid_pos = _segments(cfg)
    grid = points[grid_pos]
    starts, lengths = points[:-1], np.diff(points)
    seg_rate = np.full(starts.size, rate)
    if cfg.seasonality is not None:
        hour_of_day = (cfg.launch_hour + np.floor(starts + TIME_EPS).astype(int)) % 24
        seg_rate = seg_rate * np.asarray(cfg.seasonality)[hour_of_day]
    arrivals = rng.poisson(seg_rate * lengths)
    cum = np.concatenate(([0], np.cumsum(arrivals)))  # count at each breakpoint
    n_grid = cum[grid_pos].astype(float)

    tipping_time = None
    inflect_pos = None  # index into grid
    if cfg.fixed_inflection is None:
        crossed = np.flatnonzero(cum >= theta)
        if crossed.size:
            j = int(crossed[0])  # breakpoint index; segment j-1 holds the theta-th arrival
            k = theta - int(cum[j - 1])
            m = int(arrivals[j - 1])
            tipping_time = float(starts[j - 1] + lengths[j - 1] * rng.beta(k, m - k + 1))
            inflect_pos = int(np.searchsorted(grid_pos, j))
    else:
        h = cfg.fixed_inflection
        if h <= grid[-1] + TIME_EPS:
            inflect_pos = int(np.searchsorted(grid, h - TIME_EPS))

    inflection = None
    if inflect_pos is not None and inflect_pos < grid.size:
        inflection = float(grid[inflect_pos])
        model = cfg.propagation
        step = model.step_hours
        n_steps = int(math.floor((grid[-1] - inflection) / step + TIME_EPS))
        n0 = n_grid[inflect_pos]
        if cap is not None:
            n0 = min(n0, cap)
        if n_steps > 0:
            x = model.noise.sample(rng, n_steps)
            r = model.decay(np.arange(1, n_steps + 1) * step)
            path = n0 * np.cumprod(1.0 + r * x)
            after = grid[inflect_pos + 1:]
            done = np.floor((after - inflection) / step + TIME_EPS).astype(int)
            n_grid[inflect_pos + 1:] = np.where(done > 0, path[np.clip(done - 1, 0, None)], n0)
        else:
            n_grid[inflect_pos + 1:] = n0
    if cap is not None:
        n_grid = np.minimum(n_grid, cap)
    counts = np.floor(n_grid + 1e-9).astype(np.int64)

    attrs = DealAttributes(
        tipping_point=theta,
        duration_hours=float(cfg.lifetime),
        limited=cap is not None,
    )
    trace = PurchaseTrace(
        f"deal-{deal_index:06d}",
        grid,
        counts,
        launch_hour_of_day=cfg.launch_hour,
        lifetime_hours=float(cfg.lifetime),
        attributes=attrs,
    )
    return trace, inflection, tipping_time


def simulate_deal(cfg: SimConfig, deal_index: int) -> PurchaseTrace:
    """One synthetic trace on the ``cfg.dt`` grid up to the lifetime."""
    return _simulate(cfg, deal_index)[0]


def simulate_cohort(cfg: SimConfig, n_deals: int, threads: int = 1) -> SimResult:
    if n_deals < 1:
        raise ValueError("n_deals must be >= 1")
    indices = range(n_deals)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: _simulate(cfg, i), indices, chunksize=64))
    else:
        results = [_simulate(cfg, i) for i in indices]
    traces = tuple(r[0] for r in results)
    inflection = {r[0].deal_id: r[1] for r in results}
    tipping = {r[0].deal_id: r[2] for r in results}
    ds = Dataset(traces, provenance=f"simulated seed={cfg.seed}")
    return SimResult(ds, inflection, tipping, cfg)


def sample_tipping_times(rate: float, tipping_point: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Times of the tipping_point-th arrival, built from explicit exponential gaps."""
    gaps = rng.exponential(1.0 / rate, size=(size, int(tipping_point)))
    return gaps.sum(axis=1)


def mean_growth_curve(ds: Dataset, dt: float, normalize_by_launch_hour: bool = False):
    """Pointwise mean cumulative count on the ``dt`` grid.

    Returns an (m, 2) array of (t, mean N_t), or with
    ``normalize_by_launch_hour`` a dict launch_hour -> such an array.
    The curve spans the shortest trace in each group.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if normalize_by_launch_hour:
        groups: dict[int, list[PurchaseTrace]] = {}
        for tr in ds:
            groups.setdefault(tr.launch_hour_of_day, []).append(tr)
        return {
            h: mean_growth_curve(Dataset(tuple(g)), dt) for h, g in sorted(groups.items())
        }
    end = min(min(tr.t[-1], tr.lifetime_hours or tr.t[-1]) for tr in ds)
    k = int(math.floor(end / dt + TIME_EPS))
    grid = np.arange(k + 1) * dt
    counts = np.vstack([tr.counts_at(grid) for tr in ds])
    return np.column_stack([grid, counts.mean(axis=0)])


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, seed=seed)
