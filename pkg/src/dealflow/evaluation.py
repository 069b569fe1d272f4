"""Train/test evaluation of the predictors across observation horizons."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import predictors as P
from .deal_model import TIME_EPS, Dataset

log = logging.getLogger(__name__)

PREDICTORS = ("baseline1", "baseline2", "mlr", "sp", "hybrid")


def relative_error(real: float, predicted: float) -> float:
    """|real - predicted| / real."""
    if real <= 0:
        raise ValueError("relative error is undefined for real <= 0")
    return abs(real - predicted) / real


def split_dataset(ds: Dataset, ratio: float = 0.5, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the first ceil(ratio * n) traces form the training half."""
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(ds))
    k = math.ceil(ratio * len(ds))
    train = tuple(ds[i] for i in sorted(order[:k]))
    test = tuple(ds[i] for i in sorted(order[k:]))
    return Dataset(train, ds.provenance), Dataset(test, ds.provenance)


@dataclass(frozen=True)
class EvalConfig:
    split_ratio: float = 0.5
    split_seed: int = 0
    horizons: tuple[float, ...] = tuple(float(h) for h in range(1, 24))
    t2: float = 24.0
    predictors: tuple[str, ...] = ("baseline1", "baseline2", "mlr", "sp", "hybrid")
    policy: P.HybridPolicy = P.HybridPolicy()
    cdf_horizon: float = 12.0
    exclude_failed: bool = False

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie strictly between 0 and 1")
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if any(h >= self.t2 for h in self.horizons):
            raise ValueError("every horizon must be below t2")
        unknown = set(self.predictors) - set(PREDICTORS)
        if unknown:
            raise ValueError(f"unknown predictors: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        d = dict(d)
        if "policy" in d and isinstance(d["policy"], dict):
            d["policy"] = P.HybridPolicy(**d["policy"])
        elif "policy" in d and isinstance(d["policy"], str):
            d["policy"] = P.HybridPolicy(mode=d["policy"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        d["predictors"] = list(self.predictors)
        return d


@dataclass(frozen=True)
class Cell:
    predictor: str
    horizon: float
    errors: np.ndarray | None  # None marks an untrainable cell

    @property
    def n(self) -> int:
        return 0 if self.errors is None else int(self.errors.size)

    @property
    def mean(self) -> float:
        return float("nan") if not self.n else float(self.errors.mean())

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return float("nan")
        return float(self.errors.std(ddof=1) / math.sqrt(self.n))


@dataclass
class EvalReport:
    cells: dict[tuple[str, float], Cell] = field(default_factory=dict)
    cdf_horizon: float = 12.0
    n_train: int = 0
    n_test: int = 0

    def cell(self, predictor: str, horizon: float) -> Cell:
        return self.cells[(predictor, float(horizon))]

    def mean_error(self, predictor: str, horizon: float) -> float:
        return self.cell(predictor, horizon).mean

    def errors(self, predictor: str, horizon: float) -> np.ndarray | None:
        return self.cell(predictor, horizon).errors

    def cdf(self, predictor: str, horizon: float | None = None) -> np.ndarray:
        """(k, 2) array of (relative error, cumulative fraction)."""
        errs = self.errors(predictor, self.cdf_horizon if horizon is None else horizon)
        if errs is None or errs.size == 0:
            return np.empty((0, 2))
        xs = np.sort(errs)
        uniq, counts = np.unique(xs, return_counts=True)
        return np.column_stack([uniq, np.cumsum(counts) / xs.size])

    def predictors(self) -> list[str]:
        seen = []
        for p, _ in self.cells:
            if p not in seen:
                seen.append(p)
        return seen

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predictor", "horizon_hours", "mean_rel_err", "stderr", "n"])
        for (p, h), c in self.cells.items():
            w.writerow([p, _fmt(h), _fmt(c.mean), _fmt(c.stderr), c.n])
        return buf.getvalue()

    def cdf_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predictor", "rel_err", "cum_fraction"])
        for p in self.predictors():
            for x, f in self.cdf(p):
                w.writerow([p, _fmt(x), _fmt(f)])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _eligible(ds: Dataset, cfg: EvalConfig) -> Dataset:
    out, short, failed = [], 0, 0
    for tr in ds:
        if len(tr) == 0 or tr.t[-1] + TIME_EPS < cfg.t2:
            short += 1
            continue
        if cfg.exclude_failed and tr.attributes is not None and tr.tipped_at is None:
            failed += 1
            continue
        out.append(tr)
    if short:
        log.info("excluded %d trace(s) shorter than t2=%g h", short, cfg.t2)
    if failed:
        log.info("excluded %d failed deal(s)", failed)
    return Dataset(tuple(out), ds.provenance)


def _run_cell(name, t1, cfg, train, test, truth, mlr):
    t2 = cfg.t2
    n_t1 = np.array([tr.count_at(t1) for tr in test])
    try:
        if name == "baseline1":
            preds = [P.predict_baseline1(int(n)) for n in n_t1]
        elif name == "baseline2":
            params = P.train_baseline2([(tr.count_at(t1), tr.count_at(t2)) for tr in train])
            preds = [P.predict_baseline2(params, int(n)) for n in n_t1]
        elif name == "mlr":
            if mlr is None:
                return Cell(name, t1, None)
            preds = [P.predict_mlr(mlr, tr.attributes) for tr in test]
        elif name == "sp":
            entry = P.train_sp(train, t1, t2)
            preds = [P.predict_sp(entry, int(n)) for n in n_t1]
        else:
            entry = None
            try:
                entry = P.train_sp(train, t1, t2)
            except P.TrainingError:
                pass
            preds = [
                P.predict_hybrid(cfg.policy, tr.prefix(t1), t1, t2, entry) for tr in test
            ]
    except (P.TrainingError, ValueError, OverflowError) as exc:
        log.warning("%s at t1=%g h is untrainable: %s", name, t1, exc)
        return Cell(name, t1, None)
    errs = np.abs(truth - np.asarray(preds, dtype=float)) / truth
    return Cell(name, t1, errs)


def evaluate(cfg: EvalConfig, ds: Dataset, threads: int = 1) -> EvalReport:
    """Train on one half and score every predictor at every horizon on the other."""
    ds = _eligible(ds, cfg)
    if len(ds) < 2:
        raise ValueError("need at least 2 traces spanning t2 to evaluate")
    train, test = split_dataset(ds, cfg.split_ratio, cfg.split_seed)
    zero = [tr for tr in test if tr.count_at(cfg.t2) < 1]
    if zero:
        log.warning("dropping %d test trace(s) with no purchases at t2", len(zero))
        test = Dataset(tuple(tr for tr in test if tr.count_at(cfg.t2) >= 1), test.provenance)
    truth = np.array([tr.count_at(cfg.t2) for tr in test], dtype=float)

    mlr = None
    if "mlr" in cfg.predictors:
        usable = [tr for tr in train if tr.attributes is not None and tr.count_at(cfg.t2) >= 1]
        has_attrs = all(tr.attributes is not None for tr in test)
        if has_attrs and len(usable) >= 2:
            try:
                mlr = P.train_mlr(Dataset(tuple(usable)), target_hours=cfg.t2)
            except P.TrainingError as exc:
                log.warning("MLR is untrainable: %s", exc)

    jobs = [(p, h) for p in cfg.predictors for h in cfg.horizons]
    if cfg.cdf_horizon not in cfg.horizons:
        jobs += [(p, cfg.cdf_horizon) for p in cfg.predictors]

    def run(job):
        return _run_cell(job[0], job[1], cfg, train, test, truth, mlr)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(run, jobs))
    else:
        cells = [run(j) for j in jobs]
    report = EvalReport(cdf_horizon=cfg.cdf_horizon, n_train=len(train), n_test=len(test))
    for c in cells:
        report.cells[(c.predictor, c.horizon)] = c
    return report


def eval_config_from_json(text: str) -> EvalConfig:
    return EvalConfig.from_dict(json.loads(text))
