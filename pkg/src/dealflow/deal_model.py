"""Purchase traces: domain types, file ingestion, cleaning and resampling.

Time is measured in hours since the deal launched. A trace stores the
cumulative purchase count observed at each sampling time.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

TRACE_HEADER = ("deal_id", "hours_since_launch", "cumulative_purchases")
ATTRIBUTE_KEYS = (
    "deal_id",
    "tipping_point",
    "featured",
    "duration_hours",
    "limited",
    "price",
    "discount_pct",
    "launch_day",
    "category",
    "city",
)

# tolerance used when comparing sample times against grid times
TIME_EPS = 1e-9


class TraceFormatError(ValueError):
    """Raised for malformed trace or attribute files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TraceValidationError(TraceFormatError):
    """Raised when well-formed input violates a trace invariant."""


class TraceSample(NamedTuple):
    t: float
    n: int


@dataclass(frozen=True)
class DealAttributes:
    """Covariates of the final-purchase regression for one deal."""

    tipping_point: int
    featured: bool = False
    duration_hours: float = 24.0
    limited: bool = False
    price: float = 0.0
    discount_pct: float = 0.0
    launch_day: str = ""
    category: str = ""
    city: str = ""

    def __post_init__(self):
        if self.tipping_point < 1:
            raise ValueError(f"tipping_point must be >= 1, got {self.tipping_point}")
        if not self.duration_hours > 0:
            raise ValueError(f"duration_hours must be > 0, got {self.duration_hours}")
        if self.price < 0:
            raise ValueError(f"price must be >= 0, got {self.price}")
        if not 0 <= self.discount_pct <= 100:
            raise ValueError(f"discount_pct must lie in [0, 100], got {self.discount_pct}")


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PurchaseTrace:
    """Cumulative purchase counts of a single deal.

    ``t`` and ``n`` are read-only arrays of equal length with ``t`` strictly
    increasing. ``lifetime_hours`` defaults to the last sample time.
    """

    deal_id: str
    t: np.ndarray
    n: np.ndarray
    launch_hour_of_day: int = 0
    lifetime_hours: float | None = None
    attributes: DealAttributes | None = None

    def __post_init__(self):
        t = _frozen(self.t, float).reshape(-1)
        n = _frozen(self.n, np.int64).reshape(-1)
        if t.shape != n.shape:
            raise TraceValidationError(f"{self.deal_id}: t and n lengths differ")
        if t.size and (t[0] < 0 or not np.all(np.isfinite(t))):
            raise TraceValidationError(f"{self.deal_id}: sample times must be finite and >= 0")
        if np.any(n < 0):
            raise TraceValidationError(f"{self.deal_id}: purchase counts must be >= 0")
        if np.any(np.diff(t) <= 0):
            raise TraceValidationError(f"{self.deal_id}: sample times must be strictly increasing")
        if not 0 <= self.launch_hour_of_day <= 23:
            raise TraceValidationError(f"{self.deal_id}: launch_hour_of_day outside 0-23")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "n", n)
        lifetime = self.lifetime_hours
        if lifetime is None:
            if self.attributes is not None:
                lifetime = self.attributes.duration_hours
            elif t.size:
                lifetime = float(t[-1])
        if lifetime is not None:
            object.__setattr__(self, "lifetime_hours", float(lifetime))

    def __len__(self) -> int:
        return int(self.t.size)

    def __eq__(self, other):
        if not isinstance(other, PurchaseTrace):
            return NotImplemented
        return (
            self.deal_id == other.deal_id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.n, other.n)
            and self.launch_hour_of_day == other.launch_hour_of_day
            and self.lifetime_hours == other.lifetime_hours
            and self.attributes == other.attributes
        )

    __hash__ = None

    @property
    def samples(self) -> list[TraceSample]:
        return [TraceSample(float(t), int(n)) for t, n in zip(self.t, self.n)]

    @property
    def final_count(self) -> int:
        return int(self.n[-1]) if self.n.size else 0

    @property
    def tipped_at(self) -> float | None:
        """Time of the first sample whose count reached the tipping point."""
        if self.attributes is None:
            return None
        hit = np.flatnonzero(self.n >= self.attributes.tipping_point)
        return float(self.t[hit[0]]) if hit.size else None

    def count_at(self, hours: float) -> int:
        """Last observed cumulative count at or before ``hours`` (0 before the first sample)."""
        idx = int(np.searchsorted(self.t, hours + TIME_EPS, side="right")) - 1
        return int(self.n[idx]) if idx >= 0 else 0

    def counts_at(self, hours) -> np.ndarray:
        hours = np.asarray(hours, dtype=float)
        idx = np.searchsorted(self.t, hours + TIME_EPS, side="right") - 1
        out = np.where(idx >= 0, self.n[np.clip(idx, 0, None)], 0)
        return out.astype(np.int64)

    def prefix(self, hours: float) -> "PurchaseTrace":
        """Samples observed up to and including ``hours``."""
        k = int(np.searchsorted(self.t, hours + TIME_EPS, side="right"))
        return replace(self, t=self.t[:k], n=self.n[:k])


@dataclass(frozen=True)
class Dataset:
    traces: tuple[PurchaseTrace, ...]
    provenance: str = ""

    def __post_init__(self):
        traces = tuple(self.traces)
        ids = [tr.deal_id for tr in traces]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise TraceValidationError(f"duplicate deal_id in dataset: {dup[:5]}")
        object.__setattr__(self, "traces", traces)

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self) -> Iterator[PurchaseTrace]:
        return iter(self.traces)

    def __getitem__(self, i):
        return self.traces[i]

    def ids(self) -> list[str]:
        return [tr.deal_id for tr in self.traces]

    def by_id(self, deal_id: str) -> PurchaseTrace:
        for tr in self.traces:
            if tr.deal_id == deal_id:
                return tr
        raise KeyError(deal_id)

    def subset(self, ids: Iterable[str]) -> "Dataset":
        index = {tr.deal_id: tr for tr in self.traces}
        return Dataset(tuple(index[i] for i in ids), self.provenance)


@dataclass(frozen=True)
class CleaningReport:
    kept: int
    dropped: int
    dropped_ids: tuple[str, ...] = field(default_factory=tuple)
    threshold: int = 10


# ---------------------------------------------------------------- ingestion


def _as_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def parse_attributes_json(source) -> dict[str, DealAttributes]:
    """Read the attributes JSON array; unknown keys are ignored.

    A non-standard ``launch_hour`` key, when present, is returned under
    the same deal in the second mapping of :func:`parse_attributes_full`.
    """
    return parse_attributes_full(source)[0]


def parse_attributes_full(source) -> tuple[dict[str, DealAttributes], dict[str, int]]:
    try:
        rows = json.loads(_as_text(source))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"attributes file is not valid JSON: {exc}") from exc
    if not isinstance(rows, list):
        raise TraceFormatError("attributes file must contain a JSON array")
    attrs: dict[str, DealAttributes] = {}
    launch_hours: dict[str, int] = {}
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or "deal_id" not in row or "tipping_point" not in row:
            raise TraceFormatError(f"attributes entry {i} needs deal_id and tipping_point")
        deal_id = str(row["deal_id"])
        try:
            attrs[deal_id] = DealAttributes(
                tipping_point=int(row["tipping_point"]),
                featured=bool(row.get("featured", False)),
                duration_hours=float(row.get("duration_hours", 24.0)),
                limited=bool(row.get("limited", False)),
                price=float(row.get("price", 0.0)),
                discount_pct=float(row.get("discount_pct", 0.0)),
                launch_day=str(row.get("launch_day", "")),
                category=str(row.get("category", "")),
                city=str(row.get("city", "")),
            )
        except (TypeError, ValueError) as exc:
            raise TraceValidationError(f"attributes for {deal_id!r}: {exc}") from exc
        if "launch_hour" in row:
            launch_hours[deal_id] = int(row["launch_hour"])
    return attrs, launch_hours


def parse_trace_csv(source, attributes=None, provenance: str = "") -> Dataset:
    """Parse a trace CSV into a :class:`Dataset`.

    ``source`` may be bytes, text or a file object. ``attributes`` is an
    optional attributes-JSON source (or an already-parsed mapping) whose
    entries are attached to matching deals.
    """
    launch_hours: dict[str, int] = {}
    if attributes is not None and not isinstance(attributes, dict):
        attributes, launch_hours = parse_attributes_full(attributes)
    attributes = attributes or {}

    reader = csv.reader(io.StringIO(_as_text(source)))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError("empty trace file", line=1) from None
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise TraceFormatError(f"expected header {','.join(TRACE_HEADER)}", line=1)

    rows: dict[str, list[tuple[float, int]]] = {}
    seen: set[tuple[str, float]] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise TraceFormatError(f"expected 3 fields, got {len(row)}", line=lineno)
        deal_id, t_raw, n_raw = (c.strip() for c in row)
        if not deal_id:
            raise TraceFormatError("empty deal_id", line=lineno)
        try:
            t = float(t_raw)
        except ValueError:
            raise TraceFormatError(f"hours_since_launch {t_raw!r} is not a number", line=lineno) from None
        try:
            n = int(n_raw)
        except ValueError:
            raise TraceFormatError(f"cumulative_purchases {n_raw!r} is not an integer", line=lineno) from None
        if not math.isfinite(t) or t < 0:
            raise TraceValidationError(f"negative or non-finite time {t_raw}", line=lineno)
        if n < 0:
            raise TraceValidationError(f"negative purchase count {n_raw}", line=lineno)
        if (deal_id, t) in seen:
            raise TraceValidationError(f"duplicate sample for {deal_id!r} at t={t_raw}", line=lineno)
        seen.add((deal_id, t))
        rows.setdefault(deal_id, []).append((t, n))

    traces = []
    for deal_id, samples in rows.items():
        samples.sort()
        t, n = zip(*samples)
        traces.append(
            PurchaseTrace(
                deal_id,
                np.array(t),
                np.array(n),
                launch_hour_of_day=launch_hours.get(deal_id, 0),
                attributes=attributes.get(deal_id),
            )
        )
    return Dataset(tuple(traces), provenance)


def read_dataset(trace_path, attrs_path=None) -> Dataset:
    with open(trace_path, "rb") as fh:
        data = fh.read()
    attrs = None
    if attrs_path is not None:
        with open(attrs_path, "rb") as fh:
            attrs = fh.read()
    return parse_trace_csv(data, attrs, provenance=str(trace_path))


def write_trace_csv(ds: Dataset, fh: IO[str]) -> None:
    """Serialize traces; floats use the shortest round-tripping repr."""
    fh.write(",".join(TRACE_HEADER) + "\n")
    for tr in ds:
        for t, n in zip(tr.t.tolist(), tr.n.tolist()):
            fh.write(f"{tr.deal_id},{t!r},{n}\n")


def trace_csv_text(ds: Dataset) -> str:
    buf = io.StringIO()
    write_trace_csv(ds, buf)
    return buf.getvalue()


def attributes_records(ds: Dataset) -> list[dict]:
    out = []
    for tr in ds:
        a = tr.attributes
        if a is None:
            continue
        out.append(
            {
                "deal_id": tr.deal_id,
                "tipping_point": a.tipping_point,
                "featured": a.featured,
                "duration_hours": a.duration_hours,
                "limited": a.limited,
                "price": a.price,
                "discount_pct": a.discount_pct,
                "launch_day": a.launch_day,
                "category": a.category,
                "city": a.city,
                "launch_hour": tr.launch_hour_of_day,
            }
        )
    return out


def attributes_json_text(ds: Dataset) -> str:
    return json.dumps(attributes_records(ds), indent=1) + "\n"


# ---------------------------------------------------------------- cleaning


def clean_dataset(ds: Dataset, drop_threshold: int = 10) -> tuple[Dataset, CleaningReport]:
    """Drop traces with a drop of ``drop_threshold`` or more between consecutive
    samples, and clamp smaller decreases to the running maximum."""
    if drop_threshold < 1:
        raise ValueError("drop_threshold must be >= 1")
    kept, dropped = [], []
    for tr in ds:
        if tr.n.size > 1 and np.any(np.diff(tr.n) <= -drop_threshold):
            dropped.append(tr.deal_id)
            continue
        repaired = np.maximum.accumulate(tr.n) if tr.n.size else tr.n
        kept.append(tr if np.array_equal(repaired, tr.n) else replace(tr, n=repaired))
    report = CleaningReport(len(kept), len(dropped), tuple(dropped), drop_threshold)
    return Dataset(tuple(kept), ds.provenance), report


def resample_trace(tr: PurchaseTrace, dt: float) -> PurchaseTrace:
    """Carry-forward resampling onto the grid 0, dt, 2dt, ... up to
    min(lifetime, last sample time)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if len(tr) == 0:
        raise ValueError(f"cannot resample empty trace {tr.deal_id!r}")
    end = float(tr.t[-1])
    if tr.lifetime_hours is not None:
        end = min(end, tr.lifetime_hours)
    k = int(math.floor(end / dt + TIME_EPS))
    grid = np.arange(k + 1) * dt
    # keep the original sample times where they already sit on the grid
    pos = np.clip(np.searchsorted(tr.t, grid), 0, len(tr) - 1)
    for cand in (pos, np.clip(pos - 1, 0, None)):
        close = np.abs(tr.t[cand] - grid) <= TIME_EPS
        grid = np.where(close, tr.t[cand], grid)
    return replace(tr, t=grid, n=tr.counts_at(grid))


def resample_dataset(ds: Dataset, dt: float) -> Dataset:
    return Dataset(tuple(resample_trace(tr, dt) for tr in ds if len(tr)), ds.provenance)


def reconstruct_arrivals(tr: PurchaseTrace) -> np.ndarray:
    """Arrival times implied by the cumulative counts.

    The m purchases gained over an interval (t0, t1] are spread evenly at
    t0 + j (t1 - t0) / (m + 1), j = 1..m. The count before the first sample
    is taken as zero at launch.
    """
    if len(tr) == 0:
        return np.empty(0)
    t = np.concatenate(([0.0], tr.t)) if tr.t[0] > 0 else tr.t
    n = np.concatenate(([0], tr.n)) if tr.t[0] > 0 else tr.n
    out = []
    if tr.t[0] == 0 and n[0] > 0:
        out.append(np.zeros(int(n[0])))
    gains = np.diff(n)
    for t0, t1, m in zip(t[:-1], t[1:], gains):
        if m > 0:
            out.append(t0 + np.arange(1, m + 1) * (t1 - t0) / (m + 1))
    return np.concatenate(out) if out else np.empty(0)


def interarrival_times(tr: PurchaseTrace) -> np.ndarray:
    """Gaps between reconstructed arrivals; the first is measured from launch."""
    arrivals = reconstruct_arrivals(tr)
    if arrivals.size == 0:
        return arrivals
    return np.diff(arrivals, prepend=0.0)
