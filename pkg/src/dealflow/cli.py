"""Command-line entry point: ``dealflow simulate|fit|train|predict|evaluate``.

Exit codes: 0 success, 2 usage or validation error, 3 insufficient data.
Each file-producing run writes ``<out>.manifest.json`` next to its output.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import predictors as P
from .deal_model import (
    Dataset,
    DealAttributes,
    TraceFormatError,
    attributes_json_text,
    clean_dataset,
    interarrival_times,
    parse_attributes_full,
    parse_trace_csv,
    trace_csv_text,
)
from .evaluation import EvalConfig, evaluate
from .propagation import (
    DecayEstimationError,
    align_at_inflection,
    decay_csv_text,
    decay_to_dict,
    estimate_decay,
    fit_decay_exponential,
)
from .renewal import fit_exponential
from .simulate import SimConfig, SimConfigError, simulate_cohort

log = logging.getLogger("dealflow")

EXIT_USAGE = 2
EXIT_DATA = 3
PREDICTOR_ALIASES = {"b1": "baseline1", "b2": "baseline2", "baseline1": "baseline1",
                     "baseline2": "baseline2", "sp": "sp", "mlr": "mlr"}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_USAGE)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_json_safe(obj), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc


def _load_json(path) -> dict:
    try:
        return json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from exc


def _load_dataset(traces, attrs=None) -> Dataset:
    data = _read_bytes(traces)
    attr_map = None
    if attrs is not None:
        try:
            attr_map = parse_attributes_full(_read_bytes(attrs))
        except TraceFormatError as exc:
            raise CliError(f"{attrs}: {exc}") from exc
    try:
        ds = parse_trace_csv(data, provenance=str(traces))
    except TraceFormatError as exc:
        raise CliError(f"{traces}: {exc}") from exc
    if attr_map is not None:
        from dataclasses import replace

        amap, hours = attr_map
        ds = Dataset(
            tuple(
                replace(
                    tr,
                    attributes=amap.get(tr.deal_id),
                    launch_hour_of_day=hours.get(tr.deal_id, tr.launch_hour_of_day),
                    lifetime_hours=None,
                )
                for tr in ds
            ),
            ds.provenance,
        )
    return ds


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        try:
            n = int(os.environ.get("DEALFLOW_THREADS", "1"))
        except ValueError:
            raise CliError("DEALFLOW_THREADS must be an integer") from None
    if n < 1:
        raise CliError("--threads must be >= 1")
    return n


def _manifest(args, subcommand, config, inputs, outputs, seed, started, path=None) -> None:
    out = outputs[0] if outputs else None
    if path is None:
        if out is None:
            return
        path = f"{out}.manifest.json"
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": [str(p) for p in inputs if p is not None],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "tool_version": __version__,
        "wall_clock_seconds": round(time.monotonic() - started, 6),
        "argv": args._argv,
    }
    _write(path, _dump_json(manifest))


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    started = time.monotonic()
    if args.n_deals < 1:
        raise CliError("--n-deals must be >= 1")
    if args.config:
        try:
            cfg = SimConfig.from_dict(_load_json(args.config))
        except SimConfigError as exc:
            raise CliError(f"invalid config field {exc}") from exc
    else:
        cfg = SimConfig.livingsocial() if args.preset == "livingsocial" else SimConfig.groupon(scale_dispersion=1.5)
    if args.seed is not None:
        try:
            cfg = SimConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
        except SimConfigError as exc:
            raise CliError(f"invalid config field {exc}") from exc
    result = simulate_cohort(cfg, args.n_deals, threads=_threads(args))
    _write(args.out, trace_csv_text(result.dataset))
    outputs = [args.out]
    if args.attrs_out:
        _write(args.attrs_out, attributes_json_text(result.dataset))
        outputs.append(args.attrs_out)
    if args.inflection_out:
        rows = ["deal_id,inflection_hours,tipping_time_hours"]
        for deal_id, h in result.inflection.items():
            tt = result.tipping_times[deal_id]
            rows.append(f"{deal_id},{'' if h is None else repr(h)},{'' if tt is None else repr(tt)}")
        _write(args.inflection_out, "\n".join(rows) + "\n")
        outputs.append(args.inflection_out)
    _manifest(args, "simulate", cfg.to_dict(), [args.config], outputs, cfg.seed, started)
    return 0


# ---------------------------------------------------------------- fit


def cmd_fit(args) -> int:
    started = time.monotonic()
    ds = _load_dataset(args.traces, args.attrs)
    if len(ds) == 0:
        raise CliError(f"{args.traces} contains no traces")
    ds, report = clean_dataset(ds, args.drop_threshold)
    if report.dropped:
        log.warning("dropped %d trace(s) with drops of %d or more purchases", report.dropped, report.threshold)

    if args.tipping_point is not None:
        ds = Dataset(
            tuple(
                _with_tipping_point(tr, args.tipping_point) for tr in ds
            ),
            ds.provenance,
        )
    if args.inflection_hour is not None:
        inflection = {tr.deal_id: args.inflection_hour for tr in ds}
    else:
        if any(tr.attributes is None for tr in ds):
            raise CliError("need --tipping-point, --inflection-hour or an attributes file with tipping points")
        inflection = {tr.deal_id: tr.tipped_at for tr in ds}

    gaps = []
    for tr in ds:
        h = inflection.get(tr.deal_id)
        pre = tr if h is None else tr.prefix(h)
        gaps.append(interarrival_times(pre))
    gaps = np.concatenate(gaps) if gaps else np.empty(0)
    gaps = gaps[gaps > 0]
    if gaps.size < 2:
        raise CliError(f"only {gaps.size} positive interarrival time(s); cannot fit the renewal rate", EXIT_DATA)
    renewal = fit_exponential(gaps)
    out = {
        "renewal": {"rate_per_hour": renewal.rate, "fit_r2": renewal.fit_r2, "n_obs": renewal.n_obs},
        "decay": None,
    }

    cohort = align_at_inflection(ds, args.horizon, inflection)
    code, problem = 0, None
    if len(cohort) < args.min_deals:
        code, problem = EXIT_DATA, f"only {len(cohort)} inflected deal(s) span {args.horizon} h; need {args.min_deals}"
    else:
        try:
            decay = fit_decay_exponential(estimate_decay(cohort, args.horizon))
            out["decay"] = {**decay_to_dict(decay), "n_deals": len(cohort)}
            if args.decay_csv:
                _write(args.decay_csv, decay_csv_text(decay))
        except DecayEstimationError as exc:
            code, problem = EXIT_DATA, f"decay estimation failed on {len(cohort)} deal(s): {exc}"
    _write(args.out, _dump_json(out))
    config = {"horizon": args.horizon, "tipping_point": args.tipping_point,
              "inflection_hour": args.inflection_hour, "min_deals": args.min_deals,
              "drop_threshold": args.drop_threshold}
    _manifest(args, "fit", config, [args.traces, args.attrs], [args.out], None, started)
    if problem:
        print(problem, file=sys.stderr)
    return code


def _with_tipping_point(tr, theta):
    from dataclasses import replace

    a = tr.attributes or DealAttributes(theta, duration_hours=tr.lifetime_hours or 24.0)
    return replace(tr, attributes=replace(a, tipping_point=theta))


# ---------------------------------------------------------------- train / predict


def _parse_predictors(text: str) -> list[str]:
    names = []
    for raw in text.split(","):
        raw = raw.strip().lower()
        if raw not in PREDICTOR_ALIASES:
            raise CliError(f"unknown predictor {raw!r}")
        names.append(PREDICTOR_ALIASES[raw])
    return names


def _parse_horizons(text: str) -> list[float]:
    out = []
    for part in text.split(","):
        if ".." in part:
            lo, hi = part.split("..")
            out += [float(h) for h in range(int(lo), int(hi) + 1)]
        elif part.strip():
            out.append(float(part))
    return out


def cmd_train(args) -> int:
    started = time.monotonic()
    names = _parse_predictors(args.predictors)
    if "mlr" in names and not args.attrs:
        raise CliError("--predictors mlr requires --attrs")
    horizons = _parse_horizons(args.horizons)
    if any(h >= args.t2 for h in horizons):
        raise CliError("every horizon must be below --t2")
    ds = _load_dataset(args.traces, args.attrs)
    ds, _ = clean_dataset(ds, args.drop_threshold)
    ds = Dataset(tuple(tr for tr in ds if len(tr) and tr.t[-1] + 1e-9 >= args.t2), ds.provenance)
    if len(ds) < 2:
        raise CliError(f"only {len(ds)} trace(s) span t2={args.t2} h", EXIT_DATA)

    b2, sp, mlr = {}, None, None
    try:
        if "baseline2" in names:
            for h in horizons:
                b2[h] = P.train_baseline2([(tr.count_at(h), tr.count_at(args.t2)) for tr in ds])
        if "sp" in names:
            sp = P.SpModel()
            for h in horizons:
                sp.add(P.train_sp(ds, h, args.t2))
        if "mlr" in names:
            if any(tr.attributes is None for tr in ds):
                raise CliError("attributes missing for some deals")
            usable = Dataset(tuple(tr for tr in ds if tr.count_at(args.t2) >= 1))
            mlr = P.train_mlr(usable, target_hours=args.t2)
    except P.TrainingError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    _write(args.out, _dump_json(P.models_to_dict(args.t2, b2, sp, mlr)))
    config = {"predictors": names, "horizons": horizons, "t2": args.t2}
    _manifest(args, "train", config, [args.traces, args.attrs], [args.out], None, started)
    return 0


def cmd_predict(args) -> int:
    started = time.monotonic()
    policy = args.policy
    if args.models:
        t2, b2, sp, mlr = P.models_from_dict(_load_json(args.models))
    elif policy == "baseline1":
        t2, b2, sp, mlr = args.t2 or 24.0, {}, None, None
    else:
        raise CliError(f"--policy {policy} requires --models")
    if args.t2 is not None and args.t2 != t2:
        raise CliError(f"models were trained for t2={t2}, not {args.t2}")
    ds = _load_dataset(args.trace_prefix, args.attrs)
    t1 = float(args.t1)

    def need_sp():
        if sp is None or (t1, t2) not in sp.entries:
            raise CliError(f"no SP model trained for t1={t1:g}, t2={t2:g}")
        return sp.get(t1, t2)

    lines = []
    for tr in ds:
        n1 = tr.count_at(t1)
        if policy == "baseline1":
            pred = P.predict_baseline1(n1)
        elif policy == "baseline2":
            if t1 not in b2:
                raise CliError(f"no baseline2 model trained for t1={t1:g}")
            pred = P.predict_baseline2(b2[t1], n1)
        elif policy == "sp":
            pred = P.predict_sp(need_sp(), n1)
        elif policy == "mlr":
            if mlr is None:
                raise CliError("models file has no MLR model")
            if tr.attributes is None:
                raise CliError(f"no attributes for deal {tr.deal_id}")
            pred = P.predict_mlr(mlr, tr.attributes)
        else:
            hp = P.HybridPolicy(policy, cutoff_hours=args.cutoff_hours)
            theta = args.tipping_point
            if policy == "groupon" and theta is None and tr.attributes is None:
                raise CliError("groupon policy needs --tipping-point or --attrs")
            choice = hp.choose(tr, t1, theta)
            pred = P.predict_baseline1(n1) if choice == "baseline1" else P.predict_sp(need_sp(), n1)
        lines.append(f"{tr.deal_id},{t1:g},{pred}")
    sys.stdout.write("\n".join(lines) + ("\n" if lines else ""))
    if args.manifest:
        config = {"policy": policy, "t1": t1, "t2": t2, "cutoff_hours": args.cutoff_hours,
                  "tipping_point": args.tipping_point}
        _manifest(args, "predict", config, [args.models, args.trace_prefix, args.attrs], ["<stdout>"],
                  None, started, path=args.manifest)
    return 0


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    started = time.monotonic()
    raw = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["split_seed"] = args.seed
    try:
        cfg = EvalConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid evaluation config: {exc}") from exc
    if "mlr" in cfg.predictors and not args.attrs:
        raise CliError("evaluating mlr requires --attrs")
    ds = _load_dataset(args.traces, args.attrs)
    ds, _ = clean_dataset(ds)
    try:
        report = evaluate(cfg, ds, threads=_threads(args))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    cdf_out = args.cdf_out or str(Path(args.out).with_name(Path(args.out).stem + "_cdf.csv"))
    _write(args.out, report.to_csv())
    _write(cdf_out, report.cdf_csv())
    _manifest(args, "evaluate", cfg.to_dict(), [args.traces, args.attrs, args.config],
              [args.out, cdf_out], cfg.split_seed, started)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dealflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dealflow {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic cohort")
    s.add_argument("--config", help="SimConfig JSON")
    s.add_argument("--preset", choices=["groupon", "livingsocial"], default="groupon")
    s.add_argument("--n-deals", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--attrs-out")
    s.add_argument("--inflection-out")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit renewal rate and novelty decay")
    f.add_argument("--traces", required=True)
    f.add_argument("--attrs")
    g = f.add_mutually_exclusive_group()
    g.add_argument("--tipping-point", type=int)
    g.add_argument("--inflection-hour", type=float)
    f.add_argument("--horizon", type=int, default=16)
    f.add_argument("--min-deals", type=int, default=10)
    f.add_argument("--drop-threshold", type=int, default=10)
    f.add_argument("--decay-csv")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("train", help="train predictors")
    t.add_argument("--traces", required=True)
    t.add_argument("--attrs")
    t.add_argument("--predictors", default="sp,b2")
    t.add_argument("--t2", type=float, default=24.0)
    t.add_argument("--horizons", default="1..23")
    t.add_argument("--drop-threshold", type=int, default=10)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="predict N at t2 from trace prefixes")
    r.add_argument("--models")
    r.add_argument("--trace-prefix", required=True)
    r.add_argument("--attrs")
    r.add_argument("--t1", type=float, required=True)
    r.add_argument("--t2", type=float)
    r.add_argument("--policy", default="groupon",
                   choices=["groupon", "livingsocial", "baseline1", "baseline2", "sp", "mlr"])
    r.add_argument("--tipping-point", type=int)
    r.add_argument("--cutoff-hours", type=float, default=3.0)
    r.add_argument("--manifest", help="write a run manifest here (predictions go to stdout)")
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="train/test evaluation report")
    e.add_argument("--traces", required=True)
    e.add_argument("--attrs")
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--cdf-out")
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(f"dealflow: error: {exc}", file=sys.stderr)
        return exc.code
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except CliError as exc:
        print(f"dealflow: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
