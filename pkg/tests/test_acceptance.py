"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time
import warnings

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dealflow.cli import main
from dealflow.deal_model import Dataset, DealAttributes, PurchaseTrace, clean_dataset
from dealflow.evaluation import EvalConfig, evaluate, relative_error
from dealflow.predictors import RankDeficiencyWarning, predict_baseline1, train_mlr, train_sp
from dealflow.propagation import align_at_inflection, estimate_decay, fit_decay_exponential
from dealflow.renewal import RenewalModel, failure_probability, fit_exponential, tipping_time_cdf
from dealflow.simulate import SimConfig, sample_tipping_times, simulate_cohort


def test_relative_error_fixtures(acceptance_line):
    a = round(relative_error(251, 93), 2)
    b = round(relative_error(384, 463), 2)
    ok = a == 0.63 and b == 0.21
    assert acceptance_line(1, "relative-error fixtures", ok, f"{a}, {b}")


def test_failure_probability_vs_monte_carlo(acceptance_line):
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    taus = sample_tipping_times(2.1, 22, 100_000, rng)
    simulated = float(np.mean(taus > 24.0))
    analytic = failure_probability(RenewalModel(2.1), 22, 24.0, include_zero=True)
    elapsed = time.monotonic() - start
    ok = abs(simulated - analytic) <= 0.005 and elapsed < 10
    assert acceptance_line(
        2, "failure probability vs 1e5 simulated deals", ok,
        f"analytic {analytic:.2e}, simulated {simulated:.2e}, {elapsed:.2f} s",
    )


def test_tipping_time_gamma_law(acceptance_line):
    # lifetime long enough that every deal tips
    cfg = SimConfig(rate=2.1, tipping_point=10, lifetime=60.0, seed=10)
    res = simulate_cohort(cfg, 10_000)
    taus = np.array(list(res.tipping_times.values()), dtype=float)
    stat, p = stats.kstest(taus, lambda x: tipping_time_cdf(10, 2.1, x))
    ok = not np.isnan(taus).any() and p > 0.01
    assert acceptance_line(3, "tipping times ~ Gamma(10, rate), KS at alpha 0.01", ok, f"D={stat:.4f}, p={p:.3f}")


def test_interarrival_mle(acceptance_line):
    x = np.random.default_rng(4).exponential(1 / 3.0, size=100_000)
    m = fit_exponential(x)
    err = abs(m.rate - 3.0) / 3.0
    ok = err < 0.02 and m.fit_r2 > 0.99
    assert acceptance_line(4, "interarrival MLE", ok, f"rate {m.rate:.4f}, rel err {err:.4f}, R2 {m.fit_r2:.4f}")


def _decay_fit(cfg, horizon, n=2000):
    res = simulate_cohort(cfg, n)
    cohort = align_at_inflection(res.dataset, horizon, res.inflection)
    return fit_decay_exponential(estimate_decay(cohort, horizon)), len(cohort)


def test_decay_closed_loop(acceptance_line):
    from dealflow.propagation import NoveltyDecay, PropagationModel

    g_cfg = SimConfig.groupon(
        seed=55, lifetime=48.0, propagation=PropagationModel(NoveltyDecay.exponential(-0.21, -2.0, 16))
    )
    l_cfg = SimConfig.livingsocial(seed=56)
    g, ng = _decay_fit(g_cfg, 16)
    ls, nl = _decay_fit(l_cfg, 20)
    ok_g = abs(g.a + 0.21) <= 0.03 and abs(g.b + 2.0) <= 0.3 and g.fit_r2 >= 0.85
    ok_l = abs(ls.a + 0.11) <= 0.03 and abs(ls.b + 0.28) <= 0.3 and ls.fit_r2 >= 0.85
    detail = (
        f"groupon a={g.a:.3f} b={g.b:.3f} R2={g.fit_r2:.3f} n={ng}; "
        f"livingsocial a={ls.a:.3f} b={ls.b:.3f} R2={ls.fit_r2:.3f} n={nl}"
    )
    assert acceptance_line(5, "decay closed loop", ok_g and ok_l, detail)


def test_sp_unit_slope(acceptance_line):
    ds = simulate_cohort(SimConfig.groupon(seed=66, scale_dispersion=1.5), 2000).dataset
    e = train_sp(ds, 8, 24)
    ok = 0.9 <= e.slope <= 1.1 and e.r_squared >= 0.9
    assert acceptance_line(6, "SP unit slope", ok, f"slope {e.slope:.3f}, R2 {e.r_squared:.3f}, n={e.n}")


def test_predictor_ordering(acceptance_line):
    ds = simulate_cohort(SimConfig.groupon(seed=77, scale_dispersion=1.5), 2000).dataset
    cfg = EvalConfig(horizons=(8.0, 12.0), predictors=("baseline1", "baseline2", "sp"), split_seed=77)
    rep = evaluate(cfg, ds)
    sp12, sp8 = rep.mean_error("sp", 12.0), rep.mean_error("sp", 8.0)
    b1, b2 = rep.mean_error("baseline1", 12.0), rep.mean_error("baseline2", 12.0)
    frac = float(np.mean(rep.errors("sp", 12.0) < 0.5))
    ok = sp12 < b1 and sp12 < b2 and sp12 <= sp8 and frac >= 0.9
    detail = f"SP12 {sp12:.3f}, SP8 {sp8:.3f}, B1 {b1:.3f}, B2 {b2:.3f}, SP<0.5 for {frac:.1%}"
    assert acceptance_line(7, "predictor ordering on synthetic Groupon cohort", ok, detail)


CITY_FACTOR = {"austin": 1, "boston": 2, "chicago": 3}
CATEGORY_FACTOR = {"Food": 1, "Travel": 5}


def _mlr_rows(rng, rows, noise_sd):
    traces, exact = [], []
    for i in range(rows):
        theta = int(rng.integers(1, 400))
        featured = bool(rng.integers(0, 2))
        limited = bool(rng.integers(0, 2))
        city = str(rng.choice(list(CITY_FACTOR)))
        cat = str(rng.choice(list(CATEGORY_FACTOR)))
        a = DealAttributes(theta, featured, 24.0, limited, 20.0, 50.0, "Mon", cat, city)
        if noise_sd == 0:
            # log N = log 7 + log theta + f log 2 + l log 3 + city + category: integer N
            n = 7 * theta * (2 if featured else 1) * (3 if limited else 1) * CITY_FACTOR[city] * CATEGORY_FACTOR[cat]
        else:
            log_n = 6.0 + 0.7316 * math.log(theta) + 0.4 * featured - 0.3 * limited + rng.normal(0, noise_sd)
            n = max(1, int(round(math.exp(log_n))))
        exact.append(math.log(n))
        traces.append(PurchaseTrace(f"d{i}", np.array([0.0, 24.0]), np.array([0, n]), attributes=a))
    return Dataset(tuple(traces)), np.array(exact)


def test_mlr_recovery(acceptance_line):
    rng = np.random.default_rng(88)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        exact_ds, y = _mlr_rows(rng, 500, 0.0)
        m0 = train_mlr(exact_ds)
        noisy_ds, _ = _mlr_rows(rng, 4000, 0.5)
        m1 = train_mlr(noisy_ds)
    rel_resid = m0.residual_norm / np.linalg.norm(y)
    k0 = m0.feature_names.index("log_tipping_point")
    k = m1.feature_names.index("log_tipping_point")
    beta1, se1 = m1.coefficients[k], m1.std_errors[k]
    ok = rel_resid < 1e-8 and abs(m0.coefficients[k0] - 1.0) < 1e-8 and abs(beta1 - 0.7316) < 2 * se1
    detail = f"exact residual {rel_resid:.1e}; noisy beta1 {beta1:.4f} +- {se1:.4f}"
    assert acceptance_line(8, "MLR coefficient recovery", ok, detail)


def test_cli_determinism(acceptance_line, tmp_path):
    def files(tag, threads):
        traces, attrs = tmp_path / f"t_{tag}.csv", tmp_path / f"a_{tag}.json"
        assert main(["simulate", "--n-deals", "600", "--seed", "9", "--threads", str(threads),
                     "--out", str(traces), "--attrs-out", str(attrs)]) == 0
        cfg = tmp_path / "eval.json"
        cfg.write_text(json.dumps({"horizons": list(range(1, 24))}))
        report = tmp_path / f"r_{tag}.csv"
        assert main(["evaluate", "--traces", str(traces), "--attrs", str(attrs), "--config", str(cfg),
                     "--out", str(report), "--threads", str(threads), "--seed", "1"]) == 0
        cdf = tmp_path / f"r_{tag}_cdf.csv"
        return [p.read_bytes() for p in (traces, attrs, report, cdf)]

    runs = [files("a", 1), files("b", 1), files("c", 8)]
    ok = runs[0] == runs[1] == runs[2]
    assert acceptance_line(9, "simulate/evaluate byte-identical across runs and threads 1 vs 8", ok)


def test_invariant_suite(acceptance_line):
    failures = []

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=50))
    def cdf_monotone(errs):
        xs = np.sort(np.array(errs))
        uniq, counts = np.unique(xs, return_counts=True)
        frac = np.cumsum(counts) / xs.size
        assert np.all(np.diff(frac) > 0) and frac[-1] == 1.0

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 300), min_size=1, max_size=40), min_size=1, max_size=6), st.integers(1, 30))
    def cleaned_monotone(counts, threshold):
        ds = Dataset(tuple(PurchaseTrace(f"d{i}", np.arange(len(c), dtype=float), c) for i, c in enumerate(counts)))
        out, _ = clean_dataset(ds, threshold)
        assert all(np.all(np.diff(tr.n) >= 0) for tr in out)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0.05, 10), st.floats(0.05, 10),
        st.integers(1, 60), st.integers(1, 60),
        st.floats(0.5, 48), st.floats(0.5, 48),
    )
    def failure_monotone(r1, r2, t1, t2, l1, l2):
        f = lambda r, th, l: failure_probability(RenewalModel(r), th, l, True)  # noqa: E731
        lo_r, hi_r = sorted((r1, r2))
        lo_t, hi_t = sorted((t1, t2))
        lo_l, hi_l = sorted((l1, l2))
        assert f(hi_r, lo_t, lo_l) <= f(lo_r, lo_t, lo_l) + 1e-12
        assert f(lo_r, lo_t, hi_l) <= f(lo_r, lo_t, lo_l) + 1e-12
        assert f(lo_r, lo_t, lo_l) <= f(lo_r, hi_t, lo_l) + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 20), min_size=24, max_size=24), min_size=4, max_size=10), st.integers(1, 23))
    def baseline1_below_one(increments, h):
        traces = tuple(
            PurchaseTrace(f"d{i}", np.arange(25.0), np.concatenate(([0], np.cumsum(inc))))
            for i, inc in enumerate(increments)
        )
        for tr in traces:
            if tr.count_at(h) >= 1:
                assert relative_error(tr.count_at(24.0), predict_baseline1(tr.count_at(h))) < 1
        rep = evaluate(EvalConfig(horizons=(float(h),), predictors=("baseline1",), cdf_horizon=float(h)), Dataset(traces))
        errs = rep.errors("baseline1", h)
        if errs is not None and errs.size and np.any(errs < 1):
            assert errs.mean() < 1

    for name, check in [
        ("CDF monotone", cdf_monotone),
        ("cleaned traces non-decreasing", cleaned_monotone),
        ("failure probability monotone", failure_monotone),
        ("baseline1 error below 1", baseline1_below_one),
    ]:
        try:
            check()
        except Exception as exc:  # noqa: BLE001
            failures.append(f"{name}: {type(exc).__name__}")
    ok = not failures
    assert acceptance_line(10, "invariant suite (property-based)", ok, "; ".join(failures))
