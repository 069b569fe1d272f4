import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dealflow.deal_model import Dataset, DealAttributes, PurchaseTrace
from dealflow.evaluation import relative_error
from dealflow.propagation import GrowthNoise, NoveltyDecay, PropagationModel
from dealflow.predictors import (
    AttributeEncoder,
    Baseline2Params,
    HybridPolicy,
    RankDeficiencyWarning,
    SpEntry,
    SpModel,
    TrainingError,
    encode_attributes,
    fit_ols,
    models_from_dict,
    models_to_dict,
    predict_baseline1,
    predict_baseline2,
    predict_hybrid,
    predict_mlr,
    predict_sp,
    train_baseline2,
    train_mlr,
    train_sp,
)
from dealflow.simulate import SimConfig, simulate_cohort

DAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
CATS = ("Food", "Travel", "Beauty", "Fitness")
CITIES = ("austin", "boston", "chicago", "denver", "seattle")


def final_trace(deal_id, n_final, attrs):
    return PurchaseTrace(deal_id, np.array([0.0, 24.0]), np.array([0, n_final]), attributes=attrs)


def random_attrs(rng, theta=None):
    return DealAttributes(
        tipping_point=int(theta if theta is not None else rng.integers(1, 200)),
        featured=bool(rng.integers(0, 2)),
        duration_hours=float(rng.choice([24.0, 48.0, 72.0])),
        limited=bool(rng.integers(0, 2)),
        price=float(rng.uniform(5, 100)),
        discount_pct=float(rng.uniform(30, 90)),
        launch_day=str(rng.choice(DAYS)),
        category=str(rng.choice(CATS)),
        city=str(rng.choice(CITIES)),
    )


# ---------------------------------------------------------------- baselines


@pytest.mark.parametrize("n", [93, 0, 10**6])
def test_baseline1_identity(n):
    assert predict_baseline1(n) == n


def test_baseline1_table_fixture():
    assert round(relative_error(251, predict_baseline1(93)), 2) == 0.63


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_baseline1_error_below_one_on_growing_counts(prefix, growth):
    real = prefix + growth
    if real == 0:
        return
    assert relative_error(real, predict_baseline1(prefix)) < 1 or prefix == 0


def test_baseline2_exact_line():
    p = train_baseline2([(x, 2 * x + 5) for x in range(10)])
    assert p.alpha == pytest.approx(2) and p.beta == pytest.approx(5)


def test_baseline2_two_points():
    p = train_baseline2([(0, 0), (1, 1)])
    assert (p.alpha, p.beta) == pytest.approx((1, 0))


def test_baseline2_recovers_noisy_generator():
    rng = np.random.default_rng(2)
    x = rng.integers(0, 500, size=10_000)
    y = 1.8 * x + 40 + rng.normal(0, 5, size=x.size)
    p = train_baseline2(np.column_stack([x, y]))
    assert p.alpha == pytest.approx(1.8, rel=0.01)
    assert p.beta == pytest.approx(40, rel=0.01)


@pytest.mark.parametrize("pairs", [[(3, 4)], [(3, 4), (3, 9), (3, 1)], []])
def test_baseline2_degenerate(pairs):
    with pytest.raises(TrainingError):
        train_baseline2(pairs)


def test_baseline2_predictions():
    assert predict_baseline2(Baseline2Params(2, 5), 10) == 25
    assert predict_baseline2(Baseline2Params(1, 0), 37) == predict_baseline1(37)
    assert predict_baseline2(Baseline2Params(-1, 1), 10) == 0


# ---------------------------------------------------------------- encoder


def test_encode_without_vocabularies():
    a = DealAttributes(10, featured=False, duration_hours=24, limited=False, price=15, discount_pct=50)
    v = encode_attributes(a, AttributeEncoder())
    assert v.tolist() == pytest.approx([1, math.log(10), 0, 24, 0, 15, 50])


def test_encode_one_hot_city_block():
    enc = AttributeEncoder(city=("austin", "boston"))
    v = encode_attributes(DealAttributes(3, city="boston"), enc)
    assert v[-2:].tolist() == [0, 1]
    assert encode_attributes(DealAttributes(3, city="paris"), enc)[-2:].tolist() == [0, 0]


def test_encode_rejects_bad_tipping_point():
    a = DealAttributes(1)
    object.__setattr__(a, "tipping_point", 0)
    with pytest.raises(ValueError):
        encode_attributes(a, AttributeEncoder())


# ---------------------------------------------------------------- MLR


def test_mlr_zero_noise_exact_recovery():
    rng = np.random.default_rng(4)
    attrs = [random_attrs(rng) for _ in range(300)]
    enc = AttributeEncoder.fit(attrs)
    X = np.vstack([encode_attributes(a, enc) for a in attrs])
    beta = rng.normal(0, 0.1, size=X.shape[1])
    y = X @ beta
    coef, se, rank, rss = fit_ols(X, y)
    assert math.sqrt(rss) / np.linalg.norm(y) < 1e-8
    assert X @ coef == pytest.approx(y, abs=1e-9)
    # one-hot blocks are collinear with the intercept: rank drops by one per block
    assert rank == X.shape[1] - 3


def test_mlr_interpolates_exact_integer_targets():
    rng = np.random.default_rng(8)
    attrs = [random_attrs(rng, theta=int(rng.choice([1, 10, 100]))) for _ in range(200)]
    # log N depends on tipping point only: N = theta exactly
    ds = Dataset(tuple(final_trace(f"d{i}", a.tipping_point, a) for i, a in enumerate(attrs)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        m = train_mlr(ds)
    assert m.residual_norm < 1e-8 * np.linalg.norm(np.log([a.tipping_point for a in attrs]))
    names = m.feature_names
    assert m.coefficients[names.index("log_tipping_point")] == pytest.approx(1.0, abs=1e-8)
    for a in attrs[:20]:
        assert predict_mlr(m, a) == a.tipping_point


def test_mlr_recovers_tipping_point_coefficient():
    rng = np.random.default_rng(12)
    thetas = rng.integers(1, 500, size=4000)
    noise = rng.normal(0, 0.8, size=thetas.size)
    logn = 2.0 + 0.7316 * np.log(thetas) + noise
    traces = []
    for i, (th, ln) in enumerate(zip(thetas, logn)):
        n = max(1, int(round(math.exp(ln))))
        traces.append(final_trace(f"d{i}", n, DealAttributes(int(th), price=20, discount_pct=50)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        m = train_mlr(Dataset(tuple(traces)))
    k = m.feature_names.index("log_tipping_point")
    assert abs(m.coefficients[k] - 0.7316) < 2 * m.std_errors[k]
    assert m.p_values[k] < 1e-10


def test_mlr_identical_rows_warn_and_use_minimum_norm():
    a = DealAttributes(10, featured=True, price=20, discount_pct=50, city="austin")
    ds = Dataset(tuple(final_trace(f"d{i}", 20 + i, a) for i in range(5)))
    with pytest.warns(RankDeficiencyWarning):
        m = train_mlr(ds)
    x = encode_attributes(a, m.encoder)
    # minimum-norm solution lies in the row space: beta is parallel to x
    assert m.coefficients == pytest.approx(x * (x @ m.coefficients) / (x @ x))
    assert x @ m.coefficients == pytest.approx(np.mean(np.log(np.arange(20, 25))))


def test_mlr_needs_two_rows():
    with pytest.raises(TrainingError):
        train_mlr(Dataset((final_trace("a", 5, DealAttributes(1)),)))


def test_mlr_intercept_only_model():
    ds = Dataset(tuple(final_trace(f"d{i}", 50, DealAttributes(1)) for i in range(3)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        m = train_mlr(ds)
    assert predict_mlr(m, DealAttributes(1)) == 50
    assert predict_mlr(m, DealAttributes(1, city="nowhere")) == 50


def test_mlr_error_fixture():
    assert round(relative_error(384, 1452), 3) == 2.781
    assert round(relative_error(251, 51), 2) == 0.80


@settings(max_examples=15, deadline=None)
@given(st.randoms(use_true_random=False))
def test_mlr_invariant_to_row_order(rnd):
    rng = np.random.default_rng(3)
    attrs = [random_attrs(rng) for _ in range(60)]
    counts = rng.integers(1, 1000, size=60)
    traces = [final_trace(f"d{i}", int(c), a) for i, (a, c) in enumerate(zip(attrs, counts))]
    shuffled = traces[:]
    rnd.shuffle(shuffled)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        m1 = train_mlr(Dataset(tuple(traces)))
        m2 = train_mlr(Dataset(tuple(shuffled)))
    probe = attrs[:10] + [DealAttributes(7, city="unseen", category="unseen", launch_day="Blursday")]
    assert [predict_mlr(m1, a) for a in probe] == [predict_mlr(m2, a) for a in probe]


def test_mlr_unseen_category_adds_nothing():
    rng = np.random.default_rng(6)
    attrs = [random_attrs(rng) for _ in range(80)]
    ds = Dataset(tuple(final_trace(f"d{i}", int(rng.integers(1, 500)), a) for i, a in enumerate(attrs)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        m = train_mlr(ds)
    a = attrs[0]
    x = encode_attributes(a, m.encoder)
    city_part = m.categorical_coefficients("city")[a.city]
    unseen = DealAttributes(a.tipping_point, a.featured, a.duration_hours, a.limited, a.price, a.discount_pct, a.launch_day, a.category, "atlantis")
    assert float(encode_attributes(unseen, m.encoder) @ m.coefficients) == pytest.approx(float(x @ m.coefficients) - city_part)


def test_mlr_coefficient_table_shape():
    rng = np.random.default_rng(1)
    attrs = [random_attrs(rng) for _ in range(40)]
    ds = Dataset(tuple(final_trace(f"d{i}", 10 + i, a) for i, a in enumerate(attrs)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        m = train_mlr(ds)
    table = m.coefficient_table()
    assert [row[0] for row in table] == m.feature_names
    assert all(len(row) == 5 for row in table)


# ---------------------------------------------------------------- SP


def test_sp_exact_log_shift():
    # log N_24 = log N_8 + log 2 exactly, with integer counts
    exps = np.arange(1, 8)
    traces = [
        PurchaseTrace(f"d{k}", np.array([8.0, 24.0]), np.array([2**k, 2 ** (k + 1)])) for k in exps
    ]
    e = train_sp(Dataset(tuple(traces)), 8, 24)
    assert e.slope == pytest.approx(1.0)
    assert e.intercept == pytest.approx(math.log(2))
    assert e.r_squared == pytest.approx(1.0)


def test_sp_single_trace_is_an_error():
    tr = PurchaseTrace("a", np.array([8.0, 24.0]), np.array([5, 9]))
    with pytest.raises(TrainingError):
        train_sp(Dataset((tr,)), 8, 24)


def test_sp_excludes_zero_counts(caplog):
    traces = [
        PurchaseTrace("a", np.array([8.0, 24.0]), np.array([0, 9])),
        PurchaseTrace("b", np.array([8.0, 24.0]), np.array([2, 4])),
        PurchaseTrace("c", np.array([8.0, 24.0]), np.array([4, 8])),
    ]
    with caplog.at_level("WARNING"):
        e = train_sp(Dataset(tuple(traces)), 8, 24)
    assert e.n == 2 and "excluded 1" in caplog.text


def test_sp_intercept_matches_generator():
    # fixed inflection at 1 h, big counts, popularity spread for a well-determined slope
    decay = NoveltyDecay.exponential(-0.21, -2.0, 30)
    noise = GrowthNoise(mu=math.log(0.25), sigma=0.5)
    cfg = SimConfig(
        rate=2000.0,
        tipping_point=1,
        propagation=PropagationModel(decay, noise),
        inflection_rule="fixed(1)",
        scale_dispersion=1.0,
        seed=17,
    )
    ds = simulate_cohort(cfg, 2000).dataset
    e = train_sp(ds, 8, 24)
    # steps 8..23 after the inflection fall between t=8 and t=24
    rng = np.random.default_rng(0)
    x = noise.sample(rng, 2_000_000)
    expected = sum(np.mean(np.log1p(decay(k) * x)) for k in range(8, 24))
    approx_eq9 = sum(decay(k) * noise.mean for k in range(8, 24))
    assert abs(e.slope - 1.0) < 3 * e.slope_se
    assert abs(e.intercept - expected) < 3 * e.intercept_se
    assert expected == pytest.approx(approx_eq9, rel=0.02)


def test_sp_prediction_identity_and_fixtures():
    ident = SpEntry(1, 24, 1.0, 0.0, 1.0, 10)
    assert predict_sp(ident, 57) == 57
    assert relative_error(251, 355) == pytest.approx(0.414, abs=5e-4)
    assert relative_error(129, 110) == pytest.approx(0.147, abs=5e-4)
    assert round(relative_error(75, 110), 2) == 0.47


def test_sp_model_lookup():
    m = SpModel()
    m.add(SpEntry(8, 24, 1.0, 0.5, 0.9, 10))
    assert predict_sp(m, 10, 8, 24) == round(10 * math.exp(0.5))
    with pytest.raises(KeyError):
        predict_sp(m, 10, 9, 24)


def test_sp_zero_count_falls_back(caplog):
    with caplog.at_level("WARNING"):
        assert predict_sp(SpEntry(8, 24, 1.0, 2.0, 1.0, 5), 0) == 0
    assert "baseline1" in caplog.text


@pytest.mark.parametrize("seed", [0, 1])
def test_sp_slope_near_one_on_model_data(seed):
    ds = simulate_cohort(SimConfig.groupon(seed=seed, scale_dispersion=1.5), 2000).dataset
    e = train_sp(ds, 8, 24)
    assert 0.9 <= e.slope <= 1.1


def test_training_is_deterministic():
    ds = simulate_cohort(SimConfig.groupon(seed=4, scale_dispersion=1.0), 300).dataset
    assert train_sp(ds, 6, 24) == train_sp(ds, 6, 24)


# ---------------------------------------------------------------- hybrid


def prefix_trace(counts, theta):
    t = np.arange(len(counts), dtype=float)
    return PurchaseTrace("p", t, np.array(counts), attributes=DealAttributes(theta))


def test_hybrid_groupon_untipped_uses_baseline1():
    sp = SpEntry(5, 24, 1.0, 1.0, 1.0, 10)
    tr = prefix_trace([0, 2, 4, 5, 6, 8], theta=20)
    assert predict_hybrid(HybridPolicy("groupon"), tr, 5, 24, sp) == 8


def test_hybrid_groupon_tipped_uses_sp():
    sp = SpEntry(5, 24, 1.0, 1.0, 1.0, 10)
    tr = prefix_trace([0, 2, 4, 5, 6, 30], theta=20)
    assert predict_hybrid(HybridPolicy("groupon"), tr, 5, 24, sp) == round(30 * math.e)


def test_hybrid_groupon_popular_override():
    sp = SpEntry(5, 24, 1.0, 1.0, 1.0, 10)
    tr = prefix_trace([0, 150, 200, 230, 240, 250], theta=20)
    assert HybridPolicy("groupon").choose(tr, 5) == "baseline1"
    assert predict_hybrid(HybridPolicy("groupon"), tr, 5, 24, sp) == 250


def test_hybrid_livingsocial_cutoff():
    pol = HybridPolicy("livingsocial")
    tr = prefix_trace([0, 5, 9, 14, 20], theta=1)
    assert pol.choose(tr, 2) == "baseline1"
    assert pol.choose(tr, 4) == "sp"
    assert predict_hybrid(pol, tr, 2, 24, None) == 9


def test_hybrid_missing_model():
    tr = prefix_trace([0, 5, 9, 14, 20], theta=1)
    with pytest.raises(ValueError):
        predict_hybrid(HybridPolicy("livingsocial"), tr, 4, 24, None)


def test_hybrid_policy_validation():
    with pytest.raises(ValueError):
        HybridPolicy("myspace")
    with pytest.raises(ValueError):
        HybridPolicy("livingsocial", cutoff_hours=-1)


# ---------------------------------------------------------------- serialization


def test_models_round_trip():
    rng = np.random.default_rng(5)
    attrs = [random_attrs(rng) for _ in range(30)]
    ds = Dataset(tuple(final_trace(f"d{i}", 10 + 3 * i, a) for i, a in enumerate(attrs)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        mlr = train_mlr(ds)
    sp = SpModel()
    sp.add(SpEntry(8.0, 24.0, 0.98, 1.1, 0.93, 100, 0.01, 0.05))
    d = models_to_dict(24.0, {8.0: Baseline2Params(1.5, 3.0)}, sp, mlr)
    t2, b2, sp2, mlr2 = models_from_dict(d)
    assert t2 == 24.0 and b2[8.0] == Baseline2Params(1.5, 3.0)
    assert sp2.entries == sp.entries
    assert [predict_mlr(mlr2, a) for a in attrs] == [predict_mlr(mlr, a) for a in attrs]
