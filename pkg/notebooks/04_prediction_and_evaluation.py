"""
Predicting the final purchase count
===================================

Four predictors are compared on a train/test split: the current count
(baseline1), a linear map (baseline2), a regression on deal attributes
(MLR), and the log-log social propagation predictor (SP). The hybrid
policy uses baseline1 until a deal tips and SP afterwards.
"""

import warnings

import numpy as np

from dealflow import (
    EvalConfig,
    HybridPolicy,
    RankDeficiencyWarning,
    SimConfig,
    evaluate,
    predict_hybrid,
    relative_error,
    simulate_cohort,
    split_dataset,
    train_sp,
)

warnings.simplefilter("ignore", RankDeficiencyWarning)

# %%
# Deals differ in popularity: a lognormal scale multiplies both the rate
# and the tipping point.
ds = simulate_cohort(SimConfig.groupon(seed=7, scale_dispersion=1.5), 2000).dataset
train, test = split_dataset(ds, 0.5, seed=0)

sp = train_sp(train, 12, 24)
print(f"SP(12 -> 24): slope {sp.slope:.3f} intercept {sp.intercept:.3f} R^2 {sp.r_squared:.3f}")

# %%
# One deal, hybrid prediction from its 12-hour prefix.
tr = test[0]
pred = predict_hybrid(HybridPolicy("groupon"), tr.prefix(12.0), 12.0, 24.0, sp)
print(f"{tr.deal_id}: N_12={tr.count_at(12.0)}, predicted {pred}, actual {tr.count_at(24.0)}, "
      f"error {relative_error(tr.count_at(24.0), pred):.2f}")

# %%
# Full grid of horizons.
report = evaluate(EvalConfig(horizons=tuple(float(h) for h in range(2, 24, 2))), ds)
print(report.to_csv())

errs = report.errors("sp", 12.0)
print(f"SP at 12 h: {np.mean(errs < 0.5):.1%} of deals under 50% error, "
      f"{np.mean(errs < 0.2):.1%} under 20%")
