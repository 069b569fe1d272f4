"""
Synthetic cohorts
=================

The simulator chains both phases: Poisson arrivals until the inflection
point, hourly multiplicative growth afterwards. Every deal draws from its
own random stream keyed by (seed, deal index), so results do not depend
on thread count.
"""

import numpy as np

from dealflow import (
    RenewalModel,
    SimConfig,
    failure_probability,
    mean_growth_curve,
    simulate_cohort,
    simulate_deal,
)

# %%
cfg = SimConfig.groupon(seed=3)
res = simulate_cohort(cfg, 5000)
failed = np.mean([tau is None for tau in res.tipping_times.values()])
print(f"failed deals {failed:.4f}, analytic {failure_probability(RenewalModel(2.1), 22, 24.0):.4f}")

# A harder tipping point makes failures common.
hard = simulate_cohort(SimConfig.groupon(seed=3, tipping_point=50), 5000)
failed_hard = np.mean([tau is None for tau in hard.tipping_times.values()])
print(f"theta=50: failed {failed_hard:.3f}, analytic {failure_probability(RenewalModel(2.1), 50, 24.0):.3f}")

# %%
# Mean growth curve on an hourly grid.
curve = mean_growth_curve(res.dataset, 1.0)
slope = np.diff(curve[:, 1])
print("hourly mean increments:", np.round(slope, 2))

# %%
# Same seed and index reproduce a deal exactly, with or without threads.
assert simulate_deal(cfg, 42) == res.dataset[42]
assert simulate_cohort(cfg, 200, threads=4).dataset.traces == simulate_cohort(cfg, 200).dataset.traces

# %%
# Diurnal seasonality redistributes arrivals but keeps the daily mean.
profile = np.concatenate([np.full(8, 0.25), np.full(16, 1.375)])
night = simulate_cohort(SimConfig(rate=3.0, tipping_point=10_000, seasonality=tuple(profile), seed=4), 2000)
print("mean purchases/day with seasonality:", np.mean([tr.final_count for tr in night.dataset]))

# %%
# A sales cap stops growth at the cap.
capped = simulate_cohort(SimConfig.groupon(seed=5, max_sales=30), 500)
print("largest final count with cap 30:", max(tr.final_count for tr in capped.dataset))
