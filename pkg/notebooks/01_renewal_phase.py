"""
Random discovery before the inflection point
============================================

Before a deal tips, purchases arrive like a Poisson process. This script
fits the arrival rate from interarrival times, then asks how likely a deal
is to miss its tipping point.
"""

import numpy as np

from dealflow import (
    PurchaseTrace,
    RenewalModel,
    conditional_failure_probability,
    failure_probability,
    fit_exponential,
    interarrival_times,
    tipping_time_density,
)

rng = np.random.default_rng(0)

# %%
# Deals observed every 20 minutes for their first 10 hours, arrivals at
# 2.1 per hour.
grid = np.arange(0, 10 + 1e-9, 1 / 3)
traces = []
for i in range(200):
    arrivals = np.cumsum(rng.exponential(1 / 2.1, size=60))
    traces.append(PurchaseTrace(f"deal{i}", grid, np.searchsorted(arrivals, grid, side="right")))
print("purchases by 10 h in the first deal:", traces[0].final_count)

# Only counts are observed, so arrivals inside each interval are spread
# uniformly before taking differences.
gaps = np.concatenate([interarrival_times(tr) for tr in traces])
model = fit_exponential(gaps)
print(f"fitted rate {model.rate:.2f}/h from {model.n_obs} gaps, R^2 {model.fit_r2:.3f}")

# %%
# Probability of failing to reach 22 purchases in a day. The zero-purchase
# term can be left out to match the telescoping-sum form.
m = RenewalModel(2.1)
for theta in (10, 22, 40, 50):
    full = failure_probability(m, theta, 24.0)
    no_zero = failure_probability(m, theta, 24.0, include_zero=False)
    print(f"theta={theta:3d}  P(fail)={full:.3e}  without N=0 term: {no_zero:.3e}")

# The two forms only separate when a quiet day is plausible.
slow = RenewalModel(0.1)
for theta in (2, 5):
    full = failure_probability(slow, theta, 24.0)
    no_zero = failure_probability(slow, theta, 24.0, include_zero=False)
    print(f"theta={theta:3d}  P(fail)={full:.3e}  without N=0 term: {no_zero:.3e}")

# %%
# Conditioning on what has been seen so far: 6 purchases after 4 hours,
# tipping point 40.
print("P(fail | 6 by 4 h) =", round(conditional_failure_probability(m, 40, 6, 4.0, 24.0), 4))

# %%
# The tipping time follows Gamma(theta, rate); its mode sits at (theta-1)/rate.
t = np.linspace(0, 24, 241)
pdf = tipping_time_density(22, 2.1, t)
print(f"tipping time mode {t[np.argmax(pdf)]:.1f} h, mean {22 / 2.1:.1f} h")
