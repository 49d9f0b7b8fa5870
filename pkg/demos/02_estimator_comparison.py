"""Side-by-side run of all six pipelines on one adaptive-policy world.

Replicates the qualitative picture of the estimator study: pipelines that
ignore future treatments (total, surrogate) carry large bias; dynamically
adjusted pipelines cluster near the truth whether or not they see the raw
long-term outcome.
"""

import numpy as np

from dynsurr import EstimatorConfig, ground_truth_theta, run_estimator, simulate_linear
from dynsurr.dgp import adaptive_comparison_params

params = adaptive_comparison_params(p=5, k=2, M=4, seed=303,
                                    autocorr=0.5, feedback=0.4)
truth = ground_truth_theta(params).theta0
print("true theta0:", np.round(truth, 3))
print()

reps = 10
kinds = ("total", "surrogate", "adj_total", "adj_surrogate",
         "new_treat", "deb_new_treat")
errors = {k: [] for k in kinds}
for r in range(reps):
    data = simulate_linear(params, 4000, 4000, seed=100 + r)
    for kind in kinds:
        rep = run_estimator(kind, data, EstimatorConfig(seed=r))
        errors[kind].append(float(np.linalg.norm(rep.theta0 - truth)))

print(f"{'estimator':>14s}  {'mean l2 error':>13s}  {'worst':>7s}")
for kind in kinds:
    e = np.array(errors[kind])
    print(f"{kind:>14s}  {e.mean():13.4f}  {e.max():7.4f}")
