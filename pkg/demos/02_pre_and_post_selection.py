"""
Pre-selection, post-selection and the weighted past average
===========================================================

Averaging voltages over runs that ended in +z gives the time-reversed
damped oscillation.  Weighting every run by its final +z probability gives
the same curve without discarding any data.
"""

import numpy as np

from monitored_qubit import REFERENCE_PARAMS, SimulationConfig, simulate_ensemble
from monitored_qubit import estimators as est

base = SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=20000, seed=11)
plus = simulate_ensemble(base)
mixed = simulate_ensemble(base.replace(herald_policy="unheralded-mixed", seed=12))

pre = est.preselected_average(plus)
post = est.postselected_average(mixed)
wp = est.weighted_average(mixed)

# heralding with fidelity 0.95 caps the pre-selected contrast at 2 * 0.95 - 1 = 0.9;
# post-selection is a projective readout and reaches full contrast at t = T
rows = slice(0, None, 10)
print("t [ns]   pre     pre(T-t)  post    weighted")
rev = pre.reversed().mean
for t, a, b, c, d in zip(pre.times[rows] * 1e9, pre.mean[rows], rev[rows], post.mean[rows], wp.mean[rows]):
    print(f"{t:6.0f}  {a:6.3f}  {b:7.3f}  {c:6.3f}  {d:7.3f}")

print(f"post-selected runs: {post.n_selected} of {len(mixed)}")
print(f"typical SE: post {np.median(post.se):.3f}, weighted {np.median(wp.se):.3f}")
