"""
Two-time correlation between signal and state
=============================================

The rho00(t')-weighted mean of V(t) follows a deterministic past-state
prediction for t < t' and a trajectory-only estimator for t > t'; the two
branches meet in a kink at t = t'.
"""

import numpy as np

from monitored_qubit import REFERENCE_PARAMS, SimulationConfig, simulate_ensemble
from monitored_qubit import estimators as est
from monitored_qubit.past_state import predict_weighted_row

cfg = SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=50000, seed=3)
ens = simulate_ensemble(cfg)
grid = est.hybrid_correlation_grid(ens)
ss = est.state_state_grid(ens)

j = cfg.n_bins // 2  # t' = T/2
pred = predict_weighted_row(j, REFERENCE_PARAMS, prep_fidelity=cfg.prep_fidelity, a2=REFERENCE_PARAMS.variance)
print("t [ns]  hybrid   predicted  state-state")
for i in range(0, cfg.n_bins, 5):
    p = f"{pred[i]:9.3f}" if i < j else " " * 9
    s = f"{ss.value[i, j]:9.3f}" if i >= j else ""
    print(f"{grid.t[i] * 1e9:6.0f}  {grid.value[i, j]:6.3f}  {p}  {s}")

kink, se = est.kink_statistic(ens, j)
print(f"second difference across t = t': {kink:.3f} ({kink / se:.1f} SE)")
print("largest |hybrid - prediction| / SE for t < t':", np.round(np.max(np.abs(grid.value[:j, j] - pred) / grid.se[:j, j]), 2))
