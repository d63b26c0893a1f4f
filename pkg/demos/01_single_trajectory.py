"""
A single monitored qubit
========================

Simulate a few runs of a driven qubit under weak sigma_z measurement and
compare the conditioned state with the unconditioned master equation.
"""

import numpy as np

from monitored_qubit import REFERENCE_PARAMS, SimulationConfig, simulate_ensemble, simulate_trajectory
from monitored_qubit.past_state import analytic_rho_components

# reference device: 1.16 MHz Rabi drive, 95 kHz measurement rate, 20 ns bins
cfg = SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=2000, seed=7)
print(f"a^2 = {REFERENCE_PARAMS.variance:.2f}, {cfg.n_bins} bins")

# one run is a pure function of (seed, index)
record, traj = simulate_trajectory(cfg, 0)
z = 2 * traj.rho00 - 1
print("first run, <sigma_z> every 200 ns:", np.round(z[::10], 3))
print("final projective outcome:", "+z" if record.final_outcome == 1 else "-z")

# the ensemble mean of the conditioned populations follows the master equation
ens = simulate_ensemble(cfg)
r00, _ = analytic_rho_components(cfg.times, REFERENCE_PARAMS)
f = cfg.prep_fidelity
mean_z = (2 * ens.rho00 - 1).mean(axis=0)
print("mean <sigma_z>   :", np.round(mean_z[::10], 3))
print("master equation  :", np.round((2 * f - 1) * (2 * r00[::10] - 1), 3))
