import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import density_matrices, evolve_oracle, random_states, trace_distance
from monitored_qubit import estimators as est
from monitored_qubit.core import REFERENCE_PARAMS, HermitianOperator2, bloch, purity
from monitored_qubit.errors import IntegratorInstabilityError, ParameterDomainError
from monitored_qubit.past_state import analytic_rho_components
from monitored_qubit.trajectory import (
    Ensemble,
    SimulationConfig,
    _euler_components,
    deterministic_solution,
    herald_prepare,
    refilter,
    sample_voltage,
    simulate_ensemble,
    simulate_trajectory,
    step_bayesian,
    step_deterministic,
    step_sme_euler,
)

# -- deterministic master equation ---------------------------------------------------


@given(density_matrices(), st.floats(0, 3e-6))
def test_step_deterministic_matches_liouvillian_exponential(rho, t):
    out = step_deterministic(rho, REFERENCE_PARAMS, t)
    assert np.allclose(out.matrix(), evolve_oracle(rho, REFERENCE_PARAMS, t), atol=1e-12)
    assert abs(out.trace - 1) <= 1e-12


@pytest.mark.parametrize("method", ["exact", "rk4"])
def test_deterministic_solution_matches_closed_form(method):
    p = REFERENCE_PARAMS.replace(dephasing_rate=0.0)
    n, dt = 2000, 1e-9
    r00, r01, _ = deterministic_solution(HermitianOperator2.plus(), p, n, dt, method)
    a00, a01 = analytic_rho_components(np.arange(n + 1) * dt, p)
    assert np.max(np.abs(r00 - a00)) < 1e-8
    assert np.max(np.abs(r01 - a01)) < 1e-8


def test_vanishing_dephasing_gives_pure_rabi_rotation():
    p = REFERENCE_PARAMS.replace(measurement_rate=1e-12, dephasing_rate=0.0)
    n, dt = 2000, 1e-9
    r00, _, _ = deterministic_solution(HermitianOperator2.plus(), p, n, dt)
    t = np.arange(n + 1) * dt
    assert np.max(np.abs((2 * r00 - 1) - np.cos(p.rabi_angular_frequency * t))) < 1e-10


def test_long_time_limit_is_maximally_mixed():
    p = REFERENCE_PARAMS
    out = step_deterministic(HermitianOperator2.from_bloch(0.3, 0.4, 0.5), p, 50 / p.measurement_rate)
    assert np.allclose(out.components(), (0.5, 0.5, 0.0, 0.0), atol=1e-6)


def test_split_step_is_second_order_close_to_exact():
    rho = HermitianOperator2.from_bloch(0.2, 0.1, 0.9)
    errs = [trace_distance(step_deterministic(rho, REFERENCE_PARAMS, dt, "split"), step_deterministic(rho, REFERENCE_PARAMS, dt)) for dt in (2e-8, 1e-8)]
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)


def test_unknown_method_is_rejected():
    with pytest.raises(ValueError, match="unknown method"):
        step_deterministic(HermitianOperator2.plus(), REFERENCE_PARAMS, 1e-9, "euler")


# -- voltage sampling -------------------------------------------------------------


def test_sample_voltage_eigenstate_mean():
    rng = np.random.default_rng(0)
    p = REFERENCE_PARAMS
    v = np.array([sample_voltage(HermitianOperator2.plus(), p, rng) for _ in range(1_000_000)])
    assert abs(v.mean() - 1) <= 4 * p.a / 1e3


def test_sample_voltage_mixture_moments():
    rng = np.random.default_rng(1)
    p = REFERENCE_PARAMS
    n = 200_000
    v = np.array([sample_voltage(HermitianOperator2.maximally_mixed(), p, rng) for _ in range(n)])
    assert abs(v.mean()) <= 4 * v.std() / math.sqrt(n)
    var_se = math.sqrt((np.mean((v - v.mean()) ** 4) - v.var() ** 2) / n)
    assert abs(v.var() - (p.variance + 1)) <= 4 * var_se


def test_sample_voltage_weak_limit_is_single_gaussian():
    rng = np.random.default_rng(2)
    p = REFERENCE_PARAMS.replace(efficiency=REFERENCE_PARAMS.efficiency * 1e-3)  # a2 ~ 6e4
    rho = HermitianOperator2.from_bloch(0.0, 0.0, 0.4)
    v = np.array([sample_voltage(rho, p, rng) for _ in range(5000)])
    assert stats.kstest(v, stats.norm(loc=0.4, scale=p.a).cdf).pvalue > 0.01


# -- conditioned steppers ----------------------------------------------------------


def test_measurement_pins_state_without_drive():
    p = REFERENCE_PARAMS.replace(rabi_angular_frequency=0.0)
    rng = np.random.default_rng(3)
    rho = HermitianOperator2.maximally_mixed()
    for _ in range(3000):
        rho = step_bayesian(rho, 1.0 + p.a * rng.standard_normal(), p)
    assert rho.m00 > 1 - 1e-6


@given(density_matrices(pure=True), st.floats(-40, 40))
def test_step_bayesian_keeps_purity_at_unit_efficiency(rho, V):
    assert abs(purity(step_bayesian(rho, V, REFERENCE_PARAMS.with_oracle())) - 1) <= 1e-12


def test_symmetric_evidence_leaves_mixed_state_symmetric():
    out = step_bayesian(HermitianOperator2.maximally_mixed(), 0.0, REFERENCE_PARAMS)
    b = bloch(out)
    assert b.z == 0 and b.x == 0


def test_euler_raw_form_fixed_point_without_drive():
    p = REFERENCE_PARAMS.replace(rabi_angular_frequency=0.0)
    rho = HermitianOperator2(0.7, 0.3)
    assert np.allclose(step_sme_euler(rho, 0.0, p, form="raw").components(), rho.components(), rtol=0, atol=1e-15)
    # the innovation form reads V = 0 as evidence for -z unless <sigma_z> = 0
    assert step_sme_euler(HermitianOperator2.maximally_mixed(), 0.0, p) == HermitianOperator2.maximally_mixed()


def test_euler_rejects_unknown_form_and_reports_instability():
    with pytest.raises(ValueError):
        step_sme_euler(HermitianOperator2.plus(), 0.0, REFERENCE_PARAMS, form="ito")
    with pytest.raises(IntegratorInstabilityError):
        step_sme_euler(HermitianOperator2.maximally_mixed(), 1e308, REFERENCE_PARAMS)


def _single_step_errors(dts, n=1000, seed=0):
    rng = np.random.default_rng(seed)
    states = random_states(rng, n)
    u, xi = rng.random(n), rng.standard_normal(n)
    errs = []
    for dt in dts:
        p = REFERENCE_PARAMS.replace(bin_duration=dt)
        e = [
            trace_distance(step_sme_euler(s, V, p), step_bayesian(s, V, p))
            for s, V in ((s, (1.0 if u[i] < s.m00 else -1.0) + p.a * xi[i]) for i, s in enumerate(states))
        ]
        errs.append(float(np.mean(e)))
    return np.array(errs)


DTS = np.array([20e-9, 10e-9, 5e-9, 2.5e-9])


def test_euler_single_step_converges_at_first_order():
    errs = _single_step_errors(DTS)
    assert np.all(np.diff(errs) < 0)
    slope = np.polyfit(np.log(DTS), np.log(errs), 1)[0]
    assert 0.9 <= slope <= 1.6


@pytest.mark.xfail(strict=True, reason="single-step Euler error scales as dt^1 with V drawn from its law, not dt^1.5 with a tenfold drop per halving")
def test_euler_single_step_three_halves_order():
    errs = _single_step_errors(DTS)
    slope = np.polyfit(np.log(DTS), np.log(errs), 1)[0]
    assert slope >= 1.5 and np.all(errs[:-1] / errs[1:] >= 10)


def _mean_euler_error(dt, form):
    p = REFERENCE_PARAMS.replace(bin_duration=dt)
    rho = HermitianOperator2.from_bloch(0.4, 0.2, 0.6)
    V = np.linspace(-1 - 14 * p.a, 1 + 14 * p.a, 400_001)
    w = rho.m00 * stats.norm.pdf(V, 1, p.a) + rho.m11 * stats.norm.pdf(V, -1, p.a)
    comps, _ = _euler_components(rho.m00, rho.m11, rho.re01, rho.im01, V, p, form)
    mean = [np.trapezoid(w * c, V) for c in comps]
    return trace_distance(HermitianOperator2(*mean), step_deterministic(rho, p, dt))


def test_euler_ensemble_mean_is_deterministic_step_to_second_order():
    errs = np.array([_mean_euler_error(dt, "innovation") for dt in DTS[:3]])
    assert np.all(errs[:-1] / errs[1:] > 3.2)


def test_raw_euler_form_has_first_order_mean_bias():
    raw = np.array([_mean_euler_error(dt, "raw") for dt in DTS])
    assert 1.6 < raw[-2] / raw[-1] < 2.5
    assert raw[-1] > 5 * _mean_euler_error(DTS[-1], "innovation")


def _stepper_distance(dt, n=300):
    p = REFERENCE_PARAMS.replace(bin_duration=dt)
    cfg = SimulationConfig(params=p, total_time=2e-6, n_trajectories=n, seed=99)
    ens = simulate_ensemble(cfg)
    _, s0 = herald_prepare("herald-plus", cfg.prep_fidelity)
    r00, re, im = refilter(ens.voltages, s0, p, "euler-sme")
    d = np.sqrt((r00 - ens.rho00) ** 2 + (re - ens.re01) ** 2 + (im - ens.im01) ** 2)
    return d


def test_steppers_converge_under_refinement():
    means = np.array([_stepper_distance(dt).mean() for dt in DTS[:3]])
    assert np.all(np.diff(means) < 0)
    slope = np.polyfit(np.log(DTS[:3]), np.log(means), 1)[0]
    assert 0.7 <= slope <= 1.3


@pytest.mark.xfail(strict=True, reason="at 20 ns bins the Euler and Bayesian trajectories differ by ~0.1 in trace distance on average")
def test_steppers_agree_within_5e_3_at_device_bins():
    assert _stepper_distance(20e-9).max() <= 5e-3


@pytest.mark.xfail(strict=True, reason="the stepper discrepancy shrinks like dt^1, faster than dt^0.5")
def test_stepper_discrepancy_shrinks_like_sqrt_dt():
    means = np.array([_stepper_distance(dt).mean() for dt in DTS[:3]])
    slope = np.polyfit(np.log(DTS[:3]), np.log(means), 1)[0]
    assert abs(slope - 0.5) <= 0.15


def test_euler_ensemble_runs_at_device_parameters():
    cfg = SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=200, seed=5, integrator="euler-sme")
    ens = simulate_ensemble(cfg)
    assert np.all(np.isfinite(ens.rho00))
    assert np.all((ens.rho00 >= 0) & (ens.rho00 <= 1))


# -- heralding and configuration ---------------------------------------------------------


def test_herald_prepare_examples():
    h, rho = herald_prepare("herald-plus", 0.95)
    assert h == 1 and rho.m00 == 0.95 and rho.m11 == pytest.approx(0.05, abs=1e-15)
    assert herald_prepare("minus", 0.95)[1].m11 == 0.95
    assert herald_prepare("unheralded-mixed", 0.95) == (None, HermitianOperator2.maximally_mixed())
    assert herald_prepare("plus", 1.0)[1] == HermitianOperator2.plus()
    with pytest.raises(ParameterDomainError):
        herald_prepare("plus", 0.4)
    with pytest.raises(ParameterDomainError):
        herald_prepare("sideways", 0.9)


def test_config_requires_integer_bin_count():
    with pytest.raises(ParameterDomainError, match="integer"):
        SimulationConfig(params=REFERENCE_PARAMS, total_time=2.01e-6, n_trajectories=10, seed=0)
    with pytest.raises(ParameterDomainError):
        SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=0, seed=0)
    with pytest.raises(ParameterDomainError):
        SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=1, seed=-1)
    assert SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=1, seed=0).n_bins == 100


def test_oracle_mode_forces_ideal_detection():
    cfg = SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=1, seed=0, oracle_mode=True)
    assert cfg.effective_params.efficiency == 1 and cfg.effective_params.dephasing_rate == 0
    assert cfg.effective_prep_fidelity == 1


# -- runs and ensembles ---------------------------------------------------------------------


def test_record_and_trajectory_shapes(plus_ensemble):
    rec, traj = plus_ensemble[3]
    assert len(rec.voltages) == 100 and len(traj) == 101
    assert rec.herald == 1 and rec.final_outcome in (0, 1)
    assert all(traj.state(m).is_density(1e-12) for m in range(len(traj)))


def test_qnd_run_without_drive():
    p = REFERENCE_PARAMS.replace(rabi_angular_frequency=0.0)
    cfg = SimulationConfig(params=p, total_time=2e-6, n_trajectories=300, seed=8, prep_fidelity=1.0)
    ens = simulate_ensemble(cfg)
    assert np.all(ens.rho00 == 1.0) and np.all(ens.re01 == 0)
    assert np.all(ens.final_outcome == 1)


def test_simulate_trajectory_is_a_pure_function_of_seed_and_index(device_config, plus_ensemble):
    for idx in (0, 511, 512, 3999):
        rec, traj = simulate_trajectory(device_config, idx)
        rec2, traj2 = simulate_trajectory(device_config, idx)
        assert np.array_equal(rec.voltages, rec2.voltages)
        assert np.array_equal(rec.voltages, plus_ensemble.voltages[idx])
        assert np.array_equal(traj.rho00, plus_ensemble.rho00[idx])
        assert rec.final_outcome == plus_ensemble.final_outcome[idx]


def test_worker_count_does_not_change_results(device_config, plus_ensemble):
    other = simulate_ensemble(device_config, threads=2)
    for name in ("voltages", "rho00", "re01", "im01", "final_outcome", "herald"):
        assert np.array_equal(getattr(other, name), getattr(plus_ensemble, name))


def test_ensemble_order_is_canonical(plus_ensemble):
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(plus_ensemble))
    shuffled = Ensemble.from_pairs(plus_ensemble.config, [plus_ensemble[i] for i in perm])
    assert np.array_equal(shuffled.ids, plus_ensemble.ids)
    assert np.array_equal(shuffled.voltages, plus_ensemble.voltages)
    assert np.array_equal(est.weighted_average(shuffled).mean, est.weighted_average(plus_ensemble).mean)


def test_refilter_reproduces_engine(plus_ensemble):
    _, s0 = herald_prepare("herald-plus", 0.95)
    r00, re, im = refilter(plus_ensemble.voltages, s0, plus_ensemble.config.params)
    assert np.array_equal(r00, plus_ensemble.rho00)
    assert np.array_equal(re, plus_ensemble.re01) and np.array_equal(im, plus_ensemble.im01)


def test_final_outcomes_follow_final_populations(plus_ensemble):
    d = plus_ensemble.final_outcome - plus_ensemble.rho00[:, -1]
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / math.sqrt(len(d))


def test_martingale_property(plus_ensemble):
    cfg = plus_ensemble.config
    _, s0 = herald_prepare("herald-plus", cfg.prep_fidelity)
    checks = [
        (plus_ensemble.rho00, deterministic_solution(s0, cfg.params, cfg.n_bins, cfg.params.bin_duration)[0]),
        (plus_ensemble.re01, deterministic_solution(s0, cfg.params, cfg.n_bins, cfg.params.bin_duration, "split")[1]),
    ]
    for values, reference in checks:
        r = est.RatioEstimator(values[:, 1:], np.ones(len(plus_ensemble)))
        se = r.replicates(200, 0).std(axis=0, ddof=1)
        z = np.abs(r.value() - reference[1:]) / se
        assert z.max() <= est.corrected_z(len(z))


def test_noise_is_independent_of_earlier_states(plus_ensemble):
    e = plus_ensemble
    innovation = e.voltages - (2 * e.rho00[:, :-1] - 1)
    pairs = [(m, mp) for mp in (10, 40, 70) for m in (mp, mp + 5, 95)]
    thr = est.corrected_z(len(pairs))
    for m, mp in pairs:
        r = np.corrcoef(innovation[:, m], e.rho00[:, mp])[0, 1]
        assert abs(r) * math.sqrt(len(e)) <= thr


def test_twenty_thousand_runs_within_budget():
    cfg = SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=20_000, seed=3)
    t0 = time.perf_counter()
    simulate_ensemble(cfg)
    assert time.perf_counter() - t0 < 60
