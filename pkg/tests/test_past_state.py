import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import density_matrices, evolve_oracle, liouvillian
from monitored_qubit.core import REFERENCE_PARAMS, HermitianOperator2, povm_density
from monitored_qubit.errors import DegenerateConditioningError, ParameterDomainError
from monitored_qubit.past_state import (
    adjoint_step_backward,
    analytic_effect,
    analytic_effect_components,
    analytic_rho,
    analytic_rho_components,
    past_mean_voltage,
    past_voltage_density,
    predict_weighted_correlation,
    predict_weighted_row,
    propagate_effect,
)
from monitored_qubit.trajectory import deterministic_solution, step_deterministic

P = REFERENCE_PARAMS
T = 2e-6


def _matrix(p00, c01):
    return np.array([[p00, c01], [c01, 1 - p00]])


# -- backward propagation --------------------------------------------------------


@given(density_matrices(), st.floats(0, 3e-6))
def test_adjoint_step_matches_adjoint_liouvillian(effect, dt):
    out = adjoint_step_backward(effect, P, dt)
    assert np.allclose(out.matrix(), evolve_oracle(effect, P, dt, backward=True), atol=1e-12)
    assert abs(out.trace - effect.trace) <= 1e-12


def test_adjoint_step_rejects_non_positive_input():
    with pytest.raises(ParameterDomainError):
        adjoint_step_backward(HermitianOperator2(1.2, -0.2), P, 1e-9)


def test_unitary_retrodiction_rotates_anchor_backwards():
    p = P.replace(measurement_rate=1e-12, dephasing_rate=0.0)
    traj = propagate_effect(HermitianOperator2.plus(), p, 100, 20e-9)
    tau = T - traj.times
    theta = -p.rabi_angular_frequency * tau
    # rotating +z by -theta about y gives Bloch (-sin, 0, cos)
    assert np.allclose(traj.m00 - traj.m11, np.cos(theta), atol=1e-10)
    assert np.allclose(2 * traj.re01, np.sin(theta), atol=1e-10)


def test_mixed_anchor_is_a_fixed_point():
    traj = propagate_effect(HermitianOperator2.maximally_mixed(), P, 100, 20e-9)
    assert np.all(traj.m00 == 0.5) and np.all(traj.re01 == 0) and np.all(traj.im01 == 0)


def test_effect_trajectory_invariants():
    traj = propagate_effect(HermitianOperator2.plus(), P, 100, 20e-9)
    assert traj.effect(100) == HermitianOperator2.plus()
    assert traj.anchor_time == pytest.approx(T)
    for m in range(len(traj)):
        e = traj[m]
        assert e.is_effect(1e-12) and abs(e.trace - 1) <= 1e-12


def test_backward_solution_matches_closed_form():
    p = P.replace(dephasing_rate=0.0)
    traj = propagate_effect(HermitianOperator2.plus(), p, 100, 20e-9)
    e00, e01 = analytic_effect_components(traj.times, T, p)
    assert np.max(np.abs(traj.m00 - e00)) < 1e-8
    assert np.max(np.abs(traj.re01 - e01)) < 1e-8


def test_forward_backward_duality():
    dt, n = 20e-9, 100
    rho = HermitianOperator2.from_bloch(0.3, -0.2, 0.8)
    r00, re, im = deterministic_solution(rho, P, n, dt)
    traj = propagate_effect(HermitianOperator2.from_bloch(0.1, 0.5, -0.6), P, n, dt)
    overlap = r00 * traj.m00 + (1 - r00) * traj.m11 + 2 * (re * traj.re01 + im * traj.im01)
    assert np.ptp(overlap) <= 1e-10


# -- closed forms -------------------------------------------------------------------


def test_analytic_rho_at_zero_is_the_herald():
    assert analytic_rho(0.0, P) == HermitianOperator2.plus()
    assert analytic_effect(T, T, P) == HermitianOperator2.plus()


def test_half_oscillation_population():
    p = P.replace(dephasing_rate=0.0)
    g = p.oscillation_rate
    assert g == pytest.approx(7.2640e6, rel=1e-4)
    t = math.pi / g
    expected = 0.5 - math.exp(-p.measurement_rate * math.pi / g) / 2
    assert expected == pytest.approx(0.1138, abs=5e-5)
    assert analytic_rho(t, p).m00 == pytest.approx(expected, abs=1e-14)
    numeric = integrate.solve_ivp(
        lambda _, y: (liouvillian(p) @ y),
        (0, t),
        np.array([1, 0, 0, 0], dtype=complex),
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    ).y[:, -1]
    assert numeric[0].real == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("gamma", [0.0, 1 / 16e-6])
def test_closed_forms_solve_the_master_equations(gamma):
    p = P.replace(dephasing_rate=gamma)
    L = liouvillian(p)
    Ladj = L.conj().T
    h = 1e-30
    t = np.random.default_rng(0).uniform(0, T, 1000)
    worst = 0.0
    for tk in t:
        p00, c01 = analytic_rho_components(tk + 1j * h, p)
        deriv = np.array([[p00.imag, c01.imag], [c01.imag, -p00.imag]]) / h
        rhs = (L @ _matrix(p00.real, c01.real).reshape(-1, order="F")).reshape(2, 2, order="F")
        worst = max(worst, np.max(np.abs(deriv - rhs)))
        # d/dt of E(t) with the anchor at T; the adjoint equation runs backwards
        e00, e01 = analytic_effect_components(tk + 1j * h, T, p)
        deriv = np.array([[e00.imag, e01.imag], [e01.imag, -e00.imag]]) / h
        rhs = -(Ladj @ _matrix(e00.real, e01.real).reshape(-1, order="F")).reshape(2, 2, order="F")
        worst = max(worst, np.max(np.abs(deriv - rhs)))
    assert worst / p.rabi_angular_frequency < 1e-9


def test_time_reversal_identity():
    t = np.linspace(0, T, 5001)
    e00, e01 = analytic_effect_components(t, T, P)
    r00, r01 = analytic_rho_components(T - t, P)
    assert np.max(np.abs(e00 - r00)) <= 1e-12
    assert np.max(np.abs(e01 + r01)) <= 1e-12
    assert np.max(np.abs((2 * e00 - 1) - (2 * r00 - 1))) <= 1e-12


def test_overdamped_parameters_are_rejected():
    p = P.replace(rabi_angular_frequency=0.5 * P.effective_rate)
    with pytest.raises(ParameterDomainError, match="numeric"):
        analytic_rho(1e-7, p)
    with pytest.raises(ParameterDomainError):
        analytic_effect(0.0, T, p)


# -- conditioned voltage densities ----------------------------------------------------


@given(density_matrices())
def test_uninformative_effect_reduces_to_povm_density(rho):
    dens = past_voltage_density(rho, HermitianOperator2.maximally_mixed(), P.variance)
    V = np.linspace(-40, 40, 101)
    assert np.allclose(dens(V), povm_density(rho, V, P.variance), rtol=1e-12, atol=1e-300)


def test_projector_on_projector_is_single_gaussian():
    dens = past_voltage_density(HermitianOperator2.plus(), HermitianOperator2.plus(), P.variance)
    V = np.linspace(-30, 30, 61)
    g = np.exp(-((V - 1) ** 2) / (2 * P.variance)) / math.sqrt(2 * math.pi * P.variance)
    assert np.allclose(dens(V), g, rtol=1e-12)


def test_mixed_state_future_plus_mean():
    dens = past_voltage_density(HermitianOperator2.maximally_mixed(), HermitianOperator2.plus(), 59.83)
    assert dens.mean == 1.0
    assert integrate.quad(lambda v: v * dens(v), -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-9)


@given(density_matrices(), density_matrices())
def test_density_normalizes_and_mean_matches_quadrature(rho, effect):
    try:
        dens = past_voltage_density(rho, effect, P.variance)
    except DegenerateConditioningError:
        return
    if dens.normalization < 1e-6:
        return
    lim = 1 + 30 * P.a
    norm = integrate.quad(dens, -lim, lim, points=[-1, 1])[0]
    mean = integrate.quad(lambda v: v * dens(v), -lim, lim, points=[-1, 1])[0]
    assert norm == pytest.approx(1, abs=1e-8)
    assert mean == pytest.approx(dens.mean, abs=1e-7)


def test_orthogonal_supports_are_degenerate():
    with pytest.raises(DegenerateConditioningError):
        past_voltage_density(HermitianOperator2.plus(), HermitianOperator2.minus(), P.variance)
    with pytest.raises(DegenerateConditioningError):
        past_mean_voltage(HermitianOperator2.plus(), HermitianOperator2.minus())


def test_past_mean_examples():
    assert past_mean_voltage(HermitianOperator2(0.95, 0.05), HermitianOperator2.maximally_mixed()) == pytest.approx(0.90, abs=1e-15)
    for rho in (HermitianOperator2(0.3, 0.7), HermitianOperator2.from_bloch(0.5, 0.1, 0.2)):
        assert past_mean_voltage(rho, HermitianOperator2.plus()) == 1.0
    e = HermitianOperator2.from_bloch(0.2, 0.0, 0.5)
    assert past_mean_voltage(HermitianOperator2.maximally_mixed(), e) == pytest.approx(e.m00 - e.m11, abs=1e-15)


@given(density_matrices(), density_matrices(), st.sampled_from([0.5, 2.0, 4.0, 2.0**-10, 2.0**20]))
def test_past_mean_is_scale_invariant_in_the_effect(rho, effect, c):
    try:
        ref = past_mean_voltage(rho, effect)
    except DegenerateConditioningError:
        return
    scaled = HermitianOperator2(effect.m00 * c, effect.m11 * c, effect.re01 * c, effect.im01 * c)
    assert past_mean_voltage(rho, scaled) == ref


def test_finite_variance_gap_shrinks_like_inverse_variance():
    rho = HermitianOperator2.from_bloch(0.6, 0.0, 0.3)
    effect = HermitianOperator2.from_bloch(0.5, 0.0, 0.4)
    weak = past_mean_voltage(rho, effect)
    gaps = []
    for a2 in (10.0, 100.0, 1000.0):
        dens = past_voltage_density(rho, effect, a2)
        lim = 1 + 30 * math.sqrt(a2)
        m = integrate.quad(lambda v: v * dens(v), -lim, lim, points=[-1, 1], epsabs=1e-13)[0]
        gaps.append(abs(m - weak) / abs(weak))
    gaps = np.array(gaps)
    slope = np.polyfit(np.log([10, 100, 1000]), np.log(gaps), 1)[0]
    assert slope == pytest.approx(-1, abs=0.05)


# -- predictions -----------------------------------------------------------------------


def test_prediction_requires_earlier_time():
    with pytest.raises(ParameterDomainError, match="earlier"):
        predict_weighted_correlation(1e-6, 1e-6, P)
    with pytest.raises(ParameterDomainError):
        predict_weighted_correlation(1.5e-6, 1e-6, P)


def test_mixed_prediction_is_time_reversed_signal():
    p = P.replace(dephasing_rate=0.0)
    for t in np.linspace(0, T, 11)[:-1]:
        e00, _ = analytic_effect_components(t, T, p)
        assert predict_weighted_correlation(t, T, p, herald="unheralded-mixed") == pytest.approx(2 * e00 - 1, abs=1e-12)


def test_prediction_approaches_full_contrast_at_the_anchor():
    vals = [predict_weighted_correlation(1e-6 - d, 1e-6, P, prep_fidelity=0.95) for d in (1e-8, 1e-10, 1e-12)]
    assert abs(1 - vals[-1]) < 1e-5
    assert abs(1 - vals[0]) > abs(1 - vals[1]) > abs(1 - vals[2])


def test_qnd_prediction_is_constant():
    p = P.replace(rabi_angular_frequency=0.0)
    row = predict_weighted_row(80, p)
    assert np.all(row == 1.0)


def test_row_matches_pointwise_predictions():
    row = predict_weighted_row(50, P, prep_fidelity=0.95)
    dt = P.bin_duration
    for m in (0, 17, 49):
        assert row[m] == pytest.approx(predict_weighted_correlation(m * dt, 50 * dt, P, prep_fidelity=0.95), abs=1e-12)


def test_forward_state_step_consistency():
    # the exact forward step composes: two half steps equal one full step
    rho = HermitianOperator2.from_bloch(0.1, 0.2, 0.3)
    a = step_deterministic(step_deterministic(rho, P, 1e-8), P, 1e-8)
    b = step_deterministic(rho, P, 2e-8)
    assert np.allclose(a.components(), b.components(), atol=1e-14)
