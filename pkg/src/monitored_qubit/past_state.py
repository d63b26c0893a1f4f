"""Backward-propagated effect matrices and predictions conditioned on the future.

The effect matrix ``E(t)`` carries the information of a later projective
outcome back to time ``t``.  Together with the forward state ``rho(t)`` it
fixes the distribution of the voltage recorded at ``t`` given both the herald
and the later outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .core import HermitianOperator2, PhysicalParams, gaussian
from .errors import DegenerateConditioningError, ParameterDomainError
from .trajectory import herald_prepare

__all__ = [
    "EffectTrajectory",
    "adjoint_step_backward",
    "propagate_effect",
    "analytic_rho_components",
    "analytic_rho",
    "analytic_effect_components",
    "analytic_effect",
    "PastVoltageDensity",
    "past_voltage_density",
    "past_mean_voltage",
    "predict_weighted_correlation",
    "predict_weighted_row",
]

_DENOM_TOL = 1e-12


@dataclass(frozen=True)
class EffectTrajectory:
    times: np.ndarray
    m00: np.ndarray
    m11: np.ndarray
    re01: np.ndarray
    im01: np.ndarray
    anchor_time: float
    anchor: HermitianOperator2

    def __len__(self):
        return len(self.times)

    def effect(self, m: int) -> HermitianOperator2:
        return HermitianOperator2(float(self.m00[m]), float(self.m11[m]), float(self.re01[m]), float(self.im01[m]))

    __getitem__ = effect


def adjoint_step_backward(effect: HermitianOperator2, params: PhysicalParams, dt: float, method: str = "exact") -> HermitianOperator2:
    """Move the effect matrix from ``t`` to ``t - dt`` under the adjoint master equation.

    The rotation runs in the opposite sense to the forward drive; the
    dephasing is identical.  ``method`` as in :func:`~monitored_qubit.trajectory.step_deterministic`.
    """
    if not effect.is_effect(1e-12):
        raise ParameterDomainError(f"effect matrix must be positive semidefinite: {effect}")
    return dynamics.step(effect, params, dt, dynamics.BACKWARD, method)


def propagate_effect(
    anchor: HermitianOperator2,
    params: PhysicalParams,
    n_steps: int,
    dt: float,
    anchor_time: float | None = None,
    method: str = "exact",
) -> EffectTrajectory:
    """E(t_m) for m = 0..n_steps on the grid t_m = m dt, anchored at t_{n_steps}."""
    out = np.empty((n_steps + 1, 4))
    e = anchor
    for m in range(n_steps, -1, -1):
        out[m] = e.components()
        if m > 0:
            e = adjoint_step_backward(e, params, dt, method)
    times = np.arange(n_steps + 1) * dt
    return EffectTrajectory(
        times, out[:, 0], out[:, 1], out[:, 2], out[:, 3],
        n_steps * dt if anchor_time is None else anchor_time, anchor,
    )


def _closed_form(tau, params: PhysicalParams):
    # complex-safe: no float() casts, so callers may pass complex tau
    k = params.effective_rate
    w = params.rabi_angular_frequency
    g = params.oscillation_rate
    decay = np.exp(-k * tau)
    p00 = decay * (k / (2 * g)) * (np.sin(g * tau) + (g / k) * np.cos(g * tau)) + 0.5
    c01 = decay * (w / (2 * g)) * np.sin(g * tau)
    return p00, c01


def analytic_rho_components(t, params: PhysicalParams):
    """(rho00, re rho01) of the unconditioned solution started in ``|+z><+z|``.

    Extra dephasing enters through k -> k + gamma/2.  Accepts arrays and
    complex times.
    """
    return _closed_form(t, params)


def analytic_rho(t: float, params: PhysicalParams) -> HermitianOperator2:
    p00, c01 = _closed_form(t, params)
    return HermitianOperator2(float(p00), float(1 - p00), float(c01), 0.0)


def analytic_effect_components(t, T, params: PhysicalParams):
    """(E00, re E01) of the backward solution anchored at ``|+z><+z|`` at time ``T``."""
    e00, c01 = _closed_form(np.subtract(T, t), params)
    return e00, -c01


def analytic_effect(t: float, T: float, params: PhysicalParams) -> HermitianOperator2:
    e00, e01 = analytic_effect_components(t, T, params)
    return HermitianOperator2(float(e00), float(1 - e00), float(e01), 0.0)


@dataclass(frozen=True)
class PastVoltageDensity:
    """Voltage density at time t conditioned on both rho(t) and E(t).

    ``weights`` are (rho00 E00, rho11 E11, rho10 E01 + rho01 E10); the third
    multiplies the cross term sqrt(G(V-1) G(V+1)).
    """

    weights: tuple[float, float, float]
    a2: float

    @property
    def normalization(self) -> float:
        wp, wm, wc = self.weights
        return wp + wm + wc * math.exp(-1 / (2 * self.a2))

    def pdf(self, V):
        wp, wm, wc = self.weights
        cross = np.exp(-(np.square(V) + 1) / (2 * self.a2)) / math.sqrt(2 * math.pi * self.a2)
        return (wp * gaussian(np.subtract(V, 1), self.a2) + wm * gaussian(np.add(V, 1), self.a2) + wc * cross) / self.normalization

    __call__ = pdf

    @property
    def mean(self) -> float:
        wp, wm, _ = self.weights
        return (wp - wm) / self.normalization


def _weights(rho: HermitianOperator2, effect: HermitianOperator2):
    return (
        rho.m00 * effect.m00,
        rho.m11 * effect.m11,
        2 * (rho.re01 * effect.re01 + rho.im01 * effect.im01),
    )


def past_voltage_density(rho: HermitianOperator2, effect: HermitianOperator2, a2: float) -> PastVoltageDensity:
    if not a2 > 0:
        raise ParameterDomainError(f"variance a2 must be > 0, got {a2}")
    dens = PastVoltageDensity(_weights(rho, effect), float(a2))
    if not dens.normalization > 1e-15:
        raise DegenerateConditioningError("rho and E have (numerically) orthogonal supports")
    return dens


def past_mean_voltage(rho: HermitianOperator2, effect: HermitianOperator2, a2: float | None = None) -> float:
    """Mean voltage conditioned on past (``rho``) and future (``effect``).

    With ``a2=None`` this is the weak-measurement limit
    (rho00 E00 - rho11 E11) / (rho00 E00 + rho11 E11 + rho01 E10 + rho10 E01);
    a finite ``a2`` gives the exact first moment of :func:`past_voltage_density`.
    """
    wp, wm, wc = _weights(rho, effect)
    if a2 is not None:
        wc = wc * math.exp(-1 / (2 * a2))
    den = wp + wm + wc
    if not den > _DENOM_TOL:
        raise DegenerateConditioningError(f"conditioning weight {den:.3g} is too small")
    return (wp - wm) / den


def _forward_state(t: float, params: PhysicalParams, herald: str, prep_fidelity: float) -> HermitianOperator2:
    _, rho0 = herald_prepare(herald, prep_fidelity)
    return dynamics.propagate(rho0, params, t, dynamics.FORWARD)


def predict_weighted_correlation(
    t: float,
    t_prime: float,
    params: PhysicalParams,
    herald: str = "herald-plus",
    prep_fidelity: float = 1.0,
    a2: float | None = None,
) -> float:
    """Deterministic value of the rho00(t')-weighted mean of V(t) for t < t'.

    rho(t) comes from the herald state under the unconditioned master
    equation, E(t) from ``|+z><+z|`` at ``t'`` under the adjoint equation.
    """
    if not t < t_prime:
        raise ParameterDomainError(
            f"t = {t!r} must be earlier than t' = {t_prime!r}; for t >= t' the weighted "
            "correlation has no deterministic one-time prediction"
        )
    rho = _forward_state(t, params, herald, prep_fidelity)
    effect = dynamics.propagate(HermitianOperator2.plus(), params, t_prime - t, dynamics.BACKWARD)
    return past_mean_voltage(rho, effect, a2)


def predict_weighted_row(
    tprime_index: int,
    params: PhysicalParams,
    herald: str = "herald-plus",
    prep_fidelity: float = 1.0,
    a2: float | None = None,
) -> np.ndarray:
    """Predictions at bin times t_0 .. t_{j'-1} for t' = t_{j'} (bin duration from ``params``)."""
    dt = params.bin_duration
    _, rho0 = herald_prepare(herald, prep_fidelity)
    rhos = []
    rho = rho0
    for m in range(tprime_index):
        rhos.append(rho)
        rho = dynamics.exact_step(rho, params, dt)
    out = np.empty(tprime_index)
    e = HermitianOperator2.plus()
    for m in range(tprime_index - 1, -1, -1):
        e = dynamics.exact_step(e, params, dt, dynamics.BACKWARD)
        out[m] = past_mean_voltage(rhos[m], e, a2)
    return out
