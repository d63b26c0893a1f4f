"""Propagators of the unconditioned master equation and its adjoint.

In Bloch coordinates the forward equation
``d rho/dt = -i Omega_R/2 [sigma_y, rho] + k_eff (sigma_z rho sigma_z - rho)``
couples only ``(x, z)``::

    d/dt [x, z] = [[-2 k_eff, Omega_R], [-Omega_R, 0]] [x, z]

while ``y`` decays at ``2 k_eff`` and the trace is conserved.  The adjoint
equation, run in reversed time, has the transposed generator.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .core import HermitianOperator2, PhysicalParams, _rotate_components

FORWARD = "forward"
BACKWARD = "backward"


def bloch_generator(params: PhysicalParams, direction: str = FORWARD) -> np.ndarray:
    w, k = params.rabi_angular_frequency, params.effective_rate
    g = np.array([[-2 * k, w], [-w, 0.0]])
    return g if direction == FORWARD else g.T


@lru_cache(maxsize=256)
def _propagator(params: PhysicalParams, dt: float, direction: str):
    a = expm(bloch_generator(params, direction) * dt)
    a.setflags(write=False)
    return a, math.exp(-2 * params.effective_rate * dt)


def _apply_bloch_map(op: HermitianOperator2, a: np.ndarray, y_factor: float) -> HermitianOperator2:
    tr = op.m00 + op.m11
    x, z = 2 * op.re01, op.m00 - op.m11
    x_new = a[0, 0] * x + a[0, 1] * z
    z_new = a[1, 0] * x + a[1, 1] * z
    return HermitianOperator2((tr + z_new) / 2, (tr - z_new) / 2, x_new / 2, op.im01 * y_factor)


def _derivative(c, params: PhysicalParams, direction: str):
    m00, m11, re01, im01 = c
    w, k = params.rabi_angular_frequency, params.effective_rate
    sgn = 1.0 if direction == FORWARD else -1.0
    d00 = -sgn * w * re01
    d01 = sgn * w * (m00 - m11) / 2 - 2 * k * re01
    return np.array([d00, -d00, d01, -2 * k * im01])


def rk4_step(op: HermitianOperator2, params: PhysicalParams, dt: float, direction: str = FORWARD) -> HermitianOperator2:
    c = np.array(op.components())
    k1 = _derivative(c, params, direction)
    k2 = _derivative(c + dt / 2 * k1, params, direction)
    k3 = _derivative(c + dt / 2 * k2, params, direction)
    k4 = _derivative(c + dt * k3, params, direction)
    out = c + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return HermitianOperator2(*(float(v) for v in out))


def exact_step(op: HermitianOperator2, params: PhysicalParams, dt: float, direction: str = FORWARD) -> HermitianOperator2:
    a, yf = _propagator(params, float(dt), direction)
    return _apply_bloch_map(op, a, yf)


def split_step(op: HermitianOperator2, params: PhysicalParams, dt: float, direction: str = FORWARD) -> HermitianOperator2:
    """Dephasing at k_eff followed by rotation: the bin map averaged by the conditioned stepper.

    Backwards the two factors are applied in reverse order with the rotation
    reversed, which makes this the exact Hilbert-Schmidt adjoint of the
    forward split step.
    """
    f = math.exp(-2 * params.effective_rate * dt)
    theta = params.rabi_angular_frequency * dt
    if direction == FORWARD:
        m = (op.m00, op.m11, op.re01 * f, op.im01 * f)
        return HermitianOperator2(*(float(v) for v in _rotate_components(*m, math.cos(theta), math.sin(theta))))
    m00, m11, re01, im01 = _rotate_components(*op.components(), math.cos(theta), -math.sin(theta))
    return HermitianOperator2(float(m00), float(m11), float(re01 * f), float(im01 * f))


METHODS = {"exact": exact_step, "rk4": rk4_step, "split": split_step}


def step(op: HermitianOperator2, params: PhysicalParams, dt: float, direction: str = FORWARD, method: str = "exact"):
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}") from None
    return fn(op, params, dt, direction)


def propagate(op: HermitianOperator2, params: PhysicalParams, duration: float, direction: str = FORWARD) -> HermitianOperator2:
    """Exact propagation over an arbitrary duration (no caching)."""
    if duration == 0:
        return op
    a = expm(bloch_generator(params, direction) * duration)
    return _apply_bloch_map(op, a, math.exp(-2 * params.effective_rate * duration))
