import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from monitored_qubit.core import REFERENCE_PARAMS, HermitianOperator2
from monitored_qubit.trajectory import SimulationConfig, simulate_ensemble

settings.register_profile("repo", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@st.composite
def density_matrices(draw, pure=False):
    """Valid density matrices drawn uniformly-ish from the Bloch ball (or sphere)."""
    theta = draw(st.floats(0, math.pi))
    phi = draw(st.floats(0, 2 * math.pi))
    r = 1.0 if pure else draw(st.floats(0, 1))
    x, y, z = r * math.sin(theta) * math.cos(phi), r * math.sin(theta) * math.sin(phi), r * math.cos(theta)
    return HermitianOperator2.from_bloch(x, y, z)


voltages = st.floats(-60, 60, allow_nan=False)


def random_states(rng, n, pure=False):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    if not pure:
        v *= rng.uniform(size=(n, 1)) ** (1 / 3)
    return [HermitianOperator2.from_bloch(*row) for row in v]


def trace_distance(a: HermitianOperator2, b: HermitianOperator2) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a.matrix() - b.matrix()))))


SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0, -1.0]).astype(complex)


def liouvillian(params):
    """Column-stacking matrix of rho -> -i[H, rho] + k_eff (sz rho sz - rho), built from Kronecker products."""
    h = params.rabi_angular_frequency / 2 * SY
    i2 = np.eye(2)
    comm = np.kron(i2, h) - np.kron(h.T, i2)
    deph = np.kron(SZ.T, SZ) - np.eye(4)
    return -1j * comm + params.effective_rate * deph


def evolve_oracle(op, params, t, backward=False):
    """Forward evolution by exp(L t); backward uses the Hilbert-Schmidt adjoint of L."""
    L = liouvillian(params)
    if backward:
        L = L.conj().T
    vec = op.matrix().reshape(-1, order="F")
    return (expm(L * t) @ vec).reshape(2, 2, order="F")


@pytest.fixture(scope="session")
def device_config():
    return SimulationConfig(params=REFERENCE_PARAMS, total_time=2e-6, n_trajectories=4000, seed=1234)


@pytest.fixture(scope="session")
def plus_ensemble(device_config):
    return simulate_ensemble(device_config)


@pytest.fixture(scope="session")
def mixed_ensemble(device_config):
    return simulate_ensemble(device_config.replace(herald_policy="unheralded-mixed", seed=4321))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
