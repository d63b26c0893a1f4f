"""Synthetic measurement records and conditioned state propagation.

Bin convention: ``rho(t_m)`` is the state *before* the voltage of bin ``m`` is
incorporated, and ``V[m]`` is drawn from ``rho(t_m)``.  Within a bin the
measurement backaction is applied first, then the Rabi rotation over ``dt``.

Runs are grouped into fixed blocks of :data:`BLOCK_SIZE` consecutive indices
and propagated as numpy arrays.  Each run draws its random numbers from its own
generator seeded by ``(seed, index)``, and the block layout depends only on
``n_trajectories``, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from . import dynamics
from .core import (
    MINUS,
    PLUS,
    HermitianOperator2,
    PhysicalParams,
    _bayes_components,
    _check_density,
    _LOG_TINY,
    _rotate_components,
    bayesian_update,
    unitary_step,
)
from .errors import IntegratorInstabilityError, NumericalUnderflowError, ParameterDomainError

__all__ = [
    "HERALD_POLICIES",
    "INTEGRATORS",
    "BLOCK_SIZE",
    "SimulationConfig",
    "MeasurementRecord",
    "Trajectory",
    "Ensemble",
    "sample_voltage",
    "step_bayesian",
    "step_sme_euler",
    "step_deterministic",
    "deterministic_solution",
    "herald_prepare",
    "simulate_trajectory",
    "simulate_ensemble",
    "trajectory_rng",
    "refilter",
]

HERALD_POLICIES = ("herald-plus", "herald-minus", "unheralded-mixed")
INTEGRATORS = ("bayesian", "euler-sme")
_HERALD_ALIASES = {"plus": "herald-plus", "minus": "herald-minus", "mixed": "unheralded-mixed"}

BLOCK_SIZE = 512
EULER_TRACE_TOL = 1e-6


def _normalize_policy(policy: str) -> str:
    policy = _HERALD_ALIASES.get(policy, policy)
    if policy not in HERALD_POLICIES:
        raise ParameterDomainError(f"unknown herald policy {policy!r}; choose from {HERALD_POLICIES}")
    return policy


@dataclass(frozen=True)
class SimulationConfig:
    params: PhysicalParams
    total_time: float
    n_trajectories: int
    seed: int
    prep_fidelity: float = 0.95
    herald_policy: str = "herald-plus"
    integrator: str = "bayesian"
    oracle_mode: bool = False
    n_bins: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "herald_policy", _normalize_policy(self.herald_policy))
        if self.integrator not in INTEGRATORS:
            raise ParameterDomainError(f"unknown integrator {self.integrator!r}; choose from {INTEGRATORS}")
        if int(self.n_trajectories) != self.n_trajectories or self.n_trajectories < 1:
            raise ParameterDomainError(f"n_trajectories must be a positive integer, got {self.n_trajectories}")
        if int(self.seed) != self.seed or self.seed < 0 or self.seed >= 2**64:
            raise ParameterDomainError(f"seed must be an integer in [0, 2^64), got {self.seed}")
        if not 0.5 < self.prep_fidelity <= 1:
            raise ParameterDomainError(f"prep_fidelity must lie in (0.5, 1], got {self.prep_fidelity}")
        ratio = self.total_time / self.params.bin_duration
        m = round(ratio)
        if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
            raise ParameterDomainError(
                f"total_time / bin_duration = {ratio!r} is not a positive integer number of bins"
            )
        object.__setattr__(self, "n_bins", int(m))

    @property
    def effective_params(self) -> PhysicalParams:
        return self.params.with_oracle() if self.oracle_mode else self.params

    @property
    def effective_prep_fidelity(self) -> float:
        return 1.0 if self.oracle_mode else self.prep_fidelity

    @property
    def times(self) -> np.ndarray:
        """State times t_m = m dt for m = 0..M."""
        return np.arange(self.n_bins + 1) * self.params.bin_duration

    def replace(self, **changes) -> "SimulationConfig":
        changes.pop("n_bins", None)
        return replace(self, **changes)


@dataclass(frozen=True)
class MeasurementRecord:
    trajectory_id: int
    herald: Optional[int]
    voltages: np.ndarray
    final_outcome: Optional[int] = None


@dataclass(frozen=True)
class Trajectory:
    """Conditioned states rho(t_m), m = 0..M, stored by component."""

    times: np.ndarray
    rho00: np.ndarray
    re01: np.ndarray
    im01: np.ndarray

    def __len__(self):
        return len(self.times)

    def state(self, m: int) -> HermitianOperator2:
        p = float(self.rho00[m])
        return HermitianOperator2(p, 1.0 - p, float(self.re01[m]), float(self.im01[m]))

    def __getitem__(self, m: int) -> HermitianOperator2:
        return self.state(m)

    @property
    def sigma_z(self) -> np.ndarray:
        return 2 * self.rho00 - 1


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Records and conditioned trajectories of many runs, stored as arrays.

    Rows are kept sorted by trajectory id so every estimator sees a canonical
    order regardless of how the runs were produced or shuffled.

    Attributes
    ----------
    voltages : (n, M) array
    rho00, re01, im01 : (n, M+1) arrays
    herald : (n,) int8, +1 / -1, or 0 for no herald
    final_outcome : (n,) int8, 1 for +z and 0 for -z
    """

    config: SimulationConfig
    ids: np.ndarray
    herald: np.ndarray
    voltages: np.ndarray
    rho00: np.ndarray
    re01: np.ndarray
    im01: np.ndarray
    final_outcome: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if n != self.config.n_trajectories:
            raise ValueError(f"ensemble holds {n} runs but config says {self.config.n_trajectories}")
        m = self.config.n_bins
        if self.voltages.shape != (n, m) or self.rho00.shape != (n, m + 1):
            raise ValueError("array shapes do not match the config")
        order = np.argsort(self.ids, kind="stable")
        if np.any(order != np.arange(n)):
            for name in ("ids", "herald", "voltages", "rho00", "re01", "im01", "final_outcome"):
                object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name)[order]))
        if n > 1 and np.any(np.diff(self.ids) == 0):
            raise ValueError("duplicate trajectory ids")

    def __len__(self):
        return len(self.ids)

    @property
    def n_bins(self) -> int:
        return self.config.n_bins

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    def record(self, i: int) -> MeasurementRecord:
        h = int(self.herald[i])
        return MeasurementRecord(int(self.ids[i]), h if h else None, self.voltages[i], int(self.final_outcome[i]))

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.times, self.rho00[i], self.re01[i], self.im01[i])

    def __getitem__(self, i: int) -> tuple[MeasurementRecord, Trajectory]:
        return self.record(i), self.trajectory(i)

    def __iter__(self) -> Iterator[tuple[MeasurementRecord, Trajectory]]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_pairs(cls, config: SimulationConfig, pairs) -> "Ensemble":
        pairs = list(pairs)
        recs = [p[0] for p in pairs]
        trajs = [p[1] for p in pairs]
        return cls(
            config=config.replace(n_trajectories=len(pairs)),
            ids=np.array([r.trajectory_id for r in recs], dtype=np.int64),
            herald=np.array([r.herald or 0 for r in recs], dtype=np.int8),
            voltages=np.array([r.voltages for r in recs], dtype=float),
            rho00=np.array([t.rho00 for t in trajs], dtype=float),
            re01=np.array([t.re01 for t in trajs], dtype=float),
            im01=np.array([t.im01 for t in trajs], dtype=float),
            final_outcome=np.array([-1 if r.final_outcome is None else r.final_outcome for r in recs], dtype=np.int8),
        )

    def subset(self, mask) -> "Ensemble":
        mask = np.asarray(mask)
        return Ensemble(
            config=self.config.replace(n_trajectories=int(np.count_nonzero(mask)) if mask.dtype == bool else len(mask)),
            ids=self.ids[mask],
            herald=self.herald[mask],
            voltages=self.voltages[mask],
            rho00=self.rho00[mask],
            re01=self.re01[mask],
            im01=self.im01[mask],
            final_outcome=self.final_outcome[mask],
        )


# -- single-state operations -------------------------------------------------


def sample_voltage(state: HermitianOperator2, params: PhysicalParams, rng: np.random.Generator) -> float:
    """Exact draw from the two-Gaussian mixture: branch +-1 by population, plus N(0, a^2)."""
    _check_density(state)
    branch = 1.0 if rng.random() < state.m00 else -1.0
    return branch + params.a * rng.standard_normal()


def step_bayesian(state: HermitianOperator2, V: float, params: PhysicalParams) -> HermitianOperator2:
    return unitary_step(bayesian_update(state, V, params), params.rotation_angle)


def _euler_components(m00, m11, re01, im01, V, params: PhysicalParams, form: str):
    dt = params.bin_duration
    w, k, keff, eta = (
        params.rabi_angular_frequency,
        params.measurement_rate,
        params.effective_rate,
        params.efficiency,
    )
    z = m00 - m11
    signal = V - z if form == "innovation" else V
    g = 2 * eta * k * signal * dt
    d00 = -w * re01 * dt + g * 4 * m00 * m11
    d_re = (w * z / 2 - 2 * keff * re01) * dt - g * 2 * z * re01
    d_im = -2 * keff * im01 * dt - g * 2 * z * im01
    n00, n11, nre, nim = m00 + d00, m11 - d00, re01 + d_re, im01 + d_im
    tr = n00 + n11
    with np.errstate(invalid="ignore", over="ignore"):
        bad = ~(np.isfinite(n00) & np.isfinite(n11) & np.isfinite(nre) & np.isfinite(nim)) | (
            np.abs(tr - 1) > EULER_TRACE_TOL
        )
        # clip the negative eigenvalue: push the Bloch vector back onto the unit ball
        x, y, zz = 2 * nre / tr, -2 * nim / tr, (n00 - n11) / tr
        r = np.sqrt(x * x + y * y + zz * zz)
        scale = np.where(r > 1, 1 / np.where(r > 0, r, 1), 1.0)
    x, y, zz = x * scale, y * scale, zz * scale
    return ((1 + zz) / 2, (1 - zz) / 2, x / 2, -y / 2), bad


def step_sme_euler(state: HermitianOperator2, V: float, params: PhysicalParams, form: str = "innovation") -> HermitianOperator2:
    """One Euler increment of the stochastic master equation (diagnostic only).

    ``form="innovation"`` drives the measurement term with ``V - <sigma_z>``,
    the Ito-consistent choice; ``form="raw"`` uses ``V`` itself as the
    equation is usually written.  A negative eigenvalue is clipped to zero and
    the state renormalized.
    """
    if form not in ("innovation", "raw"):
        raise ValueError(f"form must be 'innovation' or 'raw', got {form!r}")
    _check_density(state)
    (m00, m11, re01, im01), bad = _euler_components(*state.components(), float(V), params, form)
    if bad:
        raise IntegratorInstabilityError(f"Euler step left the trace-one manifold (V = {V!r})")
    return HermitianOperator2(float(m00), float(m11), float(re01), float(im01))


def step_deterministic(state: HermitianOperator2, params: PhysicalParams, dt: float, method: str = "exact") -> HermitianOperator2:
    """Advance the unconditioned master equation by ``dt``.

    ``method`` is ``"exact"`` (matrix exponential of the generator), ``"rk4"``
    or ``"split"`` (dephasing at k_eff then rotation: the ensemble average of
    one :func:`step_bayesian` bin when ``dt`` is the bin duration).
    """
    return dynamics.step(state, params, dt, dynamics.FORWARD, method)


def deterministic_solution(initial: HermitianOperator2, params: PhysicalParams, n_steps: int, dt: float, method: str = "exact"):
    """Component arrays (rho00, re01, im01) of the ME solution on ``n_steps + 1`` grid points."""
    out = np.empty((n_steps + 1, 3))
    s = initial
    for m in range(n_steps + 1):
        out[m] = (s.m00, s.re01, s.im01)
        if m < n_steps:
            s = step_deterministic(s, params, dt, method)
    return out[:, 0], out[:, 1], out[:, 2]


def herald_prepare(policy: str, prep_fidelity: float = 0.95) -> tuple[Optional[int], HermitianOperator2]:
    """Initial state after the heralding measurement.

    Returns the herald outcome (``+1``, ``-1`` or ``None``) and a diagonal
    state; ``prep_fidelity`` is the population of the heralded eigenstate.
    """
    policy = _normalize_policy(policy)
    if not 0.5 < prep_fidelity <= 1:
        raise ParameterDomainError(f"prep_fidelity must lie in (0.5, 1], got {prep_fidelity}")
    if policy == "herald-plus":
        return PLUS, HermitianOperator2(prep_fidelity, 1.0 - prep_fidelity)
    if policy == "herald-minus":
        return MINUS, HermitianOperator2(1.0 - prep_fidelity, prep_fidelity)
    return None, HermitianOperator2.maximally_mixed()


# -- ensemble engine ----------------------------------------------------------


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for run ``index``; a pure function of (seed, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def _block_bounds(n: int) -> list[tuple[int, int]]:
    return [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]


def _run_block(config: SimulationConfig, start: int, stop: int, out: dict, offset: int = 0) -> None:
    params = config.effective_params
    m_bins = config.n_bins
    b = stop - start
    u = np.empty((b, m_bins))
    xi = np.empty((b, m_bins))
    u_final = np.empty(b)
    for j, idx in enumerate(range(start, stop)):
        g = trajectory_rng(config.seed, idx)
        u[j] = g.random(m_bins)
        xi[j] = g.standard_normal(m_bins)
        u_final[j] = g.random()

    herald, s0 = herald_prepare(config.herald_policy, config.effective_prep_fidelity)
    m00 = np.full(b, s0.m00)
    m11 = np.full(b, s0.m11)
    re01 = np.zeros(b)
    im01 = np.zeros(b)
    a, a2 = params.a, params.variance
    residual = params.residual_coherence_factor
    c, s = math.cos(params.rotation_angle), math.sin(params.rotation_angle)
    sl = slice(start - offset, stop - offset)
    r00, rre, rim, vv = out["rho00"], out["re01"], out["im01"], out["voltages"]

    for m in range(m_bins):
        r00[sl, m] = m00
        rre[sl, m] = re01
        rim[sl, m] = im01
        V = np.where(u[:, m] < m00, 1.0, -1.0) + a * xi[:, m]
        vv[sl, m] = V
        if config.integrator == "bayesian":
            (m00, m11, re01, im01), norm, log_p = _bayes_components(m00, m11, re01, im01, V, a2, residual)
            if not np.all((norm > 0) & (log_p >= _LOG_TINY)):
                j = int(np.flatnonzero(~((norm > 0) & (log_p >= _LOG_TINY)))[0])
                raise NumericalUnderflowError(f"P(V) underflowed in trajectory {start + j}", m)
            m00, m11, re01, im01 = _rotate_components(m00, m11, re01, im01, c, s)
        else:
            (m00, m11, re01, im01), bad = _euler_components(m00, m11, re01, im01, V, params, "innovation")
            if np.any(bad):
                j = int(np.flatnonzero(bad)[0])
                raise IntegratorInstabilityError(f"Euler step diverged in trajectory {start + j}, bin {m}")
    r00[sl, m_bins] = m00
    rre[sl, m_bins] = re01
    rim[sl, m_bins] = im01
    out["final_outcome"][sl] = (u_final < m00).astype(np.int8)
    out["herald"][sl] = 0 if herald is None else herald


def refilter(voltages, initial: HermitianOperator2, params: PhysicalParams, integrator: str = "bayesian", form: str = "innovation"):
    """Re-run a filter over given records, all runs at once.

    Parameters
    ----------
    voltages : array, shape (n, M)
    initial : HermitianOperator2
        Common initial state.
    integrator : {"bayesian", "euler-sme"}

    Returns
    -------
    rho00, re01, im01 : arrays of shape (n, M + 1)
    """
    if integrator not in INTEGRATORS:
        raise ParameterDomainError(f"unknown integrator {integrator!r}; choose from {INTEGRATORS}")
    _check_density(initial)
    v = np.atleast_2d(np.asarray(voltages, dtype=float))
    n, m_bins = v.shape
    out = np.empty((3, n, m_bins + 1))
    m00, m11 = np.full(n, initial.m00), np.full(n, initial.m11)
    re01, im01 = np.full(n, initial.re01), np.full(n, initial.im01)
    c, s = math.cos(params.rotation_angle), math.sin(params.rotation_angle)
    for m in range(m_bins + 1):
        out[0, :, m], out[1, :, m], out[2, :, m] = m00, re01, im01
        if m == m_bins:
            break
        if integrator == "bayesian":
            (m00, m11, re01, im01), norm, log_p = _bayes_components(m00, m11, re01, im01, v[:, m], params.variance, params.residual_coherence_factor)
            if not np.all((norm > 0) & (log_p >= _LOG_TINY)):
                raise NumericalUnderflowError("P(V) underflowed", m)
            m00, m11, re01, im01 = _rotate_components(m00, m11, re01, im01, c, s)
        else:
            (m00, m11, re01, im01), bad = _euler_components(m00, m11, re01, im01, v[:, m], params, form)
            if np.any(bad):
                raise IntegratorInstabilityError(f"Euler step diverged in bin {m}")
    return out[0], out[1], out[2]


def _allocate(n: int, m_bins: int) -> dict:
    return {
        "voltages": np.empty((n, m_bins)),
        "rho00": np.empty((n, m_bins + 1)),
        "re01": np.empty((n, m_bins + 1)),
        "im01": np.empty((n, m_bins + 1)),
        "final_outcome": np.empty(n, dtype=np.int8),
        "herald": np.empty(n, dtype=np.int8),
    }


def simulate_ensemble(config: SimulationConfig, threads: int = 1) -> Ensemble:
    """Simulate ``config.n_trajectories`` independent runs.

    ``threads`` only changes wall-clock time; the output is identical for any
    value.
    """
    n = config.n_trajectories
    out = _allocate(n, config.n_bins)
    bounds = _block_bounds(n)
    if threads <= 1 or len(bounds) == 1:
        for start, stop in bounds:
            _run_block(config, start, stop, out)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda se: _run_block(config, se[0], se[1], out), bounds))
    return Ensemble(config=config, ids=np.arange(n, dtype=np.int64), **out)


def simulate_trajectory(config: SimulationConfig, trajectory_index: int) -> tuple[MeasurementRecord, Trajectory]:
    """One run, bit-identical to member ``trajectory_index`` of :func:`simulate_ensemble`."""
    n = config.n_trajectories
    if not 0 <= trajectory_index < n:
        raise IndexError(f"trajectory_index {trajectory_index} outside [0, {n})")
    start = (trajectory_index // BLOCK_SIZE) * BLOCK_SIZE
    stop = min(start + BLOCK_SIZE, n)
    out = _allocate(stop - start, config.n_bins)
    _run_block(config, start, stop, out, offset=start)
    i = trajectory_index - start
    h = int(out["herald"][i])
    rec = MeasurementRecord(trajectory_index, h if h else None, out["voltages"][i].copy(), int(out["final_outcome"][i]))
    traj = Trajectory(config.times, out["rho00"][i].copy(), out["re01"][i].copy(), out["im01"][i].copy())
    return rec, traj
