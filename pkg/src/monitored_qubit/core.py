"""Two-level operator algebra, the Gaussian voltage POVM and single-bin channels.

Every 2x2 Hermitian matrix is stored as four real numbers ``(m00, m11, re01,
im01)`` with ``m01 = re01 + 1j*im01`` and ``m10`` its conjugate.  Index 0 is
the ``+z`` eigenstate, which the voltage readout maps to ``V = +1``.

The array kernels (``_bayes_components``, ``_rotate_components``) accept numpy
arrays of components so the trajectory engine can propagate many runs at once
with exactly the arithmetic used by the scalar API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateConditioningError,
    NumericalUnderflowError,
    ParameterDomainError,
)

__all__ = [
    "PLUS",
    "MINUS",
    "HermitianOperator2",
    "BlochVector",
    "PhysicalParams",
    "REFERENCE_PARAMS",
    "gaussian",
    "povm_density",
    "bayesian_update",
    "unitary_step",
    "dephasing_step",
    "project",
    "purity",
    "bloch",
    "expectation_sigma_z",
]

PLUS = 1
MINUS = -1

DENSITY_TOL = 1e-12
PROJECTION_TOL = 1e-15
# exp() underflows below this; log P(V) smaller than it means P(V) == 0.0
_LOG_TINY = math.log(np.finfo(float).tiny)


def _outcome_sign(outcome):
    if outcome in (PLUS, "+z", "+", "plus"):
        return PLUS
    if outcome in (MINUS, "-z", "-", "minus"):
        return MINUS
    raise ParameterDomainError(f"unknown projective outcome {outcome!r}; use +1/-1 or '+z'/'-z'")


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class HermitianOperator2:
    """Complex 2x2 Hermitian matrix stored by its four real components.

    The same type carries density matrices (unit trace, positive) and effect
    matrices (positive, arbitrary positive trace); see :meth:`is_density` and
    :meth:`is_effect`.
    """

    m00: float
    m11: float
    re01: float = 0.0
    im01: float = 0.0

    @classmethod
    def plus(cls) -> "HermitianOperator2":
        return cls(1.0, 0.0)

    @classmethod
    def minus(cls) -> "HermitianOperator2":
        return cls(0.0, 1.0)

    @classmethod
    def maximally_mixed(cls) -> "HermitianOperator2":
        return cls(0.5, 0.5)

    @classmethod
    def diagonal(cls, p00: float) -> "HermitianOperator2":
        return cls(float(p00), 1.0 - float(p00))

    @classmethod
    def from_bloch(cls, x: float, y: float, z: float, trace: float = 1.0) -> "HermitianOperator2":
        return cls((trace + z) / 2, (trace - z) / 2, x / 2, -y / 2)

    @classmethod
    def from_matrix(cls, m) -> "HermitianOperator2":
        m = np.asarray(m, dtype=complex)
        if m.shape != (2, 2):
            raise ParameterDomainError(f"expected a 2x2 matrix, got shape {m.shape}")
        if not np.allclose(m, m.conj().T, atol=1e-12, rtol=0):
            raise ParameterDomainError("matrix is not Hermitian")
        return cls(float(m[0, 0].real), float(m[1, 1].real), float(m[0, 1].real), float(m[0, 1].imag))

    @property
    def m01(self) -> complex:
        return complex(self.re01, self.im01)

    @property
    def m10(self) -> complex:
        return complex(self.re01, -self.im01)

    @property
    def trace(self) -> float:
        return self.m00 + self.m11

    @property
    def determinant(self) -> float:
        return self.m00 * self.m11 - (self.re01 * self.re01 + self.im01 * self.im01)

    def matrix(self) -> np.ndarray:
        return np.array([[self.m00, self.m01], [self.m10, self.m11]], dtype=complex)

    def eigenvalues(self) -> tuple[float, float]:
        half_tr = self.trace / 2
        r = math.hypot((self.m00 - self.m11) / 2, math.hypot(self.re01, self.im01))
        return half_tr - r, half_tr + r

    def scaled(self, c: float) -> "HermitianOperator2":
        return HermitianOperator2(c * self.m00, c * self.m11, c * self.re01, c * self.im01)

    def is_effect(self, tol: float = DENSITY_TOL) -> bool:
        return (
            self.trace > 0
            and self.m00 >= -tol
            and self.m11 >= -tol
            and self.determinant >= -tol
        )

    def is_density(self, tol: float = DENSITY_TOL) -> bool:
        return abs(self.trace - 1.0) <= tol and self.is_effect(tol)

    def components(self) -> tuple[float, float, float, float]:
        return (self.m00, self.m11, self.re01, self.im01)


def _check_density(state: HermitianOperator2, tol: float = DENSITY_TOL) -> None:
    if not state.is_density(tol):
        raise ParameterDomainError(f"not a valid density matrix: {state}")


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the driven, monitored qubit (SI units, angular rates).

    Parameters
    ----------
    rabi_angular_frequency : float
        Omega_R in rad/s.
    measurement_rate : float
        Measurement strength k in rad/s (convention k = 4 chi^2 n / kappa).
    efficiency : float
        Quantum efficiency eta in (0, 1].
    dephasing_rate : float
        Extra environmental dephasing gamma = 1/T2* in 1/s.
    bin_duration : float
        Integration time of one voltage sample, in seconds.
    """

    rabi_angular_frequency: float
    measurement_rate: float
    efficiency: float
    dephasing_rate: float
    bin_duration: float
    variance: float = field(init=False)

    def __post_init__(self):
        vals = {
            "rabi_angular_frequency": self.rabi_angular_frequency,
            "measurement_rate": self.measurement_rate,
            "efficiency": self.efficiency,
            "dephasing_rate": self.dephasing_rate,
            "bin_duration": self.bin_duration,
        }
        for name, v in vals.items():
            if not math.isfinite(v):
                raise ParameterDomainError(f"{name} must be finite, got {v}")
        if self.measurement_rate <= 0:
            raise ParameterDomainError("measurement_rate must be > 0")
        if self.bin_duration <= 0:
            raise ParameterDomainError("bin_duration must be > 0")
        if not 0 < self.efficiency <= 1:
            raise ParameterDomainError(
                f"efficiency must lie in (0, 1], got {self.efficiency} "
                "(eta = 0 makes the voltage variance 1/(4 k eta dt) infinite)"
            )
        if self.rabi_angular_frequency < 0 or self.dephasing_rate < 0:
            raise ParameterDomainError("rabi_angular_frequency and dephasing_rate must be >= 0")
        object.__setattr__(self, "variance", self._variance())

    def _variance(self) -> float:
        return 1.0 / (4.0 * self.measurement_rate * self.efficiency * self.bin_duration)

    @classmethod
    def from_cycles(
        cls,
        rabi_frequency_hz: float = 1.16e6,
        measurement_rate_hz: float = 95e3,
        efficiency: float = 0.35,
        t2_star: float = 16e-6,
        bin_duration: float = 20e-9,
    ) -> "PhysicalParams":
        """Build from frequencies in cycles/s; ``t2_star=math.inf`` disables extra dephasing."""
        gamma = 0.0 if math.isinf(t2_star) else 1.0 / t2_star
        return cls(
            2 * math.pi * rabi_frequency_hz,
            2 * math.pi * measurement_rate_hz,
            efficiency,
            gamma,
            bin_duration,
        )

    @property
    def a(self) -> float:
        return math.sqrt(self.variance)

    @property
    def effective_rate(self) -> float:
        """k_eff = k + gamma/2, the prefactor of the unconditioned dissipator."""
        return self.measurement_rate + self.dephasing_rate / 2

    @property
    def residual_coherence_factor(self) -> float:
        """Deterministic off-diagonal decay per bin not captured by the record."""
        return math.exp(
            -(2 * self.measurement_rate * (1 - self.efficiency) + self.dephasing_rate) * self.bin_duration
        )

    @property
    def is_underdamped(self) -> bool:
        return self.rabi_angular_frequency > self.effective_rate

    @property
    def oscillation_rate(self) -> float:
        """Gamma = sqrt(Omega_R^2 - k_eff^2); only defined for underdamped parameters."""
        if not self.is_underdamped:
            raise ParameterDomainError(
                "overdamped parameters (Omega_R <= k_eff): no real oscillation rate; "
                "use the numeric master equation instead"
            )
        return math.sqrt(self.rabi_angular_frequency**2 - self.effective_rate**2)

    @property
    def rotation_angle(self) -> float:
        return self.rabi_angular_frequency * self.bin_duration

    def with_oracle(self) -> "PhysicalParams":
        """Same drive and strength with perfect efficiency and no extra dephasing."""
        return replace(self, efficiency=1.0, dephasing_rate=0.0)

    def replace(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)


REFERENCE_PARAMS = PhysicalParams.from_cycles()


def gaussian(x, a2):
    """Normal density with zero mean and variance ``a2``."""
    return np.exp(-np.square(x) / (2 * a2)) / np.sqrt(2 * np.pi * a2)


def povm_density(state: HermitianOperator2, V, a2: float):
    """Probability density of the voltage ``V`` given the state: a two-Gaussian mixture."""
    if not a2 > 0:
        raise ParameterDomainError(f"variance a2 must be > 0, got {a2}")
    p = state.m00 * gaussian(np.subtract(V, 1.0), a2) + state.m11 * gaussian(np.add(V, 1.0), a2)
    return float(p) if np.ndim(p) == 0 else p


def _bayes_components(m00, m11, re01, im01, V, a2, residual):
    """Kraus update Omega_V rho Omega_V / P(V), then residual dephasing.

    Works on scalars or equally-shaped arrays.  The likelihoods are rescaled by
    exp(-(V^2+1)/2a2 - |V|/a2) so that neither factor overflows; the returned
    ``log_p`` is log P(V) and ``norm`` is zero only if P(V) underflowed.
    """
    s = V / a2
    abs_s = np.abs(s)
    up = np.exp(s - abs_s)
    down = np.exp(-s - abs_s)
    norm = m00 * up + m11 * down
    coh = np.exp(-abs_s) * residual
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (m00 * up / norm, m11 * down / norm, re01 * coh / norm, im01 * coh / norm)
        log_p = -0.5 * np.log(2 * np.pi * a2) - (np.square(V) + 1) / (2 * a2) + abs_s + np.log(norm)
    return out, norm, log_p


def bayesian_update(state: HermitianOperator2, V: float, params: PhysicalParams, bin_index=None) -> HermitianOperator2:
    """Condition the state on the voltage of one bin.

    Diagonals follow Bayes' rule with the two Gaussian likelihoods; the
    coherence picks up sqrt(G(V-1) G(V+1))/P(V) times the residual factor
    exp(-(2k(1-eta) + gamma) dt) for the unobserved part of the dephasing.
    """
    _check_density(state)
    (m00, m11, re01, im01), norm, log_p = _bayes_components(
        state.m00, state.m11, state.re01, state.im01, float(V), params.variance, params.residual_coherence_factor
    )
    if not norm > 0 or log_p < _LOG_TINY:
        raise NumericalUnderflowError(f"P(V) underflowed for V = {V!r}", bin_index)
    return HermitianOperator2(float(m00), float(m11), float(re01), float(im01))


def _rotate_components(m00, m11, re01, im01, cos_t, sin_t):
    tr = m00 + m11
    z = m00 - m11
    x = 2 * re01
    z_new = z * cos_t - x * sin_t
    x_new = x * cos_t + z * sin_t
    return (tr + z_new) / 2, (tr - z_new) / 2, x_new / 2, im01


def unitary_step(state: HermitianOperator2, theta: float) -> HermitianOperator2:
    """Rotate by ``theta`` about the y axis (the drive H = Omega_R sigma_y / 2 for theta/Omega_R)."""
    c, s = math.cos(theta), math.sin(theta)
    return HermitianOperator2(*(float(v) for v in _rotate_components(*state.components(), c, s)))


def dephasing_step(state: HermitianOperator2, rate: float, dt: float) -> HermitianOperator2:
    """Exact action of the dissipator rate*(sigma_z rho sigma_z - rho) over ``dt``."""
    if rate < 0:
        raise ParameterDomainError(f"dephasing rate must be >= 0, got {rate}")
    if dt < 0:
        raise ParameterDomainError(f"dt must be >= 0, got {dt}")
    f = math.exp(-2 * rate * dt)
    return HermitianOperator2(state.m00, state.m11, state.re01 * f, state.im01 * f)


def project(state: HermitianOperator2, outcome) -> tuple[float, HermitianOperator2]:
    """Projective sigma_z measurement: probability of ``outcome`` and the collapsed state."""
    _check_density(state)
    sign = _outcome_sign(outcome)
    prob = state.m00 if sign == PLUS else state.m11
    if prob < PROJECTION_TOL:
        raise DegenerateConditioningError(
            f"projection onto {'+z' if sign == PLUS else '-z'} has probability {prob:.3g}"
        )
    post = HermitianOperator2.plus() if sign == PLUS else HermitianOperator2.minus()
    return float(prob), post


def purity(state: HermitianOperator2) -> float:
    return state.m00**2 + state.m11**2 + 2 * (state.re01**2 + state.im01**2)


def bloch(state: HermitianOperator2) -> BlochVector:
    return BlochVector(2 * state.re01, -2 * state.im01, state.m00 - state.m11)


def expectation_sigma_z(state: HermitianOperator2) -> float:
    return state.m00 - state.m11
