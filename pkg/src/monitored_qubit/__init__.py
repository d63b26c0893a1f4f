"""Quantum trajectories of a driven, continuously monitored qubit.

Forward filtering of simulated voltage records, backward-propagated effect
matrices, and the ensemble estimators that compare pre-selected,
post-selected and past-weighted signal averages.
"""

__version__ = "0.1.0"

from .core import (
    MINUS,
    REFERENCE_PARAMS,
    PLUS,
    BlochVector,
    HermitianOperator2,
    PhysicalParams,
    bayesian_update,
    bloch,
    expectation_sigma_z,
    povm_density,
    project,
    purity,
    unitary_step,
)
from .errors import (
    ConfigError,
    DegenerateConditioningError,
    EmptySubsetError,
    InsufficientDataError,
    IntegratorInstabilityError,
    MonitoredQubitError,
    NumericalUnderflowError,
    ParameterDomainError,
)
from .estimators import (
    CorrelationGrid,
    TimeSeriesStat,
    bootstrap_ci,
    hybrid_correlation_grid,
    mean_sigma_z,
    postselected_average,
    preselected_average,
    regression_correlation_oracle,
    signal_correlation_estimator,
    state_state_correlation,
    weighted_average,
)
from .past_state import (
    analytic_effect,
    analytic_rho,
    past_mean_voltage,
    past_voltage_density,
    predict_weighted_correlation,
    propagate_effect,
)
from .trajectory import (
    Ensemble,
    MeasurementRecord,
    SimulationConfig,
    Trajectory,
    herald_prepare,
    simulate_ensemble,
    simulate_trajectory,
    step_bayesian,
    step_deterministic,
    step_sme_euler,
)
