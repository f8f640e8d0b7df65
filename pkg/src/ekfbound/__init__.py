"""Certified per-entry bounds on the error covariance of an extended Kalman filter."""

__version__ = "0.1.0"

from .errors import (
    BoundUnavailableError,
    ConfigurationError,
    DecompositionInvalidError,
    EkfBoundError,
    HorizonMismatchError,
    InsufficientSamplesError,
    InvalidIntervalError,
    InvalidParameterError,
    NumericalError,
    RequiresBoundedSetError,
    UnsupportedSystemError,
)
from .systems import (
    CATALOG,
    Box,
    DecomposedDynamics,
    DecomposedMeasurement,
    NonlinearSystem,
    decompose_dynamics,
    decompose_measurement,
    make_system,
    verify_decomposition,
)
from .qc import LiftedConstraint, QuadraticConstraint, lift_qc, local_gain_estimate, norm_bound_qc, sector_bound_qc, validate_qc
from .sdp import SdpSettings, SdpSolution, solve
from .bounds import (
    CovarianceInterval,
    assemble_psd_overbound,
    entry_selector,
    measurement_update_bound,
    propagate_measurement_interval,
    propagate_time_interval,
    time_update_bound,
    trace_selector,
    worst_case_linear_functional,
)
from .filter import FilterConfig, FilterState, QcSpec, ekf_gain, run_scenario, step
from .oracle import bound_violation_report, run_ensemble, simulate_truth
