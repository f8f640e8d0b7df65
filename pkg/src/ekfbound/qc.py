"""
Quadratic constraints on static nonlinearities and their lift to state
coordinates.

A constraint is a symmetric ``Λ`` with ``[b; d]ᵀ Λ [b; d] >= 0`` for every
input ``b`` in a validity box and ``d = Δ(b)``. Lifting through ``C`` gives
``M = Uᵀ Λ U`` with ``U = diag(C, I)``, the matrix that enters both bounding
LMIs through the multiplier ``ξ M``.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from .errors import ConfigurationError, InvalidParameterError, RequiresBoundedSetError
from .systems import Box

SAFETY_FACTOR = 1.05


@dataclass(frozen=True)
class QuadraticConstraint:
    Lambda: np.ndarray
    input_dim: int
    output_dim: int
    validity_box: Optional[Box] = None
    kind: str = "custom"

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        k = self.input_dim + self.output_dim
        if L.shape != (k, k):
            raise ConfigurationError(f"Lambda must be {k}x{k}, got {L.shape}")
        if not np.allclose(L, L.T, atol=1e-14):
            raise ConfigurationError("Lambda must be symmetric")
        object.__setattr__(self, "Lambda", 0.5 * (L + L.T))

    def form(self, b, d):
        """Quadratic form value for stacked samples b (N, n_b), d (N, n_d)."""
        z = np.concatenate([np.atleast_2d(b), np.atleast_2d(d)], axis=-1)
        return np.einsum("ki,ij,kj->k", z, self.Lambda, z)


@dataclass(frozen=True)
class LiftedConstraint:
    M: np.ndarray
    source: QuadraticConstraint
    C: np.ndarray

    @property
    def state_dim(self):
        return self.C.shape[1]


def norm_bound_qc(gamma, input_dim=1, output_dim=1, box=None, allow_zero=False):
    """‖d‖ <= γ ‖b‖  as  Λ = diag(γ² I, -I).

    ``allow_zero`` admits γ = 0, which claims Δ ≡ 0; only useful to build a
    deliberately unsound configuration.
    """
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma < 0 or (gamma == 0 and not allow_zero):
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    Lam = block_diag(gamma ** 2 * np.eye(input_dim), -np.eye(output_dim))
    return QuadraticConstraint(Lam, input_dim, output_dim, box, kind="norm")


def sector_bound_qc(alpha, beta, box=None, dim=1):
    """Componentwise sector (d - αb)(βb - d) >= 0."""
    alpha, beta = float(alpha), float(beta)
    if alpha > beta:
        raise InvalidParameterError(f"sector requires alpha <= beta, got [{alpha}, {beta}]")
    I = np.eye(dim)
    Lam = np.block([
        [-alpha * beta * I, 0.5 * (alpha + beta) * I],
        [0.5 * (alpha + beta) * I, -I],
    ])
    return QuadraticConstraint(Lam, dim, dim, box, kind="sector")


def local_gain_estimate(Delta, box, grid_density=101, safety=SAFETY_FACTOR):
    """Largest sampled ‖Δ(b)‖/‖b‖ over a tensor grid on ``box``, times 1.05."""
    if box is None or not box.bounded:
        raise RequiresBoundedSetError("local gain estimation needs a bounded box")
    if grid_density < 10:
        raise InvalidParameterError("grid_density must be at least 10 points per dimension")
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in zip(box.lower, box.upper)]
    B = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    nb = np.linalg.norm(B, axis=1)
    B = B[nb > 0]
    nb = nb[nb > 0]
    if B.size == 0:
        return 0.0
    D = np.asarray(Delta(B), dtype=float).reshape(len(B), -1)
    return float(safety * np.max(np.linalg.norm(D, axis=1) / nb))


def lift_qc(qc, C):
    """M = Uᵀ Λ U with U = diag(C, I)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[0] != qc.input_dim:
        raise ConfigurationError(f"C has {C.shape[0]} rows, QC input dimension is {qc.input_dim}")
    U = block_diag(C, np.eye(qc.output_dim))
    M = U.T @ qc.Lambda @ U
    return LiftedConstraint(0.5 * (M + M.T), qc, C)


@dataclass
class QcValidationReport:
    min_value: float
    worst_input: np.ndarray
    sample_count: int
    tolerance: float = 1e-12

    @property
    def passed(self):
        return self.min_value >= -self.tolerance

    def to_dict(self):
        return dict(
            min_value=self.min_value,
            worst_input=np.asarray(self.worst_input).tolist(),
            sample_count=self.sample_count,
            passed=self.passed,
        )


def validate_qc(qc, Delta, sample_count=1000, rng_seed=0, box=None, tolerance=1e-12):
    """Smallest quadratic-form value over uniform samples of the box.

    Violations are reported, not raised.
    """
    box = box if box is not None else qc.validity_box
    if box is None:
        box = Box.unbounded(qc.input_dim)
    rng = np.random.default_rng(rng_seed)
    b = box.sample(rng, sample_count)
    # include the box corners and the origin; norm-type constraints are often tight there
    extra = [np.zeros((1, qc.input_dim))]
    if box.bounded and qc.input_dim <= 6:
        grids = np.meshgrid(*[[lo, hi] for lo, hi in zip(box.lower, box.upper)], indexing="ij")
        extra.append(np.stack(grids, axis=-1).reshape(-1, qc.input_dim))
    b = np.concatenate([b] + extra)
    d = np.asarray(Delta(b), dtype=float).reshape(len(b), qc.output_dim)
    vals = qc.form(b, d)
    k = int(np.argmin(vals))
    return QcValidationReport(float(vals[k]), b[k], len(b), tolerance)
