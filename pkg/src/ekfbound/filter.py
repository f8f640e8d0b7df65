"""EKF with certified covariance intervals carried alongside the nominal filter."""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .bounds import (
    CovarianceInterval,
    assemble_psd_overbound,
    propagate_measurement_interval,
    propagate_time_interval,
    trace_bounds,
    worst_case_linear_functional,
)
from .errors import BoundUnavailableError, ConfigurationError, EkfBoundError, NumericalError
from .qc import lift_qc, local_gain_estimate, norm_bound_qc, sector_bound_qc, validate_qc
from .sdp import SdpSettings
from .systems import Box, decompose_dynamics, decompose_measurement

log = logging.getLogger(__name__)


GAMMA_FLOOR = 1e-5


@dataclass(frozen=True)
class QcSpec:
    """How to build the quadratic constraint for one nonlinearity at each step.

    ``gamma="auto"`` re-estimates the local gain of the current remainder on
    the box at every step.
    """

    kind: str = "norm"
    gamma: Union[float, str] = "auto"
    alpha: float = -1.0
    beta: float = 1.0
    box: Optional[list] = None        # [[lo, hi], ...]; one pair broadcasts
    grid_density: int = 101

    def make_box(self, dim):
        if self.box is None:
            return Box.unbounded(dim)
        pairs = np.asarray(self.box, dtype=float).reshape(-1, 2)
        if len(pairs) == 1 and dim > 1:
            pairs = np.repeat(pairs, dim, axis=0)
        if len(pairs) != dim:
            raise ConfigurationError(f"QC box has {len(pairs)} pairs, nonlinearity input has {dim}")
        return Box(pairs[:, 0], pairs[:, 1])

    def build(self, Delta, input_dim, output_dim):
        box = self.make_box(input_dim)
        if self.kind == "norm":
            if self.gamma == "auto":
                gamma = local_gain_estimate(Delta, box, self.grid_density)
            else:
                gamma = float(self.gamma)
            if 0.0 < gamma < GAMMA_FLOOR:
                # a larger norm bound is still valid; tiny gains push ξ* ~ 1/γ
                # out of the solver's range
                gamma = GAMMA_FLOOR
            return norm_bound_qc(gamma, input_dim, output_dim, box, allow_zero=True)
        if self.kind == "sector":
            if input_dim != output_dim:
                raise ConfigurationError("sector constraints need equal input and output dimension")
            return sector_bound_qc(self.alpha, self.beta, box, input_dim)
        raise ConfigurationError(f"unknown QC kind {self.kind!r}")


@dataclass(frozen=True)
class FilterConfig:
    dynamics_qc: QcSpec = QcSpec()
    measurement_qc: QcSpec = QcSpec()
    sdp: SdpSettings = SdpSettings()
    continue_on_failure: bool = False
    experimental_overbound: bool = False
    trace_bounds: bool = True
    validate_qc_samples: int = 1000
    threads: int = 1
    record_timing: bool = False


@dataclass
class FilterState:
    x_check: np.ndarray
    x_hat: np.ndarray
    P_nominal: np.ndarray
    interval: CovarianceInterval
    k: int = 0
    P_nominal_prior: Optional[np.ndarray] = None
    prior_interval: Optional[CovarianceInterval] = None
    report: Optional["StepReport"] = None

    def validate(self):
        P = self.P_nominal
        if not np.allclose(P, P.T, atol=1e-10) or np.linalg.eigvalsh(P).min() < -1e-9 * (1 + np.abs(P).max()):
            raise NumericalError(f"nominal covariance lost symmetry/PSD at step {self.k}")
        if not (np.all(np.isfinite(self.x_hat)) and np.all(np.isfinite(self.x_check))):
            raise NumericalError(f"non-finite state estimate at step {self.k}")
        self.interval.validate()


@dataclass
class PhaseReport:
    entries: list
    gamma: Optional[float] = None
    qc_min_value: Optional[float] = None
    validity_excursion: bool = False
    trace_lower: Optional[float] = None
    trace_upper: Optional[float] = None


@dataclass
class StepReport:
    k: int
    prior: PhaseReport
    posterior: PhaseReport
    gain: np.ndarray
    overbound: Optional[np.ndarray] = None
    elapsed_ms: float = 0.0


@dataclass
class RunRecord:
    step: int
    phase: str
    i: int
    j: int
    lower: float
    upper: float
    ekf_nominal: float
    empirical: Optional[float] = None
    solver_status: str = ""
    xi_star: Optional[float] = None
    solve_time_ms: Optional[float] = None


@dataclass
class ScenarioRun:
    states: list
    records: list
    failures: list = field(default_factory=list)

    def intervals(self, phase):
        if phase == "posterior":
            return [s.interval for s in self.states]
        return [s.prior_interval for s in self.states[1:]]


# ---------------------------------------------------------------------------


def ekf_gain(H, P_prior, R, B_v=None):
    H = np.atleast_2d(H)
    P = np.atleast_2d(P_prior)
    R = np.atleast_2d(R)
    B_v = np.eye(H.shape[0]) if B_v is None else np.atleast_2d(B_v)
    S = H @ P @ H.T + B_v @ R @ B_v.T
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w.min() <= 1e-14 * max(1.0, np.abs(w).max()):
        raise NumericalError("innovation covariance is singular")
    return np.linalg.solve(S, H @ P).T


def nominal_time_update(A, P_plus, B_w, Q):
    A, P, B_w, Q = (np.atleast_2d(m) for m in (A, P_plus, B_w, Q))
    out = A @ P @ A.T + B_w @ Q @ B_w.T
    return 0.5 * (out + out.T)


def nominal_measurement_update(K, H, P_minus):
    K, H, P = (np.atleast_2d(m) for m in (K, H, P_minus))
    out = (np.eye(P.shape[0]) - K @ H) @ P
    return 0.5 * (out + out.T)


def initial_state(x0_mean, P0):
    x0 = np.asarray(x0_mean, dtype=float).reshape(-1)
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    if P0.shape != (x0.size, x0.size):
        raise ConfigurationError("initial covariance does not match the mean")
    return FilterState(x0.copy(), x0.copy(), P0.copy(), CovarianceInterval.point(P0, 0, "posterior"), 0)


def _qc_for(decomp, spec, config, seed):
    """Build and lift the QC for one decomposition, with diagnostics."""
    if decomp.is_linear:
        return None, None, None
    n_in, n_out = decomp.C.shape[0], decomp.n_p
    qc = spec.build(decomp.Delta, n_in, n_out)
    qmin = None
    if config.validate_qc_samples:
        rep = validate_qc(qc, decomp.Delta, config.validate_qc_samples, seed)
        qmin = rep.min_value
        if not rep.passed:
            log.warning("quadratic constraint violated on its box (min form %.3e)", qmin)
    gamma = float(np.sqrt(max(qc.Lambda[0, 0], 0.0))) if qc.kind == "norm" else None
    if gamma == 0.0:
        # Λ = diag(0, -I) forces p = 0; the SDP optimum is then only reached
        # as ξ -> ∞, and its limit is the linear update, so use that directly
        return None, gamma, qmin
    return lift_qc(qc, decomp.C), gamma, qmin


def _excursion(decomp, box, interval):
    """True when 3σ of the nonlinearity input can leave the validity box."""
    if decomp.is_linear or box is None:
        return False
    for r, c in enumerate(decomp.C):
        var = worst_case_linear_functional(np.outer(c, c), interval)
        reach = 3.0 * np.sqrt(max(var, 0.0))
        if reach > min(-box.lower[r], box.upper[r]):
            return True
    return False


def step(state, system, u_k, y_k, config=None, executor=None):
    """One prediction + correction with both nominal and interval covariances."""
    config = config or FilterConfig()
    t0 = time.perf_counter()
    k = state.k
    u_k = np.zeros(system.input_dim) if u_k is None else np.asarray(u_k, dtype=float).reshape(-1)
    y_k = np.asarray(y_k, dtype=float).reshape(-1)
    if y_k.size != system.meas_dim:
        raise ConfigurationError(f"measurement at step {k + 1} has length {y_k.size}")
    fallback = None if state.interval.finite else state.P_nominal

    # (a)-(c): time update
    dyn = decompose_dynamics(system, state.x_hat, u_k)
    dyn_box = None if dyn.is_linear else config.dynamics_qc.make_box(dyn.C.shape[0])
    dyn = replace(dyn, box=dyn_box)
    x_check = system.f_d(state.x_hat, u_k, np.zeros(system.process_noise_dim))
    P_prior = nominal_time_update(dyn.A, state.P_nominal, dyn.B_w, system.Q)
    lifted, gamma, qmin = _qc_for(dyn, config.dynamics_qc, config, seed=k)
    try:
        prop = propagate_time_interval(
            dyn, lifted, state.interval, system.Q, config.sdp, k + 1, fallback,
            config.continue_on_failure, executor,
        )
    except BoundUnavailableError as exc:
        exc.step, exc.phase = k + 1, "prior"
        raise
    prior_rep = PhaseReport(prop.entries, gamma, qmin, _excursion(dyn, dyn_box, state.interval))
    if config.trace_bounds:
        prior_rep.trace_lower, prior_rep.trace_upper = _trace_pair(
            "prior", dict(dyn=dyn, lifted=lifted, interval=state.interval, Q=system.Q,
                          settings=config.sdp, fallback_point=fallback))
    prior = prop.interval

    # (d)-(f): measurement update
    meas = decompose_measurement(system, x_check)
    meas_box = None if meas.is_linear else config.measurement_qc.make_box(meas.C.shape[0])
    meas = replace(meas, box=meas_box)
    K = ekf_gain(meas.H, P_prior, system.R, meas.B_v)
    v0 = np.zeros(system.meas_noise_dim)
    x_hat = x_check + K @ (y_k - system.g_d(x_check, v0))
    P_post = nominal_measurement_update(K, meas.H, P_prior)
    lifted_m, gamma_m, qmin_m = _qc_for(meas, config.measurement_qc, config, seed=10_000 + k)
    fallback = None if prior.finite else P_prior
    try:
        prop_m = propagate_measurement_interval(
            meas, lifted_m, K, prior, system.R, config.sdp, k + 1, fallback,
            config.continue_on_failure, executor,
        )
    except BoundUnavailableError as exc:
        exc.step, exc.phase = k + 1, "posterior"
        raise
    post_rep = PhaseReport(prop_m.entries, gamma_m, qmin_m, _excursion(meas, meas_box, prior))
    if config.trace_bounds:
        post_rep.trace_lower, post_rep.trace_upper = _trace_pair(
            "posterior", dict(meas=meas, lifted=lifted_m, interval=prior, R=system.R, K=K,
                              settings=config.sdp, fallback_point=fallback))

    report = StepReport(k + 1, prior_rep, post_rep, K)
    if config.experimental_overbound and prop_m.interval.finite:
        report.overbound = assemble_psd_overbound(prop_m.interval)
    report.elapsed_ms = 1e3 * (time.perf_counter() - t0)
    new = FilterState(x_check, x_hat, P_post, prop_m.interval, k + 1, P_prior, prior, report)
    new.validate()
    return new


def _trace_pair(phase, kw):
    out = []
    for s in (-1, 1):
        try:
            out.append(trace_bounds(phase, s, **kw))
        except (BoundUnavailableError, ValueError):
            out.append(None)
    return tuple(out)


def _records_for(state, phase, config):
    if phase == "posterior":
        interval, P, entries = state.interval, state.P_nominal, (state.report.posterior.entries if state.report else None)
    else:
        interval, P, entries = state.prior_interval, state.P_nominal_prior, state.report.prior.entries
    n = P.shape[0]
    by_pair = {(e.i, e.j): e for e in entries} if entries else {}
    rows = []
    for i in range(n):
        for j in range(i, n):
            e = by_pair.get((i, j))
            rows.append(RunRecord(
                state.k, phase, i, j, float(interval.L[i, j]), float(interval.U[i, j]), float(P[i, j]),
                None,
                e.status if e else "initial",
                (float(e.xi_star) if e else 0.0),
                (float(e.solve_time_ms) if (e and config.record_timing) else None),
            ))
    return rows


def run_scenario(system, x0_mean, P0, inputs, measurements, horizon, config=None):
    """Run ``horizon`` filter steps; ``measurements[k]`` is y at step k+1.

    ``measurements`` may also be a callable ``k -> y_{k+1}``.
    """
    config = config or FilterConfig()
    if horizon is None or int(horizon) < 1:
        raise ConfigurationError("horizon must be at least 1")
    horizon = int(horizon)
    if inputs is None:
        inputs = np.zeros((horizon, system.input_dim))
    inputs = np.asarray(inputs, dtype=float).reshape(horizon, system.input_dim) if system.input_dim else np.zeros((horizon, 0))
    if not callable(measurements):
        meas_arr = np.asarray(measurements, dtype=float).reshape(-1, system.meas_dim)
        if len(meas_arr) < horizon:
            raise ConfigurationError(f"{len(meas_arr)} measurements for horizon {horizon}")
        get_y = meas_arr.__getitem__
    else:
        get_y = measurements

    state = initial_state(x0_mean, P0)
    if state.x_hat.size != system.state_dim:
        raise ConfigurationError("initial mean has wrong dimension")
    states = [state]
    records = _records_for(state, "posterior", config)
    executor = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for k in range(horizon):
            try:
                state = step(state, system, inputs[k], get_y(k), config, executor)
            except BoundUnavailableError:
                raise
            except EkfBoundError as exc:
                raise type(exc)(f"step {k + 1}: {exc}") from exc
            states.append(state)
            records += _records_for(state, "prior", config)
            records += _records_for(state, "posterior", config)
    finally:
        if executor is not None:
            executor.shutdown()
    failures = [
        (s.k, ph, e.i, e.j, e.error)
        for s in states[1:]
        for ph, rep in (("prior", s.report.prior), ("posterior", s.report.posterior))
        for e in rep.entries if e.error
    ]
    return ScenarioRun(states, records, failures)
