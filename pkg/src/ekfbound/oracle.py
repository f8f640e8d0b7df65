"""
Monte Carlo ground truth for the certified intervals.

Each trajectory is simulated from the true nonlinear model and runs its own
EKF, so the prior error ``x_k - x̌_k`` and posterior error ``x_k - x̂_k`` are
sampled exactly as the filter defines them. Bootstrap standard errors give
the statistical margin for containment checks.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, HorizonMismatchError, InsufficientSamplesError


@dataclass
class TruthEnsemble:
    x: np.ndarray        # (T+1, N, n)
    y: np.ndarray        # (T, N, m); y[k] is the measurement at step k+1
    inputs: np.ndarray   # (T, n_u)
    seed: int

    @property
    def N(self):
        return self.x.shape[1]

    @property
    def horizon(self):
        return self.y.shape[0]


@dataclass
class EnsembleResult:
    prior_errors: np.ndarray      # (T, N, n), index k-1 for step k
    posterior_errors: np.ndarray  # (T+1, N, n), index k for step k
    seed: int
    moment: str = "central"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def N(self):
        return self.posterior_errors.shape[1]

    @property
    def horizon(self):
        return self.prior_errors.shape[0]

    def errors(self, k, phase):
        if phase == "posterior":
            if not 0 <= k <= self.horizon:
                raise HorizonMismatchError(f"no posterior samples for step {k}")
            return self.posterior_errors[k]
        if not 1 <= k <= self.horizon:
            raise HorizonMismatchError(f"no prior samples for step {k}")
        return self.prior_errors[k - 1]

    def covariance(self, k, phase):
        key = (k, phase)
        if key not in self._cache:
            E = self.errors(k, phase)
            self._cache[key] = (empirical_covariance(E) if self.moment == "central"
                                else empirical_second_moment(E))
        return self._cache[key]


def _gaussian(rng, cov, size):
    cov = np.atleast_2d(cov)
    return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=size, method="eigh")


def _inputs(system, inputs, T):
    if system.input_dim == 0:
        return np.zeros((T, 0))
    if inputs is None:
        return np.zeros((T, system.input_dim))
    return np.asarray(inputs, dtype=float).reshape(T, system.input_dim)


def simulate_truth(system, x0_mean, P0, inputs, T, N, seed, min_samples=1):
    """N independent trajectories of the true model; deterministic per seed."""
    if N < min_samples:
        raise InsufficientSamplesError(f"need at least {min_samples} trajectories, got {N}")
    x0_mean = np.asarray(x0_mean, dtype=float).reshape(-1)
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    if x0_mean.size != system.state_dim or P0.shape != (system.state_dim,) * 2:
        raise ConfigurationError("initial distribution does not match the state dimension")
    if not np.allclose(P0, P0.T) or np.linalg.eigvalsh(P0).min() < -1e-12:
        raise ConfigurationError("initial covariance must be symmetric PSD")
    u = _inputs(system, inputs, T)
    rng = np.random.default_rng(seed)
    x = np.empty((T + 1, N, system.state_dim))
    y = np.empty((T, N, system.meas_dim))
    x[0] = x0_mean + _gaussian(rng, P0, N)
    for k in range(T):
        w = _gaussian(rng, system.Q, N)
        x[k + 1] = system.f_d(x[k], u[k], w)
        v = _gaussian(rng, system.R, N)
        y[k] = system.g_d(x[k + 1], v)
    return TruthEnsemble(x, y, u, seed)


def run_ensemble_ekf(system, truth, x0_mean, P0, moment="central"):
    """Run one EKF per trajectory (vectorised) and collect the error samples."""
    N, T, n = truth.N, truth.horizon, system.state_dim
    x_hat = np.tile(np.asarray(x0_mean, dtype=float).reshape(1, n), (N, 1))
    P = np.tile(np.atleast_2d(P0).astype(float), (N, 1, 1))
    W = system.B_w @ system.Q @ system.B_w.T
    V = system.B_v @ system.R @ system.B_v.T
    w0 = np.zeros((N, system.process_noise_dim))
    v0 = np.zeros((N, system.meas_noise_dim))
    prior = np.empty((T, N, n))
    post = np.empty((T + 1, N, n))
    post[0] = truth.x[0] - x_hat
    for k in range(T):
        u = truth.inputs[k]
        A = system.jacobian_f(x_hat, u)
        x_check = system.f_d(x_hat, u, w0)
        P = kernels.batch_time_update(P, A, W)
        H = system.jacobian_g(x_check)
        K, P = kernels.batch_measurement_update(P, H, V)
        innov = truth.y[k] - system.g_d(x_check, v0)
        x_hat = x_check + np.einsum("kij,kj->ki", K, innov)
        prior[k] = truth.x[k + 1] - x_check
        post[k + 1] = truth.x[k + 1] - x_hat
    return EnsembleResult(prior, post, truth.seed, moment)


def run_frozen_ensemble(system, run, P0, inputs, N, seed, moment="central"):
    """Error ensemble along the linearisation points and gains of one filter run.

    Samples ``δx_{k+1} = f(x̂_k + ê_k, u, w) - f(x̂_k, u, 0)`` and
    ``ê = δx - K δy`` with the run's own ``x̂_k``, ``x̌_k`` and ``K_k``, which
    is the error recursion the interval bounds certify.
    """
    if N < 2:
        raise InsufficientSamplesError("need at least two trajectories")
    states = run.states
    T, n = len(states) - 1, system.state_dim
    u = _inputs(system, inputs, T)
    rng = np.random.default_rng(seed)
    e = _gaussian(rng, P0, N)
    prior = np.empty((T, N, n))
    post = np.empty((T + 1, N, n))
    post[0] = e
    w0 = np.zeros(system.process_noise_dim)
    v0 = np.zeros(system.meas_noise_dim)
    for k in range(T):
        s0, s1 = states[k], states[k + 1]
        w = _gaussian(rng, system.Q, N)
        dx = system.f_d(s0.x_hat + e, u[k], w) - system.f_d(s0.x_hat, u[k], w0)
        v = _gaussian(rng, system.R, N)
        dy = system.g_d(s1.x_check + dx, v) - system.g_d(s1.x_check, v0)
        e = dx - dy @ s1.report.gain.T
        prior[k] = dx
        post[k + 1] = e
    return EnsembleResult(prior, post, seed, moment)


def run_ensemble(system, x0_mean, P0, inputs, T, N, seed, moment="central"):
    truth = simulate_truth(system, x0_mean, P0, inputs, T, N, seed, min_samples=2)
    return run_ensemble_ekf(system, truth, x0_mean, P0, moment)


def empirical_covariance(samples):
    """Unbiased sample covariance (n-1 divisor) of rows of ``samples``."""
    E = np.asarray(samples, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    if E.shape[0] < 2:
        raise InsufficientSamplesError("empirical covariance needs at least two samples")
    return kernels.sample_covariance(E)


def empirical_second_moment(samples):
    E = np.asarray(samples, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    if E.shape[0] < 2:
        raise InsufficientSamplesError("need at least two samples")
    return (E.T @ E) / E.shape[0]


def bootstrap_standard_error(samples, resamples=200, seed=0, chunk=20, moment="central"):
    """Bootstrap standard error of every covariance entry."""
    E = np.asarray(samples, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    N = E.shape[0]
    if N < 2:
        raise InsufficientSamplesError("bootstrap needs at least two samples")
    rng = np.random.default_rng(seed)
    E = E - E.mean(axis=0)  # conditioning only; covariance is shift invariant
    covs = []
    for start in range(0, resamples, chunk):
        b = min(chunk, resamples - start)
        idx = rng.integers(0, N, size=(b, N))
        if moment == "central":
            covs.append(kernels.bootstrap_covariances(E, idx))
        else:
            X = E[idx]
            covs.append(np.einsum("bki,bkj->bij", X, X) / N)
    covs = np.concatenate(covs)
    return covs.std(axis=0, ddof=1)


@dataclass
class Violation:
    step: int
    phase: str
    i: int
    j: int
    empirical: float
    lower: float
    upper: float
    se: float


@dataclass
class ViolationReport:
    violations: list
    pairs_checked: int
    confidence_sigma: float
    N: int

    @property
    def violation_rate(self):
        return len(self.violations) / self.pairs_checked if self.pairs_checked else 0.0

    def to_dict(self):
        return dict(
            pairs_checked=self.pairs_checked,
            violations=len(self.violations),
            violation_rate=self.violation_rate,
            confidence_sigma=self.confidence_sigma,
            samples=self.N,
            details=[v.__dict__ for v in self.violations],
        )


def bound_violation_report(intervals, ensemble, confidence_sigma=3.0, resamples=200, seed=0, atol=1e-12):
    """Flag entries whose empirical value leaves [L - cσ·se, U + cσ·se]."""
    violations = []
    pairs = 0
    for iv in intervals:
        E = ensemble.errors(iv.k, iv.phase)
        if E.shape[1] != iv.n:
            raise HorizonMismatchError("interval dimension does not match the ensemble")
        emp = ensemble.covariance(iv.k, iv.phase)
        se = bootstrap_standard_error(E, resamples, seed=(seed, iv.k, iv.phase == "prior"),
                                      moment=ensemble.moment)
        for i in range(iv.n):
            for j in range(i, iv.n):
                pairs += 1
                margin = confidence_sigma * se[i, j] + atol
                e = emp[i, j]
                if e > iv.U[i, j] + margin or e < iv.L[i, j] - margin:
                    violations.append(Violation(iv.k, iv.phase, i, j, float(e), float(iv.L[i, j]),
                                                float(iv.U[i, j]), float(se[i, j])))
    return ViolationReport(violations, pairs, confidence_sigma, ensemble.N)
