"""
Nonlinear discrete-time systems and their exact linear-plus-remainder split.

For a system ``x+ = f_d(x, u, w)``, ``y = g_d(x, v)`` and a linearisation
point ``x̌`` every catalog entry supplies closed-form

    f_d(x̌+δx, u, 0) - f_d(x̌, u, 0) = A δx + B_p Δ(C_θ δx)
    g_d(x̌+δx, 0)    - g_d(x̌, 0)    = H δx + B_ρ Δ(C_μ δx)

with ``A``/``H`` the Jacobians and ``Δ`` the full Taylor remainder, so the
split holds without approximation. All model functions broadcast over a
leading batch axis: ``x`` may be ``(n,)`` or ``(N, n)``.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigurationError,
    DecompositionInvalidError,
    UnsupportedSystemError,
)


@dataclass(frozen=True)
class Box:
    """Axis-aligned validity set; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ConfigurationError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_width, dim=1):
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (dim,))
        return cls(-hw, hw.copy())

    @classmethod
    def unbounded(cls, dim):
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def from_pairs(cls, pairs):
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def dim(self):
        return self.lower.size

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, b):
        b = np.asarray(b, dtype=float)
        return np.all((b >= self.lower) & (b <= self.upper), axis=-1)

    def sample(self, rng, count, fallback_scale=1.0):
        lo = np.where(np.isfinite(self.lower), self.lower, -fallback_scale)
        hi = np.where(np.isfinite(self.upper), self.upper, fallback_scale)
        return rng.uniform(lo, hi, size=(count, self.dim))

    def to_pairs(self):
        return [[float(a), float(b)] for a, b in zip(self.lower, self.upper)]


@dataclass(frozen=True)
class DecomposedDynamics:
    A: np.ndarray
    B_p: np.ndarray
    B_w: np.ndarray
    C_theta: np.ndarray
    Delta: Optional[Callable] = None
    box: Optional[Box] = None

    @property
    def n_p(self):
        return self.B_p.shape[1]

    @property
    def is_linear(self):
        return self.n_p == 0 or self.Delta is None

    # uniform names shared with DecomposedMeasurement
    @property
    def linear_part(self):
        return self.A

    @property
    def B_nl(self):
        return self.B_p

    @property
    def C(self):
        return self.C_theta


@dataclass(frozen=True)
class DecomposedMeasurement:
    H: np.ndarray
    B_rho: np.ndarray
    B_v: np.ndarray
    C_mu: np.ndarray
    Delta: Optional[Callable] = None
    box: Optional[Box] = None

    @property
    def n_p(self):
        return self.B_rho.shape[1]

    @property
    def is_linear(self):
        return self.n_p == 0 or self.Delta is None

    @property
    def linear_part(self):
        return self.H

    @property
    def B_nl(self):
        return self.B_rho

    @property
    def C(self):
        return self.C_mu


@dataclass(frozen=True)
class NonlinearSystem:
    """A catalog system with its noise model and per-step decomposers."""

    name: str
    state_dim: int
    input_dim: int
    meas_dim: int
    process_noise_dim: int
    meas_noise_dim: int
    f_d: Callable
    g_d: Callable
    Q: np.ndarray
    R: np.ndarray
    jacobian_f: Callable
    jacobian_g: Callable
    B_w: np.ndarray
    B_v: np.ndarray
    dynamics_decomposer: Optional[Callable] = None
    measurement_decomposer: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for label, M, d in (("Q", self.Q, self.process_noise_dim), ("R", self.R, self.meas_noise_dim)):
            M = np.atleast_2d(np.asarray(M, dtype=float))
            if M.shape != (d, d):
                raise ConfigurationError(f"{label} must be {d}x{d}, got {M.shape}")
            if not np.allclose(M, M.T, atol=1e-12):
                raise ConfigurationError(f"{label} is not symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-12:
                raise ConfigurationError(f"{label} is not positive semidefinite")
            object.__setattr__(self, label, M)

    def with_noise(self, Q=None, R=None):
        kw = dict(self.__dict__)
        if Q is not None:
            kw["Q"] = Q
        if R is not None:
            kw["R"] = R
        return NonlinearSystem(**kw)

    def jacobian_f_fd(self, x, u, h=1e-6):
        """Central finite-difference Jacobian of f_d in x (w = 0)."""
        x = np.asarray(x, dtype=float)
        w0 = np.zeros(self.process_noise_dim)
        J = np.empty((self.state_dim, self.state_dim))
        for i in range(self.state_dim):
            e = np.zeros(self.state_dim)
            e[i] = h
            J[:, i] = (self.f_d(x + e, u, w0) - self.f_d(x - e, u, w0)) / (2 * h)
        return J


# ---------------------------------------------------------------------------
# shared pieces of the catalog


def _scalar_channel(kind):
    """(φ, φ', remainder(x̌, μ)) for a scalar nonlinearity of one state."""
    if kind in ("linear", "identity", "angle", "position"):
        return (lambda s: s), (lambda s: np.ones_like(s)), None
    if kind == "square":
        return (lambda s: s * s), (lambda s: 2.0 * s), (lambda c, m: m * m)
    if kind == "sine":
        return (
            np.sin,
            np.cos,
            lambda c, m: np.sin(c + m) - np.sin(c) - m * np.cos(c),
        )
    raise ConfigurationError(f"unknown measurement kind {kind!r}")


def _channel_measurement(n, index, kind, noise_var):
    """Measure one state component through φ with additive noise."""
    phi, dphi, rem = _scalar_channel(kind)

    def g_d(x, v):
        x = np.asarray(x, dtype=float)
        return phi(x[..., index:index + 1]) + np.asarray(v, dtype=float)

    def jac_g(x):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (1, n))
        J[..., 0, index] = dphi(x[..., index])
        return J

    def decompose(x_check, box):
        x_check = np.asarray(x_check, dtype=float)
        H = jac_g(x_check)
        if rem is None:
            return DecomposedMeasurement(H, np.zeros((1, 0)), np.eye(1), np.zeros((0, n)), None, box)
        C = np.zeros((1, n))
        C[0, index] = 1.0
        xc = float(x_check[index])
        return DecomposedMeasurement(
            H, np.ones((1, 1)), np.eye(1), C, lambda mu: rem(xc, np.asarray(mu, dtype=float)), box
        )

    return g_d, jac_g, decompose, np.atleast_2d(float(noise_var))


def _as_matrix(a, shape=None):
    M = np.atleast_2d(np.asarray(a, dtype=float))
    if shape is not None and M.shape != shape:
        raise ConfigurationError(f"expected shape {shape}, got {M.shape}")
    return M


# ---------------------------------------------------------------------------
# catalog


def linear_system(A=None, H=None, B=None, B_w=None, B_v=None, Q=None, R=None):
    """x+ = A x + B u + B_w w,  y = H x + B_v v."""
    if A is None:
        A = [[0.95, 0.1], [-0.05, 0.9]]
    A = _as_matrix(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigurationError("A must be square")
    H = _as_matrix(H if H is not None else np.eye(1, n))
    m = H.shape[0]
    B = np.zeros((n, 0)) if B is None else _as_matrix(B).reshape(n, -1)
    B_w = np.eye(n) if B_w is None else _as_matrix(B_w).reshape(n, -1)
    B_v = np.eye(m) if B_v is None else _as_matrix(B_v).reshape(m, -1)
    Q = np.eye(B_w.shape[1]) * 0.01 if Q is None else _as_matrix(Q)
    R = np.eye(B_v.shape[1]) * 0.1 if R is None else _as_matrix(R)

    def f_d(x, u, w):
        x = np.asarray(x, dtype=float)
        out = x @ A.T + np.asarray(w, dtype=float) @ B_w.T
        if B.shape[1]:
            out = out + np.asarray(u, dtype=float) @ B.T
        return out

    def g_d(x, v):
        return np.asarray(x, dtype=float) @ H.T + np.asarray(v, dtype=float) @ B_v.T

    def jac_f(x, u=None):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

    def jac_g(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(H, x.shape[:-1] + H.shape).copy()

    def dyn(x_check, u, box):
        return DecomposedDynamics(A.copy(), np.zeros((n, 0)), B_w.copy(), np.zeros((0, n)), None, box)

    def meas(x_check, box):
        return DecomposedMeasurement(H.copy(), np.zeros((m, 0)), B_v.copy(), np.zeros((0, n)), None, box)

    return NonlinearSystem(
        "linear", n, B.shape[1], m, B_w.shape[1], B_v.shape[1], f_d, g_d, Q, R,
        jac_f, jac_g, B_w, B_v, dyn, meas,
        params=dict(A=A.tolist(), H=H.tolist()),
    )


def scalar_sine(a=0.5, c=0.2, measurement="linear", Q=0.01, R=0.1):
    """x+ = a x + c sin x + w."""
    g_d, jac_g, meas, R = _channel_measurement(1, 0, measurement, R)

    def f_d(x, u, w):
        x = np.asarray(x, dtype=float)
        return a * x + c * np.sin(x) + np.asarray(w, dtype=float)

    def jac_f(x, u=None):
        x = np.asarray(x, dtype=float)
        return (a + c * np.cos(x))[..., None]

    def dyn(x_check, u, box):
        xc = float(np.asarray(x_check, dtype=float).reshape(-1)[0])

        def Delta(theta):
            theta = np.asarray(theta, dtype=float)
            return c * (np.sin(xc + theta) - np.sin(xc) - theta * np.cos(xc))

        return DecomposedDynamics(jac_f(np.array([xc])), np.ones((1, 1)), np.eye(1), np.eye(1), Delta, box)

    return NonlinearSystem(
        "scalar_sine", 1, 0, 1, 1, 1, f_d, g_d, np.atleast_2d(float(Q)), R,
        jac_f, jac_g, np.eye(1), np.eye(1), dyn, meas,
        params=dict(a=a, c=c, measurement=measurement),
    )


def scalar_cubic(a=0.9, c=-0.1, measurement="linear", Q=0.01, R=0.1):
    """x+ = a x + c x³ + w."""
    g_d, jac_g, meas, R = _channel_measurement(1, 0, measurement, R)

    def f_d(x, u, w):
        x = np.asarray(x, dtype=float)
        return a * x + c * x ** 3 + np.asarray(w, dtype=float)

    def jac_f(x, u=None):
        x = np.asarray(x, dtype=float)
        return (a + 3 * c * x ** 2)[..., None]

    def dyn(x_check, u, box):
        xc = float(np.asarray(x_check, dtype=float).reshape(-1)[0])

        def Delta(theta):
            theta = np.asarray(theta, dtype=float)
            return c * (3 * xc * theta ** 2 + theta ** 3)

        return DecomposedDynamics(jac_f(np.array([xc])), np.ones((1, 1)), np.eye(1), np.eye(1), Delta, box)

    return NonlinearSystem(
        "scalar_cubic", 1, 0, 1, 1, 1, f_d, g_d, np.atleast_2d(float(Q)), R,
        jac_f, jac_g, np.eye(1), np.eye(1), dyn, meas,
        params=dict(a=a, c=c, measurement=measurement),
    )


def pendulum(h=0.05, g_over_l=9.81, damping=0.1, measurement="angle", Q=None, R=0.01):
    """Euler-discretised damped pendulum, state (angle, rate), input torque."""
    Q = np.diag([1e-5, 1e-4]) if Q is None else Q
    g_d, jac_g, meas, R = _channel_measurement(2, 0, measurement, R)
    kappa = h * g_over_l

    def f_d(x, u, w):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float).reshape(-1)
        th, om = x[..., 0], x[..., 1]
        out = np.stack([th + h * om, om - kappa * np.sin(th) - h * damping * om + h * u[0]], axis=-1)
        return out + np.asarray(w, dtype=float)

    def jac_f(x, u=None):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = 1.0
        J[..., 0, 1] = h
        J[..., 1, 0] = -kappa * np.cos(x[..., 0])
        J[..., 1, 1] = 1.0 - h * damping
        return J

    def dyn(x_check, u, box):
        xc = float(np.asarray(x_check, dtype=float)[0])

        def Delta(theta):
            theta = np.asarray(theta, dtype=float)
            return np.sin(xc + theta) - np.sin(xc) - theta * np.cos(xc)

        return DecomposedDynamics(
            jac_f(np.asarray(x_check, dtype=float)), np.array([[0.0], [-kappa]]), np.eye(2),
            np.array([[1.0, 0.0]]), Delta, box,
        )

    return NonlinearSystem(
        "pendulum", 2, 1, 1, 2, 1, f_d, g_d, np.atleast_2d(np.asarray(Q, dtype=float)), R,
        jac_f, jac_g, np.eye(2), np.eye(1), dyn, meas,
        params=dict(h=h, g_over_l=g_over_l, damping=damping, measurement=measurement),
    )


def van_der_pol(h=0.05, mu=1.0, measurement="position", Q=None, R=0.01):
    """Euler-discretised Van der Pol oscillator; nonlinearity μ(1 - x₁²)x₂."""
    Q = np.diag([1e-4, 1e-4]) if Q is None else Q
    g_d, jac_g, meas, R = _channel_measurement(2, 0, measurement, R)

    def f_d(x, u, w):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        out = np.stack([x1 + h * x2, x2 + h * (mu * (1 - x1 ** 2) * x2 - x1)], axis=-1)
        return out + np.asarray(w, dtype=float)

    def jac_f(x, u=None):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = 1.0
        J[..., 0, 1] = h
        J[..., 1, 0] = h * (-2 * mu * x1 * x2 - 1)
        J[..., 1, 1] = 1 + h * mu * (1 - x1 ** 2)
        return J

    def dyn(x_check, u, box):
        a, b = (float(v) for v in np.asarray(x_check, dtype=float))

        # remainder of x1²x2 about (a, b)
        def Delta(theta):
            theta = np.asarray(theta, dtype=float)
            t1, t2 = theta[..., 0], theta[..., 1]
            return (b * t1 ** 2 + 2 * a * t1 * t2 + t1 ** 2 * t2)[..., None]

        return DecomposedDynamics(
            jac_f(np.array([a, b])), np.array([[0.0], [-h * mu]]), np.eye(2), np.eye(2), Delta, box,
        )

    return NonlinearSystem(
        "van_der_pol", 2, 0, 1, 2, 1, f_d, g_d, np.atleast_2d(np.asarray(Q, dtype=float)), R,
        jac_f, jac_g, np.eye(2), np.eye(1), dyn, meas,
        params=dict(h=h, mu=mu, measurement=measurement),
    )


CATALOG = {
    "linear": linear_system,
    "scalar_sine": scalar_sine,
    "scalar_cubic": scalar_cubic,
    "pendulum": pendulum,
    "van_der_pol": van_der_pol,
}


def make_system(system_id, **params):
    try:
        factory = CATALOG[system_id]
    except KeyError:
        raise ConfigurationError(f"unknown system id {system_id!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {system_id!r}: {exc}") from None


# ---------------------------------------------------------------------------
# operations


def _check_vec(name, v, dim):
    v = np.asarray(v, dtype=float).reshape(-1) if v is not None else np.zeros(0)
    if v.size != dim:
        raise ConfigurationError(f"{name} has length {v.size}, expected {dim}")
    return v


def decompose_dynamics(system, x_check, u=None, box=None):
    x_check = _check_vec("x_check", x_check, system.state_dim)
    u = _check_vec("u", u if u is not None else np.zeros(system.input_dim), system.input_dim)
    if system.dynamics_decomposer is None:
        raise UnsupportedSystemError(f"no dynamics decomposition for {system.name}")
    return system.dynamics_decomposer(x_check, u, box)


def decompose_measurement(system, x_check, box=None):
    x_check = _check_vec("x_check", x_check, system.state_dim)
    if system.measurement_decomposer is None:
        raise UnsupportedSystemError(f"no measurement decomposition for {system.name}")
    return system.measurement_decomposer(x_check, box)


@dataclass
class ResidualReport:
    max_residual: float
    max_scaled_residual: float
    worst_sample: np.ndarray
    sample_count: int
    tolerance: float

    @property
    def passed(self):
        return self.max_scaled_residual <= self.tolerance

    def to_dict(self):
        return dict(
            max_residual=self.max_residual,
            max_scaled_residual=self.max_scaled_residual,
            worst_sample=np.asarray(self.worst_sample).tolist(),
            sample_count=self.sample_count,
            tolerance=self.tolerance,
            passed=self.passed,
        )


def _draw_deltas(rng, C, box, n, count):
    """δx samples with C δx inside the validity box (rejection sampling)."""
    if box is None or C.shape[0] == 0:
        return rng.uniform(-1.0, 1.0, size=(count, n))
    finite = np.concatenate([box.lower[np.isfinite(box.lower)], box.upper[np.isfinite(box.upper)]])
    scale = float(np.max(np.abs(finite))) if finite.size else 1.0
    out = []
    have = 0
    for _ in range(1000):
        d = rng.uniform(-scale, scale, size=(count, n))
        d = d[box.contains(d @ C.T)]
        out.append(d)
        have += len(d)
        if have >= count:
            break
    else:  # pragma: no cover
        raise ConfigurationError("could not sample inside validity box")
    return np.concatenate(out)[:count]


def verify_decomposition(system, decomposition, x_check, u=None, sample_count=1000, rng_seed=0,
                         tol=1e-10, raise_on_failure=True):
    """Sample the exactness identity; residual must be <= tol (1 + ‖δx‖)."""
    rng = np.random.default_rng(rng_seed)
    x_check = _check_vec("x_check", x_check, system.state_dim)
    u = _check_vec("u", u if u is not None else np.zeros(system.input_dim), system.input_dim)
    d = decomposition
    deltas = _draw_deltas(rng, d.C, d.box, system.state_dim, sample_count)
    X = x_check + deltas
    if isinstance(d, DecomposedDynamics):
        w0 = np.zeros((len(X), system.process_noise_dim))
        exact = system.f_d(X, u, w0) - system.f_d(x_check, u, w0[0])
    else:
        v0 = np.zeros((len(X), system.meas_noise_dim))
        exact = system.g_d(X, v0) - system.g_d(x_check, v0[0])
    model = deltas @ d.linear_part.T
    if not d.is_linear:
        model = model + d.Delta(deltas @ d.C.T) @ d.B_nl.T
    res = np.max(np.abs(exact - model), axis=1)
    scaled = res / (1.0 + np.linalg.norm(deltas, axis=1))
    k = int(np.argmax(scaled))
    report = ResidualReport(float(res.max()), float(scaled[k]), deltas[k], len(deltas), tol)
    if raise_on_failure and not report.passed:
        raise DecompositionInvalidError(
            f"decomposition residual {report.max_scaled_residual:.3e} exceeds {tol:.1e}",
            worst_sample=deltas[k], residual=float(res[k]),
        )
    return report
