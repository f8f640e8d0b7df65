"""
Per-entry covariance bounds through the EKF time and measurement updates.

Time update. If ``Z - Y ≺ 0``, ``ξ >= 0`` and

    [Aᵀ(Z-Y)A    AᵀZB_p ]
    [B_pᵀZA     B_pᵀZB_p] + ξM ⪯ 0

then ``tr(P⁻ Z) <= tr(B_w Q B_wᵀ Z) + tr(A P⁺ Aᵀ Y)``.

Measurement update. If ``ξ >= 0`` and

    [-Y      HᵀKᵀZKB_ρ - ZKB_ρ]
    [  *     B_ρᵀKᵀZKB_ρ      ] + ξM ⪯ 0

then ``tr(P⁺ Z) <= tr(P⁻ (1-KH)ᵀZ(1-KH)) + tr(K B_v R B_vᵀ Kᵀ Z) + tr(P⁻ Y)``.

With ``Z = ±½(e_i e_jᵀ + e_j e_iᵀ)`` the left side is ``±P_ij``. The true
covariance is only known up to an entrywise interval after the first
nonlinear step, so ``Y*`` is found at the interval midpoint and the
right-hand side is then maximised over the whole interval box, which is
exact because it is linear in ``P``.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import BoundUnavailableError, ConfigurationError, InvalidIntervalError
from .sdp import LmiConstraint, SdpProblem, SdpSettings, check_solution, solve

INTERVAL_TOL = 1e-9
# objective regulariser: keeps Y* bounded when the midpoint is singular
_OBJ_REG = 1e-9


@dataclass(frozen=True)
class EntrySelector:
    Z: np.ndarray
    kind: str = "custom"
    i: Optional[int] = None
    j: Optional[int] = None
    sign: int = 1


def _sign(sign):
    if sign in (1, "+", "upper"):
        return 1
    if sign in (-1, "-", "lower"):
        return -1
    raise ValueError(f"sign must be +1 or -1, got {sign!r}")


def entry_selector(i, j, sign=1, n=None):
    """Z with tr(P Z) = ±P_ij for symmetric P (0-based indices)."""
    s = _sign(sign)
    if n is None:
        n = max(i, j) + 1
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"entry ({i}, {j}) out of range for n={n}")
    i, j = min(i, j), max(i, j)
    Z = np.zeros((n, n))
    Z[i, j] += 0.5
    Z[j, i] += 0.5
    return EntrySelector(s * Z, "entry", i, j, s)


def trace_selector(n, sign=1):
    s = _sign(sign)
    return EntrySelector(s * np.eye(n), "trace", None, None, s)


def _zmat(Z):
    return Z.Z if isinstance(Z, EntrySelector) else np.atleast_2d(np.asarray(Z, dtype=float))


@dataclass
class CovarianceInterval:
    L: np.ndarray
    U: np.ndarray
    k: int = 0
    phase: str = "posterior"

    def __post_init__(self):
        self.L = np.atleast_2d(np.asarray(self.L, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.validate()

    @classmethod
    def point(cls, P, k=0, phase="posterior"):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        P = 0.5 * (P + P.T)
        return cls(P.copy(), P.copy(), k, phase)

    @property
    def n(self):
        return self.L.shape[0]

    @property
    def midpoint(self):
        return 0.5 * (self.L + self.U)

    @property
    def half_width(self):
        return 0.5 * (self.U - self.L)

    @property
    def finite(self):
        return bool(np.all(np.isfinite(self.L)) and np.all(np.isfinite(self.U)))

    def validate(self, tol=INTERVAL_TOL):
        L, U = self.L, self.U
        if L.shape != U.shape or L.shape[0] != L.shape[1]:
            raise InvalidIntervalError("L and U must be square matrices of equal shape")
        if np.any(np.isnan(L)) or np.any(np.isnan(U)):
            raise InvalidIntervalError("interval contains NaN")
        for name, X in (("L", L), ("U", U)):
            fin = np.isfinite(X) & np.isfinite(X.T)
            if np.any(np.abs(X[fin] - X.T[fin]) > tol * (1 + np.abs(X[fin]))):
                raise InvalidIntervalError(f"{name} is not symmetric")
        if np.any(L > U + tol * (1 + np.abs(U))):
            raise InvalidIntervalError("interval has L > U")
        if np.any(np.diag(U) < -tol):
            raise InvalidIntervalError("interval upper diagonal is negative")

    def contains(self, P, tol=0.0):
        P = np.atleast_2d(P)
        return bool(np.all(P >= self.L - tol) and np.all(P <= self.U + tol))


def worst_case_linear_functional(C, interval):
    """max tr(C P) over symmetric P with L <= P <= U entrywise."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != interval.L.shape:
        raise ConfigurationError(f"C shape {C.shape} does not match interval {interval.L.shape}")
    interval.validate()
    return kernels.box_worst_case(0.5 * (C + C.T), interval.L, interval.U)


def _psd_part(P):
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    return (V * np.clip(w, 0.0, None)) @ V.T


def _objective_point(interval, fallback=None):
    if interval.finite:
        return _psd_part(interval.midpoint)
    if fallback is not None:
        return _psd_part(np.asarray(fallback, dtype=float))
    P = np.where(np.isfinite(interval.midpoint), interval.midpoint, 0.0)
    return _psd_part(P)


# ---------------------------------------------------------------------------
# right-hand sides at a known covariance (no interval)


def time_update_rhs(dyn, P, Q, Z, Y):
    Z = _zmat(Z)
    A, Bw = dyn.A, dyn.B_w
    return float(np.trace(Bw @ Q @ Bw.T @ Z) + np.trace(A @ P @ A.T @ Y))


def measurement_update_rhs(meas, K, P, R, Z, Y):
    Z = _zmat(Z)
    n = P.shape[0]
    IKH = np.eye(n) - K @ meas.H
    KBv = K @ meas.B_v
    return float(np.trace(P @ IKH.T @ Z @ IKH) + np.trace(KBv @ R @ KBv.T @ Z) + np.trace(P @ Y))


# ---------------------------------------------------------------------------
# single-entry bounds


@dataclass
class BoundResult:
    value: float
    solution: Optional[object] = None   # SdpSolution when an SDP was solved
    problem: Optional[SdpProblem] = None

    @property
    def status(self):
        return "linear" if self.solution is None else self.solution.status

    @property
    def xi_star(self):
        return 0.0 if self.solution is None else self.solution.xi_star

    @property
    def solve_time_ms(self):
        return 0.0 if self.solution is None else self.solution.solve_time_ms


def _check_lift(decomp, lifted):
    n = decomp.linear_part.shape[1]
    want = n + decomp.n_p
    if lifted.M.shape != (want, want):
        raise ConfigurationError(f"lifted constraint is {lifted.M.shape}, expected {want}x{want}")


def time_update_bound(dyn, lifted, P_plus, Q, Z, settings=None, fallback_point=None):
    """Upper bound on tr(P⁻_{k+1} Z) valid for every P⁺ in the interval."""
    settings = settings or SdpSettings()
    Zm = _zmat(Z)
    A, Bw = dyn.A, dyn.B_w
    n = A.shape[0]
    if Zm.shape != (n, n) or P_plus.n != n:
        raise ConfigurationError("selector / interval dimension mismatch")
    noise = float(np.trace(Bw @ Q @ Bw.T @ Zm))
    if dyn.is_linear or lifted is None:
        return BoundResult(noise + worst_case_linear_functional(A.T @ Zm @ A, P_plus))

    _check_lift(dyn, lifted)
    Bp, M = dyn.B_p, lifted.M
    Ph = _objective_point(P_plus, fallback_point)
    G = A @ Ph @ A.T
    G = G + _OBJ_REG * max(1.0, float(np.trace(G))) * np.eye(n)

    def lmi(Y, xi):
        D = Zm - Y
        return np.block([[A.T @ D @ A, A.T @ Zm @ Bp], [Bp.T @ Zm @ A, Bp.T @ Zm @ Bp]]) + xi * M

    problem = SdpProblem(n, G, [
        LmiConstraint(lambda Y, xi: Zm - Y, "Z-Y", strict=True),
        LmiConstraint(lmi, "time-update LMI"),
    ])
    sol = solve(problem, settings)
    if not sol.optimal:
        raise BoundUnavailableError(f"time-update SDP {sol.status}", status=sol.status)
    Y = 0.5 * (sol.Y_star + sol.Y_star.T)
    return BoundResult(noise + worst_case_linear_functional(A.T @ Y @ A, P_plus), sol, problem)


def measurement_update_bound(meas, lifted, K, P_minus, R, Z, settings=None, fallback_point=None):
    """Upper bound on tr(P⁺ Z) valid for every P⁻ in the interval."""
    settings = settings or SdpSettings()
    Zm = _zmat(Z)
    H, Bv = meas.H, meas.B_v
    n = H.shape[1]
    K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(n, -1)
    if Zm.shape != (n, n) or P_minus.n != n:
        raise ConfigurationError("selector / interval dimension mismatch")
    IKH = np.eye(n) - K @ H
    KBv = K @ Bv
    noise = float(np.trace(KBv @ R @ KBv.T @ Zm))
    C_lin = IKH.T @ Zm @ IKH
    if meas.is_linear or lifted is None:
        return BoundResult(noise + worst_case_linear_functional(C_lin, P_minus))

    _check_lift(meas, lifted)
    KBr = K @ meas.B_rho
    M = lifted.M
    off = H.T @ K.T @ Zm @ KBr - Zm @ KBr
    corner = KBr.T @ Zm @ KBr
    Ph = _objective_point(P_minus, fallback_point)
    G = Ph + _OBJ_REG * max(1.0, float(np.trace(Ph))) * np.eye(n)

    def lmi(Y, xi):
        return np.block([[-Y, off], [off.T, corner]]) + xi * M

    problem = SdpProblem(n, G, [LmiConstraint(lmi, "measurement-update LMI")])
    sol = solve(problem, settings)
    if not sol.optimal:
        raise BoundUnavailableError(f"measurement-update SDP {sol.status}", status=sol.status)
    Y = 0.5 * (sol.Y_star + sol.Y_star.T)
    return BoundResult(noise + worst_case_linear_functional(C_lin + Y, P_minus), sol, problem)


# ---------------------------------------------------------------------------
# whole-matrix propagation


@dataclass
class EntryRecord:
    i: int
    j: int
    lower: float
    upper: float
    status: str
    xi_star: float
    solve_time_ms: float
    certificate_max_eig: float = -np.inf
    error: Optional[str] = None


@dataclass
class Propagation:
    interval: CovarianceInterval
    entries: list = field(default_factory=list)

    @property
    def failed(self):
        return [e for e in self.entries if e.error is not None]


def _cert_eig(res, settings):
    if res.solution is None:
        return -np.inf
    cert = check_solution(res.problem, res.solution, settings.certificate_tol, settings.strict_margin)
    if not cert.passed:  # solve() already screens this; keep the guard explicit
        raise BoundUnavailableError("SDP solution failed its certificate", status="certificate")
    return max(cert.constraint_eigs.values())


def _tighten(L, U):
    """Sound tightenings: variances are >= 0 and |P_ij| <= sqrt(P_ii P_jj)."""
    n = L.shape[0]
    d = np.arange(n)
    L[d, d] = np.maximum(L[d, d], 0.0)
    with np.errstate(invalid="ignore"):
        s = np.sqrt(np.maximum(np.outer(np.diag(U), np.diag(U)), 0.0))
    off = ~np.eye(n, dtype=bool)
    U[off] = np.fmin(U[off], s[off])
    L[off] = np.fmax(L[off], -s[off])
    return L, U


def _propagate(bound_fn, n, k, phase, settings, continue_on_failure=False, executor=None):
    pairs = [(i, j) for i in range(n) for j in range(i, n)]

    def one(pair):
        i, j = pair
        out = {}
        for s in (1, -1):
            try:
                res = bound_fn(entry_selector(i, j, s, n))
                out[s] = (res, _cert_eig(res, settings), None)
            except BoundUnavailableError as exc:
                if not continue_on_failure:
                    exc.entry, exc.step, exc.phase = (i, j), k, phase
                    raise
                out[s] = (None, np.inf, exc.status or str(exc))
        return pair, out

    results = list(executor.map(one, pairs)) if executor is not None else [one(p) for p in pairs]

    L = np.full((n, n), -np.inf)
    U = np.full((n, n), np.inf)
    entries = []
    for (i, j), out in results:
        up, up_eig, up_err = out[1]
        lo, lo_eig, lo_err = out[-1]
        u = up.value if up is not None else np.inf
        lval = -lo.value if lo is not None else -np.inf
        if lval > u:
            if lval - u > INTERVAL_TOL * (1 + abs(u)):
                raise BoundUnavailableError(
                    f"inconsistent bounds for entry ({i}, {j}): lower {lval} > upper {u}",
                    entry=(i, j), step=k, phase=phase, status="inconsistent")
            lval, u = u, lval
        L[i, j] = L[j, i] = lval
        U[i, j] = U[j, i] = u
        statuses = {r.status for r in (up, lo) if r is not None}
        status = "failed" if (up_err or lo_err) else (statuses.pop() if len(statuses) == 1 else "mixed")
        entries.append(EntryRecord(
            i, j, lval, u, status,
            up.xi_star if up is not None else np.nan,
            sum(r.solve_time_ms for r in (up, lo) if r is not None),
            max(up_eig if up is not None else -np.inf, lo_eig if lo is not None else -np.inf),
            up_err or lo_err,
        ))
    L, U = _tighten(L, U)
    return Propagation(CovarianceInterval(L, U, k, phase), entries)


def propagate_time_interval(dyn, lifted, P_plus, Q, settings=None, k=None, fallback_point=None,
                            continue_on_failure=False, executor=None):
    settings = settings or SdpSettings()
    k = P_plus.k + 1 if k is None else k
    return _propagate(
        lambda Z: time_update_bound(dyn, lifted, P_plus, Q, Z, settings, fallback_point),
        dyn.A.shape[0], k, "prior", settings, continue_on_failure, executor,
    )


def propagate_measurement_interval(meas, lifted, K, P_minus, R, settings=None, k=None,
                                   fallback_point=None, continue_on_failure=False, executor=None):
    settings = settings or SdpSettings()
    k = P_minus.k if k is None else k
    return _propagate(
        lambda Z: measurement_update_bound(meas, lifted, K, P_minus, R, Z, settings, fallback_point),
        meas.H.shape[1], k, "posterior", settings, continue_on_failure, executor,
    )


def trace_bounds(phase, sign, *, dyn=None, meas=None, lifted=None, interval=None, Q=None, R=None,
                 K=None, settings=None, fallback_point=None):
    """Lower (sign -1) or upper (sign +1) bound on the trace after one update."""
    s = _sign(sign)
    if phase == "prior":
        Z = trace_selector(dyn.A.shape[0], s)
        res = time_update_bound(dyn, lifted, interval, Q, Z, settings, fallback_point)
    elif phase == "posterior":
        Z = trace_selector(meas.H.shape[1], s)
        res = measurement_update_bound(meas, lifted, K, interval, R, Z, settings, fallback_point)
    else:
        raise ValueError(f"phase must be 'prior' or 'posterior', got {phase!r}")
    return s * res.value


def assemble_psd_overbound(interval):
    """EXPERIMENTAL candidate Loewner overbound: midpoint + Gershgorin inflation.

    Dominance over the true covariance is not guaranteed; callers check it
    empirically.
    """
    interval.validate()
    hw = interval.half_width
    return interval.midpoint + np.diag(np.abs(hw).sum(axis=1))
