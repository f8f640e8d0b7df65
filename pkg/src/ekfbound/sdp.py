"""
Small SDP adapter for the bound problems.

Decision variables are a symmetric ``Y`` (n x n) and a scalar ``ξ >= 0``.
Constraints are affine matrix maps ``F(Y, ξ) ⪯ 0`` given as plain callables;
their coefficients are recovered by evaluating on a basis, which keeps the
call sites readable (they write each LMI in its block form).
Backed by CVXOPT's primal-dual conic solver.
"""
import time
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np
from cvxopt import matrix, solvers

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class SdpSettings:
    feastol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    strict_margin: float = 1e-9
    certificate_tol: float = 1e-7


@dataclass
class LmiConstraint:
    """``fn(Y, xi) ⪯ 0`` (or ``⪯ -margin I`` when strict)."""

    fn: Callable
    name: str = "lmi"
    strict: bool = False


@dataclass
class SdpProblem:
    n: int
    objective: np.ndarray
    lmi_constraints: List[LmiConstraint] = field(default_factory=list)

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.objective, dtype=float))
        if G.shape != (self.n, self.n):
            raise ValueError(f"objective must be {self.n}x{self.n}")
        self.objective = 0.5 * (G + G.T)

    def objective_value(self, Y):
        return float(np.trace(self.objective @ Y))


@dataclass
class SdpSolution:
    status: str
    Y_star: np.ndarray
    xi_star: float
    objective_value: float
    max_constraint_eig: float
    iterations: int = 0
    solve_time_ms: float = 0.0
    solver_status: str = ""

    @property
    def optimal(self):
        return self.status == OPTIMAL


@dataclass
class Certificate:
    constraint_eigs: dict
    xi_star: float
    tol: float

    @property
    def passed(self):
        return self.xi_star >= -self.tol and all(v <= self.tol for v in self.constraint_eigs.values())


def _sym_basis(n):
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def _from_coords(y, basis, n):
    Y = np.zeros((n, n))
    for c, E in zip(y, basis):
        Y += c * E
    return Y


def constraint_residual(con, Y, xi, margin):
    F = np.asarray(con.fn(Y, xi), dtype=float)
    F = 0.5 * (F + F.T)
    if con.strict:
        F = F + margin * np.eye(F.shape[0])
    return F


def check_solution(problem, solution, tol=1e-7, margin=SdpSettings.strict_margin):
    eigs = {}
    for k, con in enumerate(problem.lmi_constraints):
        F = constraint_residual(con, solution.Y_star, solution.xi_star, margin)
        eigs[f"{k}:{con.name}"] = float(np.linalg.eigvalsh(F).max())
    return Certificate(eigs, float(solution.xi_star), tol)


def solve(problem, settings=None):
    settings = settings or SdpSettings()
    n = problem.n
    basis = _sym_basis(n)
    nvar = len(basis) + 1  # last coordinate is ξ

    c = np.array([np.trace(problem.objective @ E) for E in basis] + [0.0])
    Gs, hs = [], []
    zero = np.zeros((n, n))
    for con in problem.lmi_constraints:
        F0 = constraint_residual(con, zero, 0.0, settings.strict_margin)
        cols = [constraint_residual(con, E, 0.0, settings.strict_margin) - F0 for E in basis]
        cols.append(constraint_residual(con, zero, 1.0, settings.strict_margin) - F0)
        Gs.append(matrix(np.column_stack([C.ravel(order="F") for C in cols])))
        hs.append(matrix(-F0))
    Gmat = np.vstack([np.array(G) for G in Gs]) if Gs else np.zeros((0, nvar))
    # coordinates that no LMI touches (ξ always has its sign constraint)
    active = np.any(Gmat != 0.0, axis=0)
    active[-1] = True
    if np.any(c[~active] != 0.0):
        return SdpSolution(NUMERICAL_FAILURE, np.full((n, n), np.nan), np.nan, -np.inf, np.inf,
                           solver_status="unbounded")
    c = c[active]
    Gs = [matrix(np.array(G)[:, active]) for G in Gs]
    Gl = np.zeros((1, int(active.sum())))
    Gl[0, -1] = -1.0

    opts = dict(
        show_progress=False,
        maxiters=settings.max_iters,
        abstol=settings.gap_tol,
        reltol=settings.gap_tol,
        feastol=settings.feastol,
    )
    t0 = time.perf_counter()
    try:
        sol = solvers.sdp(matrix(c), Gl=matrix(Gl), hl=matrix([0.0]), Gs=Gs, hs=hs, options=opts)
    except (ArithmeticError, ValueError):
        return SdpSolution(NUMERICAL_FAILURE, np.full((n, n), np.nan), np.nan, np.nan, np.inf,
                           solve_time_ms=1e3 * (time.perf_counter() - t0), solver_status="exception")
    elapsed = 1e3 * (time.perf_counter() - t0)

    raw = sol["status"]
    if sol["x"] is None:
        status = INFEASIBLE if raw == "primal infeasible" else NUMERICAL_FAILURE
        return SdpSolution(status, np.full((n, n), np.nan), np.nan, np.nan, np.inf,
                           sol.get("iterations", 0), elapsed, raw)

    x = np.zeros(nvar)
    x[active] = np.array(sol["x"]).ravel()
    Y = _from_coords(x[:-1], basis, n)
    xi = float(x[-1])
    out = SdpSolution(OPTIMAL, Y, xi, problem.objective_value(Y), 0.0, sol.get("iterations", 0), elapsed, raw)
    cert = check_solution(problem, out, settings.certificate_tol, settings.strict_margin)
    out.max_constraint_eig = max(cert.constraint_eigs.values(), default=-np.inf)

    if raw == "optimal":
        pass
    elif raw == "primal infeasible":
        out.status = INFEASIBLE
    elif raw == "unknown" and _nearly_optimal(sol, settings) and cert.passed:
        # cvxopt stalls on degenerate instances (e.g. flat objectives) after
        # having reached a feasible, near-optimal point
        pass
    else:
        out.status = NUMERICAL_FAILURE
    if out.status == OPTIMAL and not cert.passed:
        out.status = NUMERICAL_FAILURE
    return out


def _nearly_optimal(sol, settings):
    pres = sol.get("primal infeasibility")
    gap = sol.get("gap")
    relgap = sol.get("relative gap")
    if pres is None or gap is None:
        return False
    gap_ok = abs(gap) <= 1e3 * settings.gap_tol or (relgap is not None and abs(relgap) <= 1e3 * settings.gap_tol)
    return pres <= 10 * settings.feastol and gap_ok
