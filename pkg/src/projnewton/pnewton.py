"""Projected Newton solver for the discrepancy-constrained penalized problem.

We look for ``(x, lam)`` with ``lam > 0`` solving the KKT system

    F(x, lam) = ( lam A^T (A x - b) + L^T grad Psi~(L x) ;  0.5 ||A x - b||^2 - 0.5 sigma^2 ) = 0

by Newton steps restricted to a generalized Krylov subspace that grows by one
vector per iteration (the first block of ``F`` at the current iterate). The
projected Jacobian is a small ``(k+1) x (k+1)`` saddle-point matrix, globalized
by Armijo backtracking on ``0.5 ||F||^2``.

Two modes share the loop:

* ``general`` works for any smooth penalty and needs one ``L^T`` per line
  search trial;
* ``tikhonov`` (quadratic penalty only) also caches ``L^T L V`` and the QR
  factors of ``L V`` so that the line search needs no operator applications.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import (
    InvalidDimensionError,
    InvalidInputError,
    InvalidParameterError,
    LineSearchError,
    SingularJacobianError,
)
from .gksubspace import CONVERGED_SUBSPACE, GKSubspace
from .linop import LinearOperator
from .penalty import SmoothPenalty, psi_gradient, psi_hessian_diag
from .problems import ProblemInstance
from .trace import NA, TraceRow

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
SINGULAR_JACOBIAN = "singular-jacobian"
LINE_SEARCH_FAILURE = "line-search-failure"
BUDGET_EXHAUSTED = "budget-exhausted"
USER_STOP = "user-stop"
SUBSPACE_CONVERGED = CONVERGED_SUBSPACE

GENERAL = "general"
TIKHONOV = "tikhonov"

# canonical stop-rule names and their short aliases
STOP_RULES = {
    "kkt-norm": "kkt-norm", "kkt": "kkt-norm",
    "discrepancy-mismatch": "discrepancy-mismatch", "discrepancy": "discrepancy-mismatch",
    "lambda-rel-change": "lambda-rel-change", "dlambda": "lambda-rel-change",
    "x-rel-change": "x-rel-change", "dx": "x-rel-change",
}

SOLVE_RTOL = 1e-10


@dataclass(frozen=True)
class PNConfig:
    """Solver settings. The penalty (``p``, ``beta``) is passed separately."""

    lambda0: float = 1e5
    tau: float = 0.9
    c: float = 1e-4
    eta: float | None = None
    max_iterations: int = 500
    gamma_min: float = 1e-12
    stop_rule: str = "discrepancy-mismatch"
    tol: float = 1e-6
    mode: str = "auto"
    budget_matvecs: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not (self.lambda0 > 0 and math.isfinite(self.lambda0)):
            raise InvalidParameterError(f"lambda0 must be positive, got {self.lambda0}")
        if not 0 < self.tau < 1:
            raise InvalidParameterError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0 < self.c < 1:
            raise InvalidParameterError(f"c must lie in (0, 1), got {self.c}")
        if self.eta is not None and not self.eta >= 1:
            raise InvalidParameterError(f"eta must be >= 1, got {self.eta}")
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if not self.gamma_min > 0:
            raise InvalidParameterError("gamma_min must be positive")
        if self.stop_rule not in STOP_RULES:
            raise InvalidParameterError(f"unknown stop rule {self.stop_rule!r}")
        object.__setattr__(self, "stop_rule", STOP_RULES[self.stop_rule])
        if not self.tol >= 0:
            raise InvalidParameterError("tol must be >= 0")
        if self.mode not in ("auto", GENERAL, TIKHONOV):
            raise InvalidParameterError(f"unknown mode {self.mode!r}")
        if self.budget_matvecs is not None and self.budget_matvecs < 1:
            raise InvalidParameterError("budget_matvecs must be positive")


@dataclass
class PNState:
    y: np.ndarray
    lam: float
    gamma: float
    z: np.ndarray | None
    t: np.ndarray
    w: np.ndarray
    u: np.ndarray | None
    F: np.ndarray
    v_tilde: np.ndarray
    backtrack_count: int = 0

    @property
    def F_norm(self) -> float:
        return float(np.linalg.norm(self.F))


@dataclass
class StepRecord:
    """What one iteration did, kept for diagnostics and tests."""

    k: int
    ybar: np.ndarray
    lam_prev: float
    F_prev: np.ndarray
    J: np.ndarray
    rhs: np.ndarray
    dy: np.ndarray
    dlam: float
    gamma: float
    n_backtracks: int


@dataclass
class PNResult:
    x: np.ndarray
    lam: float
    status: str
    trace: list[TraceRow]
    y: np.ndarray
    iterations: int
    mode: str
    message: str = ""

    @property
    def alpha(self) -> float:
        return 1.0 / self.lam

    @property
    def F_norm(self) -> float:
        return self.trace[-1].F_norm


def kkt_residual(b, sigma: float, lam: float, t, w, atb, *, L: LinearOperator | None = None,
                 pen: SmoothPenalty | None = None, z=None, u=None):
    """``F`` and its first block ``v_tilde`` from the auxiliaries of some x.

    ``t = A x``, ``w = A^T A x`` and either ``u = L^T L x`` (no operator
    applications) or ``z = L x`` together with ``L`` and ``pen`` (one ``L^T``).
    """
    if u is not None:
        reg = u
    else:
        if L is None or pen is None or z is None:
            raise InvalidInputError("need either u or (L, pen, z)")
        reg = L.rmatvec(psi_gradient(pen, z))
    v_tilde = lam * (w - atb) + reg
    r = t - b
    F = np.empty(v_tilde.size + 1)
    F[:-1] = v_tilde
    F[-1] = 0.5 * float(r @ r) - 0.5 * sigma * sigma
    return F, v_tilde


def assemble_projected_system(lam: float, RtR, ybar, d, reg_hessian, reg_gradient,
                              constraint: float):
    """Projected Jacobian and right-hand side ``-F^(k)``.

    ``RtR = (AV)^T AV``, ``reg_hessian = (LV)^T diag(Psi~'') (LV)`` and
    ``reg_gradient = (LV)^T grad Psi~`` at the previous iterate;
    ``constraint = 0.5 ||t - b||^2 - 0.5 sigma^2``.
    """
    k = len(ybar)
    g = RtR @ ybar - d
    J = np.zeros((k + 1, k + 1))
    J[:k, :k] = lam * RtR + reg_hessian
    J[:k, :k] = 0.5 * (J[:k, :k] + J[:k, :k].T)
    J[:k, k] = g
    J[k, :k] = g
    rhs = np.empty(k + 1)
    rhs[:k] = -(lam * g + reg_gradient)
    rhs[k] = -constraint
    return J, rhs


def newton_direction(J, rhs) -> tuple[np.ndarray, float]:
    """Solve the saddle-point system by LU with partial pivoting."""
    J = np.asarray(J, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(rhs))):
        raise SingularJacobianError("projected system has non-finite entries")
    if not np.any(rhs):
        return np.zeros(len(rhs) - 1), 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(J, check_finite=False)
    if np.any(np.diag(lu) == 0.0):
        raise SingularJacobianError("projected Jacobian is exactly singular")
    sol = sla.lu_solve((lu, piv), rhs, check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise SingularJacobianError("projected Newton direction is not finite")
    res = np.linalg.norm(J @ sol - rhs)
    scale = np.linalg.norm(J, 1) * np.linalg.norm(sol) + np.linalg.norm(rhs)
    if res > SOLVE_RTOL * scale:
        raise SingularJacobianError(f"projected solve residual {res / scale:.3e} exceeds {SOLVE_RTOL:g}")
    return sol[:-1], float(sol[-1])


def line_search(F_prev_norm: float, lam_prev: float, dlam: float,
                trial: Callable[[float], np.ndarray], tau: float = 0.9, c: float = 1e-4,
                gamma_min: float = 1e-12):
    """Armijo backtracking on ``0.5 ||F||^2`` with the positivity safeguard on lambda.

    ``trial(gamma)`` evaluates F at the trial point. Returns
    ``(gamma, n_reductions, F)``.
    """
    gamma = 1.0
    if lam_prev + dlam <= 0:
        gamma = -tau * lam_prev / dlam
    if gamma < gamma_min:
        raise LineSearchError(f"positivity safeguard forces step {gamma:.3e} below {gamma_min:g}",
                              F_norm=F_prev_norm)
    ref = F_prev_norm * F_prev_norm
    n_red = 0
    F = trial(gamma)
    while 0.5 * float(F @ F) >= (0.5 - c * gamma) * ref:
        gamma *= tau
        n_red += 1
        if gamma < gamma_min:
            raise LineSearchError(f"step length fell below {gamma_min:g}", F_norm=F_prev_norm)
        F = trial(gamma)
    return gamma, n_red, F


def _counts(A, L):
    return (A.forward_count, A.adjoint_count, L.forward_count, L.adjoint_count)


class ProjectedNewton:
    """Stateful solver; :meth:`step` runs one iteration, :meth:`run` loops.

    ``callback(solver, row)`` is called after every iteration; returning True
    stops the run with status ``user-stop``.
    """

    def __init__(self, A: LinearOperator, L: LinearOperator, b, sigma: float,
                 pen: SmoothPenalty, config: PNConfig | None = None, x_ex=None,
                 callback=None, method: str | None = None):
        self.config = config = config or PNConfig()
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (A.nrows,) or L.ncols != A.ncols:
            raise InvalidDimensionError("A, L and b do not conform")
        if not float(np.linalg.norm(b)) > sigma:
            raise InvalidInputError("||b|| must exceed sigma")
        mode = config.mode
        if mode == "auto":
            mode = TIKHONOV if pen.is_quadratic else GENERAL
        if mode == TIKHONOV and not pen.is_quadratic:
            raise InvalidParameterError("tikhonov mode needs the quadratic penalty")
        self.A, self.L, self.b, self.sigma, self.pen = A, L, b, float(sigma), pen
        self.mode = mode
        self.method = method or ("pn-tik" if mode == TIKHONOV else "pn")
        self.x_ex = None if x_ex is None else np.asarray(x_ex, dtype=np.float64)
        self.callback = callback
        self._t0 = time.perf_counter()
        self._c0 = _counts(A, L)
        tik = mode == TIKHONOV
        cap = min(A.ncols, config.max_iterations) + 1
        self.basis = GKSubspace.init_basis(A, b, L, capacity=min(cap, 64), keep_atav=True,
                                           keep_lv=True, keep_ltlv=tik, qr_lv=tik, seed=config.seed)
        atb = self.basis.atb
        lam0 = config.lambda0
        F0 = np.empty(A.ncols + 1)
        F0[:-1] = -lam0 * atb
        F0[-1] = 0.5 * float(b @ b) - 0.5 * self.sigma ** 2
        self.state = PNState(y=np.zeros(0), lam=lam0, gamma=NA, z=None if tik else np.zeros(L.nrows),
                             t=np.zeros(A.nrows), w=np.zeros(A.ncols), u=np.zeros(A.ncols) if tik else None,
                             F=F0, v_tilde=F0[:-1].copy())
        self.k = 0
        self.status: str | None = None
        self.message = ""
        self.last_step: StepRecord | None = None
        self.trace: list[TraceRow] = [self._row(NA, 0, NA, NA)]

    @classmethod
    def from_problem(cls, problem: ProblemInstance, pen: SmoothPenalty,
                     config: PNConfig | None = None, **kw) -> "ProjectedNewton":
        config = config or PNConfig()
        sigma = problem.sigma
        if config.eta is not None:
            sigma = config.eta * problem.noise_norm
        return cls(problem.A, problem.L, problem.b, sigma, pen, config, x_ex=problem.x_ex, **kw)

    @property
    def x(self) -> np.ndarray:
        y = self.state.y
        return self.basis.V[:, : y.size] @ y

    @property
    def done(self) -> bool:
        return self.status is not None

    def matvecs_used(self) -> tuple[int, int, int, int]:
        now = _counts(self.A, self.L)
        return tuple(a - b for a, b in zip(now, self._c0))

    def _row(self, gamma, n_red, rel_dlam, rel_dx) -> TraceRow:
        st = self.state
        mis = float(np.linalg.norm(st.t - self.b)) - self.sigma
        err = NA
        if self.x_ex is not None:
            nx = np.linalg.norm(self.x_ex)
            err = float(np.linalg.norm(self.x - self.x_ex) / nx) if nx > 0 else NA
        ca, cat, cl, clt = self.matvecs_used()
        return TraceRow(self.method, self.k, st.F_norm, st.lam, gamma, n_red, mis, rel_dlam, rel_dx,
                        err, ca, cat, cl, clt, time.perf_counter() - self._t0)

    def _stop_satisfied(self, row: TraceRow) -> bool:
        rule, tol = self.config.stop_rule, self.config.tol
        val = {"kkt-norm": row.F_norm, "discrepancy-mismatch": row.discrepancy_mismatch,
               "lambda-rel-change": row.rel_dlambda, "x-rel-change": row.rel_dx}[rule]
        return math.isfinite(val) and abs(val) <= tol

    def _trial_factory(self, ybar, dy, lam_prev, dlam):
        """Closure evaluating F along the search ray by vector recurrences only."""
        bs, st = self.basis, self.state
        dt, dw = bs.AV @ dy, bs.AtAV @ dy
        if self.mode == TIKHONOV:
            du = bs.LtLV @ dy
        else:
            dz = bs.LV @ dy
        t0, w0 = st.t, st.w
        cache = {}

        def trial(gamma):
            t = t0 + gamma * dt
            w = w0 + gamma * dw
            lam = lam_prev + gamma * dlam
            if self.mode == TIKHONOV:
                u = st.u + gamma * du
                F, vt = kkt_residual(self.b, self.sigma, lam, t, w, bs.atb, u=u)
                cache.update(z=None, u=u)
            else:
                z = st.z + gamma * dz
                F, vt = kkt_residual(self.b, self.sigma, lam, t, w, bs.atb, L=self.L, pen=self.pen, z=z)
                cache.update(z=z, u=None)
            cache.update(gamma=gamma, t=t, w=w, lam=lam, F=F, vt=vt)
            return F

        return trial, cache

    def step(self) -> bool:
        """One iteration. Returns False once the run has terminated."""
        if self.done:
            return False
        cfg = self.config
        if cfg.budget_matvecs is not None and sum(self.matvecs_used()) >= cfg.budget_matvecs:
            self.status = BUDGET_EXHAUSTED
            return False
        st, bs = self.state, self.basis
        bs.extend_caches()
        k = bs.n_cached
        ybar = np.zeros(k)
        ybar[: st.y.size] = st.y
        RtR = bs.qr_a.gram
        if self.mode == TIKHONOV:
            H = bs.qr_l.gram
            G = H @ ybar
        else:
            LV = bs.LV
            H = LV.T @ (psi_hessian_diag(self.pen, st.z)[:, None] * LV)
            G = LV.T @ psi_gradient(self.pen, st.z)
        r = st.t - self.b
        constraint = 0.5 * float(r @ r) - 0.5 * self.sigma ** 2
        J, rhs = assemble_projected_system(st.lam, RtR, ybar, bs.d[:k], H, G, constraint)
        try:
            if not np.any(J[:k, k]):
                raise SingularJacobianError("R^T R ybar - d vanishes; projected Jacobian is singular")
            dy, dlam = newton_direction(J, rhs)
            trial, cache = self._trial_factory(ybar, dy, st.lam, dlam)
            gamma, n_red, _ = line_search(st.F_norm, st.lam, dlam, trial, cfg.tau, cfg.c, cfg.gamma_min)
        except SingularJacobianError as exc:
            self.status, self.message = SINGULAR_JACOBIAN, str(exc)
            return False
        except LineSearchError as exc:
            self.status, self.message = LINE_SEARCH_FAILURE, str(exc)
            return False
        self.k += 1
        self.last_step = StepRecord(self.k, ybar, st.lam, st.F.copy(), J, rhs, dy, dlam, gamma, n_red)
        lam_prev = st.lam
        ynorm = float(np.linalg.norm(ybar))
        self.state = PNState(y=ybar + gamma * dy, lam=cache["lam"], gamma=gamma, z=cache["z"],
                             t=cache["t"], w=cache["w"], u=cache["u"], F=cache["F"],
                             v_tilde=cache["vt"], backtrack_count=n_red)
        rel_dlam = abs(self.state.lam - lam_prev) / abs(lam_prev)
        rel_dx = gamma * float(np.linalg.norm(dy)) / ynorm if ynorm > 0 else NA
        row = self._row(gamma, n_red, rel_dlam, rel_dx)
        self.trace.append(row)
        if self._stop_satisfied(row):
            self.status = CONVERGED
            return False
        if self.callback is not None and self.callback(self, row):
            self.status = USER_STOP
            return False
        if self.k >= cfg.max_iterations:
            self.status = MAX_ITERATIONS
            return False
        if bs.orthogonalize(self.state.v_tilde) == CONVERGED_SUBSPACE:
            self.status = SUBSPACE_CONVERGED
            return False
        return True

    def run(self) -> PNResult:
        while self.step():
            pass
        return self.result()

    def result(self) -> PNResult:
        return PNResult(x=self.x, lam=self.state.lam, status=self.status or "running",
                        trace=list(self.trace), y=self.state.y.copy(), iterations=self.k,
                        mode=self.mode, message=self.message)


def solve_projected_newton(problem: ProblemInstance, pen: SmoothPenalty,
                           config: PNConfig | None = None, callback=None) -> PNResult:
    """Run the solver on ``problem`` until its stop rule, a budget, or a failure status."""
    return ProjectedNewton.from_problem(problem, pen, config, callback=callback).run()


def with_updates(config: PNConfig, **kw) -> PNConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
