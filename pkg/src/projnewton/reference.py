"""Comparison solvers built on the same generalized Krylov machinery.

* GKS: general-form Tikhonov where every iterate satisfies the discrepancy
  principle exactly; the parameter is found by root finding on the projected
  problem at each iteration.
* GKSpq: the l1 penalty handled by iteratively reweighted norms at a fixed
  regularization parameter ``alpha``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DiscrepancyUnreachableError,
    InvalidInputError,
    InvalidParameterError,
    SingularSystemError,
)
from .gksubspace import CONVERGED_SUBSPACE, GKSubspace
from .problems import ProblemInstance
from .trace import NA, TraceRow

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
BUDGET_EXHAUSTED = "budget-exhausted"
SINGULAR_SYSTEM = "singular-system"

LOG_ALPHA_MIN = -16.0
LOG_ALPHA_MAX = 16.0
ROOT_TOL = 1e-10


@dataclass(frozen=True)
class GKSConfig:
    max_iterations: int = 100
    tol: float = 1e-6  # relative change in x
    l_start: int = 2
    budget_matvecs: int | None = None
    eta: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.l_start < 1:
            raise InvalidParameterError("max_iterations and l_start must be >= 1")


@dataclass(frozen=True)
class GKSpqConfig:
    max_iterations: int = 100
    budget_matvecs: int | None = None
    fixed_weights: bool = False  # W = I: plain projected Tikhonov at fixed alpha
    eta: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")


@dataclass
class RefResult:
    x: np.ndarray
    alpha: float
    status: str
    trace: list[TraceRow]
    iterations: int
    y: np.ndarray
    basis_dim: int
    qr_work: list[int] | None = None  # columns factored per iteration (GKSpq)
    V: np.ndarray | None = None

    @property
    def lam(self) -> float:
        return 1.0 / self.alpha


@dataclass(frozen=True)
class IRNWeights:
    w: np.ndarray
    tau_tilde: float

    def apply(self, v) -> np.ndarray:
        return self.w * v


def irn_weights(Lx, tau_tilde: float) -> IRNWeights:
    """``W_ii = 1 / sqrt(max(|[Lx]_i|, tau_tilde))``."""
    if not tau_tilde > 0:
        raise InvalidParameterError(f"tau_tilde must be positive, got {tau_tilde}")
    Lx = np.asarray(Lx, dtype=np.float64)
    return IRNWeights(1.0 / np.sqrt(np.maximum(np.abs(Lx), tau_tilde)), float(tau_tilde))


def _projected_tikhonov(R, RL, qtb, alpha: float) -> np.ndarray:
    """argmin ||R y - qtb||^2 + alpha ||RL y||^2 as a stacked least-squares problem."""
    k = R.shape[1]
    M = np.vstack([R, math.sqrt(alpha) * RL])
    rhs = np.concatenate([qtb, np.zeros(RL.shape[0])])
    y, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
    if rank < k:
        raise SingularSystemError(f"projected system has rank {rank} < {k}")
    return y


def _residual_sq(R, qtb, b_perp_sq: float, y) -> float:
    r = R @ y - qtb
    return float(r @ r) + b_perp_sq


def _sigma(problem: ProblemInstance, eta) -> float:
    return problem.sigma if eta is None else eta * problem.noise_norm


def _counts(A, L):
    return (A.forward_count, A.adjoint_count, L.forward_count, L.adjoint_count)


def gks_initial_basis(A, b, sigma: float, l_start: int = 2, L=None, seed: int = 0) -> GKSubspace:
    """Krylov basis of ``A^T A`` on ``A^T b``, doubled from ``l_start`` until the
    projected least-squares residual drops below ``sigma``."""
    b = np.asarray(b, dtype=np.float64)
    if not np.linalg.norm(b) > sigma:
        raise InvalidInputError("||b|| must exceed sigma")
    n, m = A.ncols, A.nrows
    sub = GKSubspace.init_basis(A, b, L, capacity=max(2 * l_start, 8), keep_atav=True,
                                keep_lv=L is not None, keep_ltlv=L is not None,
                                qr_lv=L is not None, seed=seed)
    sub.extend_caches()
    bb = float(b @ b)
    l = l_start
    lmax = min(m, n)
    while True:
        while sub.k < min(l, lmax):
            if sub.expand(sub.AtAV[:, -1]) == CONVERGED_SUBSPACE:
                break
        qtb = sub.qr_a.Q.T @ b
        if bb - float(qtb @ qtb) < sigma * sigma:
            return sub
        if sub.k >= lmax or sub.k < min(l, lmax):
            raise DiscrepancyUnreachableError(
                f"least-squares residual stays above sigma on a {sub.k}-dimensional Krylov space")
        l *= 2


def gks_alpha_root(R_A, R_L, qtb, b_perp_sq: float, sigma: float):
    """Find alpha with ``||A V y(alpha) - b|| = sigma`` on the projected problem.

    Brent's method (bisection safeguarding secant / inverse quadratic steps)
    on ``log10(alpha)`` in [-16, 16]. Returns ``(alpha, y)``.
    """
    s2 = sigma * sigma

    def phi(s):
        y = _projected_tikhonov(R_A, R_L, qtb, 10.0 ** s)
        return (_residual_sq(R_A, qtb, b_perp_sq, y) - s2) / s2

    lo, hi = phi(LOG_ALPHA_MIN), phi(LOG_ALPHA_MAX)
    if not (lo < 0 < hi):
        if lo == 0:
            return 10.0 ** LOG_ALPHA_MIN, _projected_tikhonov(R_A, R_L, qtb, 10.0 ** LOG_ALPHA_MIN)
        raise DiscrepancyUnreachableError(
            f"no sign change of the discrepancy function on [1e-16, 1e16] (phi = {lo:.3e}, {hi:.3e})")
    s = brentq(phi, LOG_ALPHA_MIN, LOG_ALPHA_MAX, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    alpha = 10.0 ** s
    return alpha, _projected_tikhonov(R_A, R_L, qtb, alpha)


def _row(method, k, F_norm, lam, mis, rel_dx, x, x_ex, counts, t0) -> TraceRow:
    err = NA
    if x_ex is not None and np.linalg.norm(x_ex) > 0:
        err = float(np.linalg.norm(x - x_ex) / np.linalg.norm(x_ex))
    return TraceRow(method, k, F_norm, lam, NA, 0, mis, NA, rel_dx, err, *counts,
                    time.perf_counter() - t0)


def solve_gks(problem: ProblemInstance, config: GKSConfig | None = None) -> RefResult:
    """Generalized Krylov subspace Tikhonov with the discrepancy enforced every iteration."""
    config = config or GKSConfig()
    A, L, b = problem.A, problem.L, problem.b
    sigma = _sigma(problem, config.eta)
    t0 = time.perf_counter()
    c0 = _counts(A, L)
    used = lambda: tuple(a - b_ for a, b_ in zip(_counts(A, L), c0))  # noqa: E731
    sub = gks_initial_basis(A, b, sigma, config.l_start, L, config.seed)
    bb = float(b @ b)
    trace: list[TraceRow] = []
    x_prev = None
    lam_prev = None
    status = MAX_ITERATIONS
    alpha, y, x = NA, np.zeros(0), np.zeros(A.ncols)
    for k in range(1, config.max_iterations + 1):
        if config.budget_matvecs is not None and sum(used()) >= config.budget_matvecs:
            status = BUDGET_EXHAUSTED
            break
        sub.extend_caches()
        Q, R = sub.qr_a.Q, sub.qr_a.R
        qtb = Q.T @ b
        b_perp_sq = max(bb - float(qtb @ qtb), 0.0)
        alpha, y = gks_alpha_root(R, sub.qr_l.R, qtb, b_perp_sq, sigma)
        x = sub.V @ y
        res = sub.AV @ y - b
        rn = float(np.linalg.norm(res))
        v_tilde = sub.AtAV @ y + alpha * (sub.LtLV @ y) - sub.atb
        F_norm = math.hypot(float(np.linalg.norm(v_tilde)) / alpha, 0.5 * (rn * rn - sigma * sigma))
        rel_dx = NA
        if x_prev is not None and np.linalg.norm(x_prev) > 0:
            rel_dx = float(np.linalg.norm(x - x_prev) / np.linalg.norm(x_prev))
        row = _row("gks", k, F_norm, 1.0 / alpha, rn - sigma, rel_dx, x, problem.x_ex, used(), t0)
        if lam_prev is not None:
            row.rel_dlambda = abs(row.lam - lam_prev) / lam_prev
        trace.append(row)
        lam_prev = row.lam
        if math.isfinite(rel_dx) and rel_dx <= config.tol:
            status = CONVERGED
            break
        if k == config.max_iterations:
            break
        if sub.orthogonalize(v_tilde) == CONVERGED_SUBSPACE:
            status = CONVERGED_SUBSPACE
            break
        x_prev = x
    return RefResult(x=x, alpha=alpha, status=status, trace=trace, iterations=len(trace), y=y,
                     basis_dim=sub.k, V=sub.V.copy())


def solve_gkspq(problem: ProblemInstance, alpha: float, tau_tilde: float = 1e-4,
                config: GKSpqConfig | None = None) -> RefResult:
    """Iteratively reweighted generalized Krylov method for ``||Ax-b||^2 + alpha ||Lx||_1``."""
    config = config or GKSpqConfig()
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    A, L, b = problem.A, problem.L, problem.b
    sigma = _sigma(problem, config.eta)
    t0 = time.perf_counter()
    c0 = _counts(A, L)
    used = lambda: tuple(a - b_ for a, b_ in zip(_counts(A, L), c0))  # noqa: E731
    sub = GKSubspace.init_basis(A, b, L, capacity=32, keep_atav=False, keep_lv=True, seed=config.seed)
    # x0 = 0, so every weight starts clamped
    W = irn_weights(np.zeros(L.nrows), tau_tilde).w
    if config.fixed_weights:
        W = np.ones(L.nrows)
    trace: list[TraceRow] = []
    qr_work: list[int] = []
    status = MAX_ITERATIONS
    x_prev, y, x = None, np.zeros(0), np.zeros(A.ncols)
    for k in range(1, config.max_iterations + 1):
        if config.budget_matvecs is not None and sum(used()) >= config.budget_matvecs:
            status = BUDGET_EXHAUSTED
            break
        sub.extend_caches()
        Q, R = sub.qr_a.Q, sub.qr_a.R
        WLV = W[:, None] * sub.LV
        Rbar = np.linalg.qr(WLV, mode="r")
        qr_work.append(sub.k)
        try:
            y = _projected_tikhonov(R, Rbar, Q.T @ b, alpha)
        except SingularSystemError:
            status = SINGULAR_SYSTEM
            break
        x = sub.V @ y
        lx = sub.LV @ y
        res = sub.AV @ y - b
        # residual of the weighted problem just solved, then the weights move on
        v_tilde = A.rmatvec(res) + alpha * L.rmatvec(W * W * lx)
        if not config.fixed_weights:
            W = irn_weights(lx, tau_tilde).w
        rel_dx = NA
        if x_prev is not None and np.linalg.norm(x_prev) > 0:
            rel_dx = float(np.linalg.norm(x - x_prev) / np.linalg.norm(x_prev))
        trace.append(_row("gkspq", k, NA, 1.0 / alpha, float(np.linalg.norm(res)) - sigma, rel_dx, x,
                          problem.x_ex, used(), t0))
        x_prev = x
        if k == config.max_iterations:
            break
        if sub.orthogonalize(v_tilde) == CONVERGED_SUBSPACE:
            status = CONVERGED_SUBSPACE
            break
    return RefResult(x=x, alpha=float(alpha), status=status, trace=trace, iterations=len(trace), y=y,
                     basis_dim=sub.k, qr_work=qr_work, V=sub.V.copy())
