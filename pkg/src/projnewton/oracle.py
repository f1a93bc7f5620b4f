"""Dense brute-force solvers used only to check the iterative ones.

Everything here materializes the operators and works in the full space, with
its own penalty derivatives and linear solves, so agreement with the solvers
is evidence rather than a tautology. Not exported from the package namespace.
"""
from __future__ import annotations

import numpy as np

from .errors import DiscrepancyUnreachableError, InvalidDimensionError, OracleFailure
from .linop import to_dense
from .penalty import SmoothPenalty

MAX_DENSE = 512


def materialize(op, max_dim: int = MAX_DENSE) -> np.ndarray:
    if isinstance(op, np.ndarray):
        return np.asarray(op, dtype=np.float64)
    if max(op.nrows, op.ncols) > max_dim:
        raise InvalidDimensionError(f"{op.shape} too large for a dense oracle (limit {max_dim})")
    return to_dense(op, max_dim=max_dim)


def _dpsi(pen: SmoothPenalty, z):
    """Gradient and Hessian diagonal of the penalty, written out directly."""
    if pen.is_quadratic:
        return z.copy(), np.ones_like(z)
    q = pen.p / 2.0
    g = z * np.power(z * z + pen.beta, q - 1.0)
    h = np.power(z * z + pen.beta, q - 1.0) + 2.0 * (q - 1.0) * z * z * np.power(z * z + pen.beta, q - 2.0)
    return g, h


def dense_F(A, L, pen, b, sigma, x, lam) -> np.ndarray:
    A, L = materialize(A), materialize(L)
    r = A @ x - b
    g, _ = _dpsi(pen, L @ x)
    return np.concatenate([lam * (A.T @ r) + L.T @ g, [0.5 * r @ r - 0.5 * sigma ** 2]])


def dense_jacobian(A, L, pen, b, x, lam) -> np.ndarray:
    A, L = materialize(A), materialize(L)
    n = A.shape[1]
    _, h = _dpsi(pen, L @ x)
    c = A.T @ (A @ x - b)
    J = np.zeros((n + 1, n + 1))
    J[:n, :n] = lam * (A.T @ A) + L.T @ (h[:, None] * L)
    J[:n, n] = c
    J[n, :n] = c
    return J


def dense_merit_gradient(A, L, pen, b, sigma, x, lam) -> np.ndarray:
    """Gradient of ``0.5 ||F||^2`` at ``(x, lam)``, i.e. ``J^T F``."""
    return dense_jacobian(A, L, pen, b, x, lam).T @ dense_F(A, L, pen, b, sigma, x, lam)


def _unpack(problem_or_ops):
    p = problem_or_ops
    return materialize(p.A), materialize(p.L), np.asarray(p.b, dtype=np.float64), float(p.sigma)


def _objective(A, L, pen, b, lam, x):
    r = A @ x - b
    z = L @ x
    if pen.is_quadratic:
        psi = 0.5 * z @ z
    else:
        psi = np.sum(np.power(z * z + pen.beta, pen.p / 2.0)) / pen.p
    return 0.5 * lam * (r @ r) + psi


def penalized_minimizer(A, L, pen, b, lam: float, x0=None, max_iterations: int = 500):
    """Minimize ``lam/2 ||Ax-b||^2 + Psi(Lx)`` (strictly convex) by Newton with
    backtracking on the objective; stops once the gradient norm stagnates at
    rounding level and returns the iterate with the smallest gradient."""
    n = A.shape[1]
    x = np.zeros(n) if x0 is None else x0.copy()
    AtA, Atb = A.T @ A, A.T @ b
    best, best_g, stall = x, np.inf, 0
    for _ in range(max_iterations):
        g_psi, h = _dpsi(pen, L @ x)
        g = lam * (AtA @ x - Atb) + L.T @ g_psi
        gn = np.linalg.norm(g)
        if gn < 0.5 * best_g:
            stall = 0
        else:
            stall += 1
        if gn < best_g:
            best, best_g = x, gn
        if gn == 0.0 or stall >= 8:
            return best
        H = lam * AtA + L.T @ (h[:, None] * L)
        d = np.linalg.solve(H, -g)
        dec = -(g @ d)
        f0, t = _objective(A, L, pen, b, lam, x), 1.0
        while _objective(A, L, pen, b, lam, x + t * d) > f0 - 0.25 * t * dec and t > 1e-10:
            t *= 0.5
        x = x + t * d
    raise OracleFailure("inner Newton minimization did not converge")


def full_newton_solve(problem, pen: SmoothPenalty, lambda0: float = 1e5, tol: float = 1e-12,
                      max_iterations: int = 500, tau: float = 0.9, c: float = 1e-4):
    """Root of the full KKT system; returns ``(x, lam)`` with ``||F|| <= tol ||F(0, lambda0)||``.

    Damped Newton on F straight from ``x = 0`` can drive the Jacobian to
    numerical singularity on ill-conditioned blurs, so the start point comes
    from a continuation: bisection on ``log10(lam)`` with the penalized
    problem minimized exactly for each ``lam``. Damped Newton on F, with the
    positivity safeguard on lambda, then polishes the root.
    """
    A, L, b, sigma = _unpack(problem)
    n = A.shape[1]
    f0 = np.linalg.norm(dense_F(A, L, pen, b, sigma, np.zeros(n), lambda0))

    def mis(s, x0):
        x = penalized_minimizer(A, L, pen, b, 10.0 ** s, x0)
        return np.linalg.norm(A @ x - b) - sigma, x

    # scan upward: large lam makes the inner problem as ill-posed as plain least squares
    lo, x = -12.0, None
    f_lo, x = mis(lo, x)
    if not f_lo > 0:
        raise DiscrepancyUnreachableError("residual already below sigma for tiny lambda")
    hi = lo
    while True:
        hi += 1.0
        if hi > 16.0:
            raise DiscrepancyUnreachableError("discrepancy not bracketed in lambda")
        f_hi, x_hi = mis(hi, x)
        if f_hi < 0:
            break
        lo, x = hi, x_hi
    mid = hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f, x = mis(mid, x)
        if abs(f) <= 1e-10 * sigma or hi - lo < 1e-14:
            break
        if f > 0:
            lo = mid
        else:
            hi = mid
    lam = 10.0 ** mid
    F = dense_F(A, L, pen, b, sigma, x, lam)
    for _ in range(max_iterations):
        if np.linalg.norm(F) <= tol * f0:
            return x, lam
        J = dense_jacobian(A, L, pen, b, x, lam)
        try:
            d = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise OracleFailure(f"dense Jacobian singular: {exc}") from exc
        dx, dl = d[:n], d[n]
        step = 1.0 if lam + dl > 0 else -tau * lam / dl
        ff = F @ F
        while True:
            Fn = dense_F(A, L, pen, b, sigma, x + step * dx, lam + step * dl)
            if 0.5 * (Fn @ Fn) < (0.5 - c * step) * ff:
                break
            step *= tau
            if step < 1e-14:
                raise OracleFailure(f"dense Newton line search stalled at ||F|| = {np.sqrt(ff):.3e}")
        x, lam, F = x + step * dx, lam + step * dl, Fn
    if np.linalg.norm(F) <= tol * f0:
        return x, lam
    raise OracleFailure(f"dense Newton did not reach ||F|| <= {tol:g} ||F0|| in {max_iterations} iterations")


def _tik_solve(A, L, b, alpha):
    M = np.vstack([A, np.sqrt(alpha) * L])
    rhs = np.concatenate([b, np.zeros(L.shape[0])])
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


def tikhonov_discrepancy_bisect(A, L, b, sigma: float, tol: float = 1e-10,
                                lo: float = -16.0, hi: float = 16.0):
    """Plain bisection on ``log10(alpha)`` for ``||A x(alpha) - b|| = sigma``; returns ``(x, alpha)``."""
    A, L = materialize(A), materialize(L)
    b = np.asarray(b, dtype=np.float64)

    def mis(s):
        x = _tik_solve(A, L, b, 10.0 ** s)
        return np.linalg.norm(A @ x - b) - sigma, x

    f_lo, _ = mis(lo)
    f_hi, _ = mis(hi)
    if not (f_lo < 0 < f_hi):
        raise DiscrepancyUnreachableError(f"no bracket: mismatch {f_lo:.3e} at 1e{lo:g}, {f_hi:.3e} at 1e{hi:g}")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        f, x = mis(mid)
        if abs(f) <= tol * sigma or hi - lo < 1e-15:
            return x, 10.0 ** mid
        if f < 0:
            lo = mid
        else:
            hi = mid
    raise OracleFailure("bisection did not converge")


def lanczos_basis(A, b, k: int) -> np.ndarray:
    """Orthonormal basis of ``K_k(A^T A, A^T b)`` by Lanczos with full reorthogonalization."""
    A = materialize(A)
    M = A.T @ A
    n = M.shape[0]
    Q = np.zeros((n, k))
    q = A.T @ b
    Q[:, 0] = q / np.linalg.norm(q)
    for j in range(1, k):
        v = M @ Q[:, j - 1]
        for _ in range(2):
            v -= Q[:, :j] @ (Q[:, :j].T @ v)
        Q[:, j] = v / np.linalg.norm(v)
    return Q

