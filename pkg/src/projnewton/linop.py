"""Linear operators with forward/adjoint application counters.

Every solver in this package touches ``A`` and ``L`` only through
:meth:`LinearOperator.matvec` and :meth:`LinearOperator.rmatvec`, so the
counters give an exact, hardware-independent measure of the work done.
"""
from __future__ import annotations

import threading
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import InvalidDimensionError, InvalidParameterError


class LinearOperator:
    """Abstract map ``R^ncols -> R^nrows`` with an explicit adjoint.

    Subclasses implement ``_matvec`` and ``_rmatvec``. Public calls go through
    :meth:`matvec` / :meth:`rmatvec`, which validate shapes and bump the
    counters by exactly one.
    """

    def __init__(self, nrows: int, ncols: int, name: str = ""):
        if nrows < 1 or ncols < 1:
            raise InvalidDimensionError(f"operator shape must be positive, got {(nrows, ncols)}")
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.name = name or type(self).__name__
        self._lock = threading.Lock()
        self._forward_count = 0
        self._adjoint_count = 0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def forward_count(self) -> int:
        return self._forward_count

    @property
    def adjoint_count(self) -> int:
        return self._adjoint_count

    def reset_counters(self) -> None:
        with self._lock:
            self._forward_count = 0
            self._adjoint_count = 0

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.ncols,):
            raise InvalidDimensionError(f"{self.name}: expected vector of length {self.ncols}, got {x.shape}")
        with self._lock:
            self._forward_count += 1
        return self._matvec(x)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.nrows,):
            raise InvalidDimensionError(f"{self.name}: expected vector of length {self.nrows}, got {y.shape}")
        with self._lock:
            self._adjoint_count += 1
        return self._rmatvec(y)

    def __matmul__(self, x):
        return self.matvec(x)

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _rmatvec(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{self.name} {self.nrows}x{self.ncols}>"


class DenseOperator(LinearOperator):
    """Explicit dense matrix (row-major float64)."""

    def __init__(self, matrix, name: str = "dense"):
        mat = np.ascontiguousarray(matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise InvalidDimensionError("dense operator needs a 2-d array")
        if not np.all(np.isfinite(mat)):
            raise InvalidParameterError("dense operator entries must be finite")
        super().__init__(*mat.shape, name=name)
        self.matrix = mat

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self.matrix.T @ y


class SparseOperator(LinearOperator):
    """CSR sparse matrix; column indices are kept sorted within each row."""

    def __init__(self, matrix, name: str = "sparse"):
        mat = sp.csr_matrix(matrix, dtype=np.float64)
        mat.sum_duplicates()
        mat.sort_indices()
        mat.check_format(full_check=True)
        if not np.all(np.isfinite(mat.data)):
            raise InvalidParameterError("sparse operator entries must be finite")
        super().__init__(*mat.shape, name=name)
        self.matrix = mat
        self._matrix_t = mat.T.tocsr()

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def data(self) -> np.ndarray:
        return self.matrix.data

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self._matrix_t @ y


class FunctionOperator(LinearOperator):
    """Matrix-free operator defined by a pair of callables."""

    def __init__(self, nrows: int, ncols: int,
                 forward: Callable[[np.ndarray], np.ndarray],
                 adjoint: Callable[[np.ndarray], np.ndarray],
                 name: str = "function"):
        super().__init__(nrows, ncols, name=name)
        self._forward = forward
        self._adjoint = adjoint

    def _matvec(self, x):
        return self._forward(x)

    def _rmatvec(self, y):
        return self._adjoint(y)


def _diff(x: np.ndarray) -> np.ndarray:
    return x[:-1] - x[1:]


def _diff_adjoint(y: np.ndarray) -> np.ndarray:
    out = np.zeros(y.shape[0] + 1)
    out[:-1] += y
    out[1:] -= y
    return out


def fd1d(n: int) -> LinearOperator:
    """Forward difference operator of shape ``(n-1, n)``, row i: ``x_i - x_{i+1}``."""
    if n < 2:
        raise InvalidDimensionError(f"fd1d needs n >= 2, got {n}")
    return FunctionOperator(n - 1, n, _diff, _diff_adjoint, name=f"fd1d({n})")


def tv2d_operator(N: int) -> LinearOperator:
    """Stacked horizontal/vertical difference operator for column-stacked N x N images.

    The first ``N*N - N`` rows apply ``kron(D, I_N)`` and the remaining rows
    apply ``kron(I_N, D)``, with ``D = fd1d(N)``. No explicit Kronecker product
    is ever formed.
    """
    if N < 2:
        raise InvalidDimensionError(f"tv2d_operator needs N >= 2, got {N}")
    n = N * N
    nh = n - N

    def forward(x):
        X = x.reshape(N, N, order="F")
        dh = (X[:, :-1] - X[:, 1:]).ravel(order="F")
        dv = (X[:-1, :] - X[1:, :]).ravel(order="F")
        return np.concatenate([dh, dv])

    def adjoint(y):
        H = y[:nh].reshape(N, N - 1, order="F")
        Vd = y[nh:].reshape(N - 1, N, order="F")
        X = np.zeros((N, N))
        X[:, :-1] += H
        X[:, 1:] -= H
        X[:-1, :] += Vd
        X[1:, :] -= Vd
        return X.ravel(order="F")

    return FunctionOperator(2 * n - 2 * N, n, forward, adjoint, name=f"tv2d({N})")


def identity_operator(n: int) -> LinearOperator:
    if n < 1:
        raise InvalidDimensionError(f"identity needs n >= 1, got {n}")
    return FunctionOperator(n, n, lambda x: x.copy(), lambda y: y.copy(), name=f"identity({n})")


def gaussian_kernel_matrix(n: int, bandwidth: float) -> np.ndarray:
    """Symmetric, row-stochastic Gaussian smoothing matrix.

    The raw kernel ``exp(-((i - j) / (bandwidth * n))**2)`` is balanced by a
    symmetric diagonal scaling ``D K D`` (Sinkhorn-Knopp), so the result is
    both symmetric and has unit row sums, including near the boundary.
    """
    if n < 2:
        raise InvalidDimensionError(f"blur needs n >= 2, got {n}")
    if not bandwidth > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {bandwidth}")
    idx = np.arange(n, dtype=np.float64)
    K = np.exp(-(((idx[:, None] - idx[None, :]) / (bandwidth * n)) ** 2))
    d = 1.0 / np.sqrt(K.sum(axis=1))
    for _ in range(10000):
        d = np.sqrt(d / (K @ d))
        if np.max(np.abs(d * (K @ d) - 1.0)) < 1e-15:
            break
    M = d[:, None] * K * d[None, :]
    M = 0.5 * (M + M.T)
    # final row rescale then re-symmetrise; both perturb at the 1e-16 level
    M /= M.sum(axis=1, keepdims=True)
    return 0.5 * (M + M.T)


def gaussian_blur_1d(n: int, bandwidth: float) -> DenseOperator:
    return DenseOperator(gaussian_kernel_matrix(n, bandwidth), name=f"blur1d({n},{bandwidth:g})")


def gaussian_blur_2d(N: int, bandwidth: float) -> LinearOperator:
    """Separable blur ``kron(B, B)`` acting on column-stacked N x N images."""
    B = gaussian_kernel_matrix(N, bandwidth)

    def forward(x):
        X = x.reshape(N, N, order="F")
        return (B @ X @ B.T).ravel(order="F")

    def adjoint(y):
        Y = y.reshape(N, N, order="F")
        return (B.T @ Y @ B).ravel(order="F")

    op = FunctionOperator(N * N, N * N, forward, adjoint, name=f"blur2d({N},{bandwidth:g})")
    op.kernel = B
    return op


def to_dense(op: LinearOperator, max_dim: int = 4096) -> np.ndarray:
    """Materialize ``op`` column by column without touching its counters."""
    if isinstance(op, DenseOperator):
        return op.matrix.copy()
    if isinstance(op, SparseOperator):
        return op.matrix.toarray()
    if max(op.shape) > max_dim:
        raise InvalidDimensionError(f"refusing to materialize {op.shape} operator (max_dim={max_dim})")
    out = np.empty(op.shape)
    e = np.zeros(op.ncols)
    for j in range(op.ncols):
        e[j] = 1.0
        out[:, j] = op._matvec(e)
        e[j] = 0.0
    return out


def adjoint_mismatch(op: LinearOperator, rng: np.random.Generator) -> tuple[float, float]:
    """Return ``(|<Au, v> - <u, A^T v>|, ||u|| ||v|| ||A||_F-estimate)`` for random u, v.

    The Frobenius norm is estimated from a handful of Gaussian probes
    (``E ||A g||^2 = ||A||_F^2``). Counters are not touched.
    """
    u = rng.standard_normal(op.ncols)
    v = rng.standard_normal(op.nrows)
    lhs = float(op._matvec(u) @ v)
    rhs = float(u @ op._rmatvec(v))
    probes = rng.standard_normal((4, op.ncols))
    fro = np.sqrt(np.mean([np.sum(op._matvec(g) ** 2) for g in probes]))
    return abs(lhs - rhs), float(np.linalg.norm(u) * np.linalg.norm(v) * fro)


def read_matrix_market(path) -> LinearOperator:
    """Read a MatrixMarket file (coordinate or array) into a sparse operator."""
    mat = scipy.io.mmread(str(path))
    if sp.issparse(mat):
        return SparseOperator(mat, name=Path(path).stem)
    return DenseOperator(np.asarray(mat), name=Path(path).stem)


def write_matrix_market(path, op: LinearOperator, max_dim: int = 4096) -> None:
    """Write ``op`` in MatrixMarket coordinate format (dense ones are materialized)."""
    if isinstance(op, SparseOperator):
        mat = op.matrix.tocoo()
    else:
        mat = sp.coo_matrix(to_dense(op, max_dim=max_dim))
    scipy.io.mmwrite(str(path), mat, field="real", precision=17)
