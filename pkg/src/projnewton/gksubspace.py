"""Generalized Krylov subspace bookkeeping.

A :class:`GKSubspace` owns an orthonormal basis ``V`` together with the
tall-skinny products ``A V``, ``A^T A V``, ``L V`` and ``L^T L V`` and the
QR factors of ``A V`` (and optionally ``L V``). Growing the basis is split in
two steps that mirror the solver loop:

* :meth:`GKSubspace.orthogonalize` appends a new direction to ``V`` (no
  operator applications);
* :meth:`GKSubspace.extend_caches` applies ``A``, ``A^T``, ``L`` (and ``L^T``)
  to every basis vector that is not cached yet and updates the QR factors.

:meth:`GKSubspace.expand` does both.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateProblemError
from .linop import LinearOperator
from .problems import gaussian_stream

EXPANDED = "expanded"
CONVERGED_SUBSPACE = "converged-subspace"

REORTH_DROP = 0.7
BREAKDOWN_TOL = 1e-14


def _grow(arr: np.ndarray, cols: int) -> np.ndarray:
    out = np.zeros((arr.shape[0], cols))
    out[:, : arr.shape[1]] = arr
    return out


def _grow_square(arr: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((size, size))
    out[: arr.shape[0], : arr.shape[1]] = arr
    return out


class IncrementalQR:
    """Reduced QR factors of a tall-skinny matrix, one column at a time.

    New columns are orthogonalized against ``Q`` by classical Gram-Schmidt
    with one unconditional second pass. ``gram`` holds ``R^T R`` updated
    blockwise as columns arrive.
    """

    def __init__(self, nrows: int, capacity: int = 8, seed: int = 0):
        self.nrows = nrows
        self.k = 0
        self.seed = seed
        self.n_degenerate = 0
        self._Q = np.zeros((nrows, capacity))
        self._R = np.zeros((capacity, capacity))
        self._G = np.zeros((capacity, capacity))

    @property
    def Q(self) -> np.ndarray:
        return self._Q[:, : self.k]

    @property
    def R(self) -> np.ndarray:
        return self._R[: self.k, : self.k]

    @property
    def gram(self) -> np.ndarray:
        return self._G[: self.k, : self.k]

    def _replacement(self, Qk: np.ndarray) -> np.ndarray:
        if Qk.shape[1] >= self.nrows:
            return np.zeros(self.nrows)
        self.n_degenerate += 1
        q = gaussian_stream(self.seed, 1000 + self.n_degenerate, self.nrows)
        for _ in range(2):
            q -= Qk @ (Qk.T @ q)
        return q / np.linalg.norm(q)

    def append(self, col: np.ndarray) -> None:
        k = self.k
        if k == self._Q.shape[1]:
            cap = max(2 * k, 1)
            self._Q = _grow(self._Q, cap)
            self._R = _grow_square(self._R, cap)
            self._G = _grow_square(self._G, cap)
        Qk = self._Q[:, :k]
        r = Qk.T @ col
        q = col - Qk @ r
        s = Qk.T @ q
        q -= Qk @ s
        r += s
        rkk = float(np.linalg.norm(q))
        if rkk <= BREAKDOWN_TOL * np.linalg.norm(col):
            q = self._replacement(Qk)
            rkk = 0.0
        else:
            q /= rkk
        self._Q[:, k] = q
        self._R[:k, k] = r
        self._R[k, k] = rkk
        self.gram_update(r, rkk)
        self.k += 1

    def gram_update(self, r: np.ndarray, rkk: float) -> None:
        """Border ``R^T R`` with the column ``(r, rkk)`` being appended at index k."""
        k = self.k
        off = self._R[:k, :k].T @ r
        self._G[:k, k] = off
        self._G[k, :k] = off
        self._G[k, k] = float(r @ r) + rkk * rkk


class GKSubspace:
    def __init__(self, A: LinearOperator, L: LinearOperator | None = None, *, capacity: int = 32,
                 keep_atav: bool = True, keep_lv: bool = True, keep_ltlv: bool = False,
                 qr_lv: bool = False, seed: int = 0):
        self.A = A
        self.L = L
        n = A.ncols
        cap = max(1, min(capacity, n + 1))
        self.keep_atav = keep_atav
        self.keep_lv = keep_lv and L is not None
        self.keep_ltlv = keep_ltlv and L is not None
        self.k = 0
        self.n_cached = 0
        self._V = np.zeros((n, cap))
        self._AV = np.zeros((A.nrows, cap))
        self._AtAV = np.zeros((n, cap)) if keep_atav else None
        self._LV = np.zeros((L.nrows, cap)) if self.keep_lv else None
        self._LtLV = np.zeros((n, cap)) if self.keep_ltlv else None
        self.qr_a = IncrementalQR(A.nrows, cap, seed=seed)
        self.qr_l = IncrementalQR(L.nrows, cap, seed=seed + 1) if (qr_lv and L is not None) else None
        self.atb = None
        self.atb_norm = 0.0

    @classmethod
    def init_basis(cls, A: LinearOperator, b: np.ndarray, L: LinearOperator | None = None,
                   **kw) -> "GKSubspace":
        """Start from ``v0 = A^T b / ||A^T b||`` (one adjoint application of A)."""
        sub = cls(A, L, **kw)
        atb = A.rmatvec(b)
        nrm = float(np.linalg.norm(atb))
        if nrm == 0.0:
            raise DegenerateProblemError("A^T b = 0: data is orthogonal to the range of A")
        sub.atb = atb
        sub.atb_norm = nrm
        sub._V[:, 0] = atb / nrm
        sub.k = 1
        return sub

    @property
    def n(self) -> int:
        return self._V.shape[0]

    @property
    def V(self) -> np.ndarray:
        return self._V[:, : self.k]

    @property
    def AV(self) -> np.ndarray:
        return self._AV[:, : self.n_cached]

    @property
    def AtAV(self) -> np.ndarray:
        return self._AtAV[:, : self.n_cached]

    @property
    def LV(self) -> np.ndarray:
        return self._LV[:, : self.n_cached]

    @property
    def LtLV(self) -> np.ndarray:
        return self._LtLV[:, : self.n_cached]

    @property
    def d(self) -> np.ndarray:
        """``V^T A^T b``, which equals ``||A^T b|| e_1`` for this basis."""
        out = np.zeros(self.k)
        out[0] = self.atb_norm
        return out

    def _ensure_capacity(self) -> None:
        cap = self._V.shape[1]
        if self.k < cap:
            return
        new = min(2 * cap, self.n + 1)
        self._V = _grow(self._V, new)
        self._AV = _grow(self._AV, new)
        if self._AtAV is not None:
            self._AtAV = _grow(self._AtAV, new)
        if self._LV is not None:
            self._LV = _grow(self._LV, new)
        if self._LtLV is not None:
            self._LtLV = _grow(self._LtLV, new)

    def orthogonalize(self, v_tilde: np.ndarray) -> str:
        """Modified Gram-Schmidt ``v_tilde`` against V and append it.

        A second full pass runs when the first one removed more than 30% of
        the norm. Returns ``CONVERGED_SUBSPACE`` without touching V when the
        remainder is negligible or the basis already spans R^n.
        """
        v = np.array(v_tilde, dtype=np.float64)
        nrm0 = float(np.linalg.norm(v))
        if self.k >= self.n or nrm0 == 0.0 or not np.isfinite(nrm0):
            return CONVERGED_SUBSPACE
        V = self.V
        for j in range(self.k):
            v -= (V[:, j] @ v) * V[:, j]
        nrm = float(np.linalg.norm(v))
        if nrm < REORTH_DROP * nrm0:
            for j in range(self.k):
                v -= (V[:, j] @ v) * V[:, j]
            nrm = float(np.linalg.norm(v))
        if nrm < BREAKDOWN_TOL * nrm0:
            return CONVERGED_SUBSPACE
        self._ensure_capacity()
        self._V[:, self.k] = v / nrm
        self.k += 1
        return EXPANDED

    def extend_caches(self) -> None:
        """Apply the operators to every uncached basis vector, once each."""
        while self.n_cached < self.k:
            j = self.n_cached
            v = self._V[:, j]
            av = self.A.matvec(v)
            self._AV[:, j] = av
            self.qr_a.append(av)
            if self._AtAV is not None:
                self._AtAV[:, j] = self.A.rmatvec(av)
            if self._LV is not None:
                lv = self.L.matvec(v)
                self._LV[:, j] = lv
                if self._LtLV is not None:
                    self._LtLV[:, j] = self.L.rmatvec(lv)
                if self.qr_l is not None:
                    self.qr_l.append(lv)
            self.n_cached += 1

    def expand(self, v_tilde: np.ndarray) -> str:
        status = self.orthogonalize(v_tilde)
        if status == EXPANDED:
            self.extend_caches()
        return status
