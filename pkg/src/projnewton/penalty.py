"""Smooth penalties ``Psi(x) = Psi~(L x)``.

Two kinds are supported:

* ``lp-smooth``: ``(1/p) * sum_i (z_i**2 + beta)**(p/2)``, a twice
  differentiable stand-in for ``(1/p) * ||z||_p^p`` with ``1 <= p <= 2``.
* ``quadratic``: ``0.5 * ||z||^2`` exactly, with no smoothing parameter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError
from .linop import LinearOperator

DEFAULT_BETA = 1e-5

LP_SMOOTH = "lp-smooth"
QUADRATIC = "quadratic"


@dataclass(frozen=True)
class SmoothPenalty:
    kind: str = LP_SMOOTH
    p: float = 1.0
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.kind not in (LP_SMOOTH, QUADRATIC):
            raise InvalidParameterError(f"unknown penalty kind {self.kind!r}")
        if self.kind == LP_SMOOTH:
            if not 1.0 <= self.p <= 2.0:
                raise InvalidParameterError(f"p must lie in [1, 2], got {self.p}")
            if not self.beta > 0:
                raise InvalidParameterError(f"beta must be positive, got {self.beta}")

    @property
    def is_quadratic(self) -> bool:
        return self.kind == QUADRATIC


def lp_smooth(p: float = 1.0, beta: float = DEFAULT_BETA) -> SmoothPenalty:
    return SmoothPenalty(LP_SMOOTH, float(p), float(beta))


def quadratic() -> SmoothPenalty:
    return SmoothPenalty(QUADRATIC, 2.0, 0.0)


def psi_value(pen: SmoothPenalty, z) -> float:
    z = np.asarray(z, dtype=np.float64)
    if pen.is_quadratic:
        return 0.5 * float(z @ z)
    return float(np.sum((z * z + pen.beta) ** (pen.p / 2))) / pen.p


def psi_gradient(pen: SmoothPenalty, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if pen.is_quadratic:
        return z.copy()
    return z * (z * z + pen.beta) ** (pen.p / 2 - 1)


def psi_hessian_diag(pen: SmoothPenalty, z) -> np.ndarray:
    """Diagonal of the Hessian of ``Psi~`` at ``z``; strictly positive."""
    z = np.asarray(z, dtype=np.float64)
    if pen.is_quadratic:
        return np.ones_like(z)
    z2 = z * z
    s = z2 + pen.beta
    e = pen.p / 2 - 1
    # (z^2+b)^(e-1) * (z^2 + b + 2 e z^2) avoids cancellation between the two terms
    return s ** (e - 1) * (s + 2 * e * z2)


def composed_gradient(pen: SmoothPenalty, L: LinearOperator, x) -> np.ndarray:
    """``L^T grad Psi~(L x)``: one forward and one adjoint application of L."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (L.ncols,):
        raise InvalidDimensionError(f"x has shape {x.shape}, L expects {L.ncols} columns")
    return L.rmatvec(psi_gradient(pen, L.matvec(x)))
