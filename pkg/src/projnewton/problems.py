"""Deterministic test problems and their on-disk format.

Random numbers come from Philox4x64-10 (a counter-based generator) keyed by
``(seed, stream)``; uniforms use the top 53 bits of each 64-bit output and
Gaussians are produced pairwise by the Box-Muller transform. Two named
streams are used: ``NOISE_STREAM`` for noise vectors and
``POSITION_STREAM`` for spike locations.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidDimensionError, InvalidInputError, InvalidParameterError
from .linop import (
    LinearOperator,
    fd1d,
    gaussian_blur_1d,
    gaussian_blur_2d,
    identity_operator,
    read_matrix_market,
    tv2d_operator,
    write_matrix_market,
)

NOISE_STREAM = 0
POSITION_STREAM = 1

KINDS = ("spike", "piecewise", "smooth1d")


def uniform_stream(seed: int, stream: int, size: int) -> np.ndarray:
    """``size`` uniforms in [0, 1) from Philox4x64-10 keyed by (seed, stream)."""
    key = np.array([int(seed) % 2**64, int(stream) % 2**64], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(size)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def gaussian_stream(seed: int, stream: int, size: int) -> np.ndarray:
    """Standard normals via Box-Muller on consecutive uniform pairs."""
    npairs = (size + 1) // 2
    u = uniform_stream(seed, stream, 2 * npairs)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * npairs)
    out[0::2] = r * np.cos(2 * np.pi * u2)
    out[1::2] = r * np.sin(2 * np.pi * u2)
    return out[:size]


def sample_positions(seed: int, n: int, count: int) -> np.ndarray:
    """``count`` distinct indices in ``range(n)`` by a partial Fisher-Yates shuffle."""
    perm = np.arange(n)
    u = uniform_stream(seed, POSITION_STREAM, count)
    for i in range(count):
        j = i + int(u[i] * (n - i))
        perm[i], perm[j] = perm[j], perm[i]
    return np.sort(perm[:count])


@dataclass
class ProblemInstance:
    A: LinearOperator
    L: LinearOperator
    b: np.ndarray
    b_ex: np.ndarray
    x_ex: np.ndarray | None
    sigma: float
    eta: float = 1.0
    noise_level: float = 0.0
    seed: int = 0
    kind: str = "external"
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.ncols

    @property
    def noise_norm(self) -> float:
        return float(np.linalg.norm(self.b - self.b_ex))

    def check(self) -> None:
        """Raise if the instance violates its standing assumptions."""
        if self.L.ncols != self.A.ncols or self.b.shape != (self.A.nrows,):
            raise InvalidDimensionError("A, L and b do not conform")
        if not self.eta >= 1:
            raise InvalidParameterError(f"eta must be >= 1, got {self.eta}")
        if not np.linalg.norm(self.b) > self.sigma:
            raise InvalidInputError(
                f"||b|| = {np.linalg.norm(self.b):.6g} does not exceed sigma = {self.sigma:.6g}")


def make_noise(b_ex, level: float, seed: int) -> np.ndarray:
    """Seeded Gaussian noise rescaled so that ``||e|| = level * ||b_ex||`` exactly."""
    b_ex = np.asarray(b_ex, dtype=np.float64)
    if level < 0:
        raise InvalidParameterError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return np.zeros_like(b_ex)
    bnorm = np.linalg.norm(b_ex)
    if bnorm == 0:
        raise InvalidInputError("cannot scale relative noise for b_ex = 0")
    e = gaussian_stream(seed, NOISE_STREAM, b_ex.size)
    return e * (level * bnorm / np.linalg.norm(e))


def _finish(A, L, x_ex, level, seed, eta, kind, meta) -> ProblemInstance:
    b_ex = A._matvec(x_ex)
    e = make_noise(b_ex, level, seed)
    b = b_ex + e
    sigma = eta * float(np.linalg.norm(e))
    prob = ProblemInstance(A=A, L=L, b=b, b_ex=b_ex, x_ex=x_ex, sigma=sigma, eta=float(eta),
                           noise_level=float(level), seed=int(seed), kind=kind, meta=meta)
    prob.check()
    return prob


def spike_problem(n: int, density: float = 0.01, blur_bandwidth: float = 0.01,
                  level: float = 0.1, seed: int = 0, dim: int = 1, eta: float = 1.0) -> ProblemInstance:
    """Sparse 0/1 signal (``dim=1``) or column-stacked image (``dim=2``) under Gaussian blur.

    ``ceil(density * n)`` entries are set to one; ``L`` is the identity.
    For ``dim=2``, ``n`` must be a perfect square.
    """
    if not 0 < density < 1:
        raise InvalidParameterError(f"density must lie in (0, 1), got {density}")
    if dim == 1:
        if n < 2:
            raise InvalidDimensionError(f"n must be >= 2, got {n}")
        A = gaussian_blur_1d(n, blur_bandwidth)
    elif dim == 2:
        N = math.isqrt(n)
        if N * N != n or N < 2:
            raise InvalidDimensionError(f"2-d spike problem needs a square n, got {n}")
        A = gaussian_blur_2d(N, blur_bandwidth)
    else:
        raise InvalidParameterError(f"dim must be 1 or 2, got {dim}")
    count = math.ceil(density * n)
    x_ex = np.zeros(n)
    x_ex[sample_positions(seed, n, count)] = 1.0
    meta = {"n": n, "density": density, "bandwidth": blur_bandwidth, "dim": dim}
    if dim == 2:
        meta["N"] = math.isqrt(n)
    return _finish(A, identity_operator(n), x_ex, level, seed, eta, "spike", meta)


def nested_rectangles(N: int) -> np.ndarray:
    """N x N phantom: background 0, then rectangles valued 0.5, 1 and 0, each inside the last."""
    X = np.zeros((N, N))
    X[N // 8: N - N // 8, N // 6: N - N // 6] = 0.5
    X[N // 4: N - N // 4, N // 3: N - N // 3] = 1.0
    X[3 * N // 8: N - 3 * N // 8, 5 * N // 12: N - 5 * N // 12] = 0.0
    return X


def piecewise_problem(N: int, kind: str = "blur2d", level: float = 0.1, seed: int = 0,
                      bandwidth: float = 0.05, eta: float = 1.0) -> ProblemInstance:
    """Blurred piecewise-constant phantom with the anisotropic TV operator as ``L``."""
    if N < 8:
        raise InvalidParameterError(f"piecewise problem needs N >= 8, got {N}")
    if kind != "blur2d":
        raise InvalidParameterError(f"unsupported piecewise kind {kind!r}")
    x_ex = nested_rectangles(N).ravel(order="F")
    meta = {"N": N, "n": N * N, "bandwidth": bandwidth, "dim": 2, "forward": kind}
    return _finish(gaussian_blur_2d(N, bandwidth), tv2d_operator(N), x_ex, level, seed, eta,
                   "piecewise", meta)


def smooth1d_problem(n: int, level: float = 0.1, seed: int = 0, bandwidth: float = 0.05,
                     eta: float = 1.0) -> ProblemInstance:
    """``x(t) = sin(pi t) exp(-t)`` on [0, 2], 1-d blur, first-difference ``L``."""
    if n < 16:
        raise InvalidDimensionError(f"smooth1d problem needs n >= 16, got {n}")
    t = np.linspace(0.0, 2.0, n)
    x_ex = np.sin(np.pi * t) * np.exp(-t)
    meta = {"n": n, "bandwidth": bandwidth, "dim": 1}
    return _finish(gaussian_blur_1d(n, bandwidth), fd1d(n), x_ex, level, seed, eta,
                   "smooth1d", meta)


def make_problem(kind: str, n: int, level: float, seed: int, eta: float = 1.0, **kw) -> ProblemInstance:
    """Dispatch on ``kind``. For ``piecewise``, ``n`` is the image side length N."""
    if kind == "spike":
        return spike_problem(n, level=level, seed=seed, eta=eta, **kw)
    if kind == "piecewise":
        return piecewise_problem(n, level=level, seed=seed, eta=eta, **kw)
    if kind == "smooth1d":
        return smooth1d_problem(n, level=level, seed=seed, eta=eta, **kw)
    raise InvalidParameterError(f"unknown problem kind {kind!r}; expected one of {KINDS}")


def write_vector(path, v) -> None:
    np.asarray(v, dtype="<f8").tofile(str(path))


def read_vector(path) -> np.ndarray:
    return np.fromfile(str(path), dtype="<f8").astype(np.float64)


def save_problem(prob: ProblemInstance, directory, write_matrices: bool = False) -> Path:
    """Write ``meta.json`` plus little-endian float64 vectors (and optionally .mtx operators)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"kind": prob.kind, "level": prob.noise_level, "seed": prob.seed, "eta": prob.eta,
            "sigma": prob.sigma, "m": prob.A.nrows, "s": prob.L.nrows, **prob.meta}
    meta.setdefault("n", prob.n)
    write_vector(d / "b.f64", prob.b)
    write_vector(d / "b_ex.f64", prob.b_ex)
    if prob.x_ex is not None:
        write_vector(d / "x_ex.f64", prob.x_ex)
    if write_matrices or prob.kind == "external":
        write_matrix_market(d / "A.mtx", prob.A)
        write_matrix_market(d / "L.mtx", prob.L)
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def _operators_from_meta(meta: dict) -> tuple[LinearOperator, LinearOperator]:
    kind = meta["kind"]
    if kind == "spike":
        n = meta["n"]
        A = gaussian_blur_1d(n, meta["bandwidth"]) if meta.get("dim", 1) == 1 \
            else gaussian_blur_2d(math.isqrt(n), meta["bandwidth"])
        return A, identity_operator(n)
    if kind == "piecewise":
        return gaussian_blur_2d(meta["N"], meta["bandwidth"]), tv2d_operator(meta["N"])
    if kind == "smooth1d":
        return gaussian_blur_1d(meta["n"], meta["bandwidth"]), fd1d(meta["n"])
    raise InvalidParameterError(f"cannot rebuild operators for kind {kind!r}")


def load_problem(directory) -> ProblemInstance:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    if (d / "A.mtx").exists() and (meta["kind"] == "external" or not meta["kind"] in KINDS):
        A = read_matrix_market(d / "A.mtx")
        L = read_matrix_market(d / "L.mtx") if (d / "L.mtx").exists() else identity_operator(A.ncols)
    else:
        A, L = _operators_from_meta(meta)
    b = read_vector(d / "b.f64")
    b_ex = read_vector(d / "b_ex.f64") if (d / "b_ex.f64").exists() else b.copy()
    x_ex = read_vector(d / "x_ex.f64") if (d / "x_ex.f64").exists() else None
    extra = {k: v for k, v in meta.items() if k not in ("kind", "level", "seed", "eta", "sigma", "m", "s")}
    prob = ProblemInstance(A=A, L=L, b=b, b_ex=b_ex, x_ex=x_ex, sigma=float(meta["sigma"]),
                           eta=float(meta.get("eta", 1.0)), noise_level=float(meta.get("level", 0.0)),
                           seed=int(meta.get("seed", 0)), kind=meta["kind"], meta=extra)
    prob.check()
    return prob
