"""Seeded randomness and the linear-algebra primitives shared by the rest of the package."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError, NumericalError

_MASK64 = (1 << 64) - 1

# Stream ids for the independent draws of one experimental seed.
STREAM_DATA = 1
STREAM_NEIGHBOR = 2
STREAM_PROBE = 3
STREAM_INIT = 4
STREAM_MINIBATCH = 5
STREAM_PERMUTE = 6
STREAM_POWER = 7
STREAM_DEMO = 8

DEFAULT_JITTER_SCALE = 1e-6
# interpolation needs a ridge far below the sampling one to fit labels to ~1e-10
INTERP_JITTER_SCALE = 1e-12
DEFAULT_POWER_ITERS = 30
POWER_REL_TOL = 1e-10

Vector = np.ndarray
Matrix = np.ndarray
LinearMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SeededStream:
    """A (seed, stream_id) key for a counter-based Philox generator.

    Every call to :meth:`generator` restarts the sequence, so a stream is a
    value, not a stateful object.
    """

    seed: int
    stream_id: int

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= _MASK64:
                raise InvalidInputError(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        key = np.array([int(self.seed), int(self.stream_id)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, tag: int) -> "SeededStream":
        """Child stream for sub-draws (per neighbor, per trial, ...)."""
        # splitmix-style mixing keeps children of different parents apart
        z = (int(self.stream_id) * 0x9E3779B97F4A7C15 + int(tag) + 1) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return SeededStream(int(self.seed), z ^ (z >> 31))


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")


def gaussian_with_covariance(stream: SeededStream, n: int, cov_factor: Matrix) -> Matrix:
    """Draw ``n`` rows i.i.d. from N(0, L Lᵀ) given the lower factor ``L``."""
    cov_factor = np.asarray(cov_factor, dtype=np.float64)
    if cov_factor.ndim != 2 or cov_factor.shape[0] != cov_factor.shape[1]:
        raise InvalidInputError("cov_factor must be a square matrix")
    _check_finite("cov_factor", cov_factor)
    if n < 1:
        raise InvalidInputError("n must be positive")
    z = stream.generator().standard_normal((n, cov_factor.shape[0]))
    diag = np.diagonal(cov_factor)
    if np.count_nonzero(cov_factor) == np.count_nonzero(diag):
        # diagonal factor: same values as the dense product, without the p² work per row
        return z * diag
    return z @ cov_factor.T


def cholesky_with_jitter(A: Matrix, jitter_scale: float = DEFAULT_JITTER_SCALE,
                         retries: int = 3) -> tuple[Matrix, float]:
    """Lower Cholesky factor of ``A + lam*I`` with ``lam = jitter_scale*trace(A)/p``.

    On failure the ridge is multiplied by 10, up to ``retries`` times. Returns
    ``(L, lam)`` where ``lam`` is the ridge that was actually used.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("A must be square")
    _check_finite("A", A)
    p = A.shape[0]
    lam = jitter_scale * float(np.trace(A)) / p
    if lam < 0:
        raise InvalidInputError("jitter must be non-negative (trace(A) < 0?)")
    eye = np.eye(p)
    for attempt in range(retries + 1):
        try:
            return np.linalg.cholesky(A + lam * eye), lam
        except np.linalg.LinAlgError:
            if attempt == retries:
                break
            # zero jitter cannot grow by scaling; seed it from the matrix scale
            lam = lam * 10.0 if lam > 0 else max(abs(np.trace(A)) / p, 1.0) * 1e-12
    raise NumericalError(f"Cholesky failed after {retries} retries", jitter=lam)


def operator_norm_power_iteration(apply: LinearMap, apply_adjoint: LinearMap, dim: int,
                                  iters: int = DEFAULT_POWER_ITERS,
                                  stream: SeededStream | None = None,
                                  rel_tol: float = POWER_REL_TOL) -> float:
    """Largest singular value of a linear map via power iteration on ``AᵀA``.

    The estimate ``||A v||`` for unit ``v`` never exceeds the true norm beyond
    rounding, so it is a lower bound that tightens with ``iters``.
    """
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    if stream is None:
        stream = SeededStream(0, STREAM_POWER)
    v = stream.generator().standard_normal(dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        av = apply(v)
        new = float(np.linalg.norm(av))
        if new == 0.0:
            return 0.0
        w = apply_adjoint(av)
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return new
        v = w / wn
        if est > 0 and abs(new - est) <= rel_tol * new:
            est = max(est, new)
            break
        est = max(est, new)
    # the final iterate is the best start vector seen
    return max(est, float(np.linalg.norm(apply(v))))


def min_norm_interpolator(X: Matrix, y: Vector,
                          jitter_scale: float = INTERP_JITTER_SCALE) -> tuple[Vector, float]:
    """``w = Xᵀ (X Xᵀ + lam I)⁻¹ y``; the minimum-ℓ2-norm interpolant as lam → 0.

    Returns ``(w, residual_bound)`` where the bound is
    ``lam * ||(XXᵀ + lam I)⁻¹ y|| * ||X||_op`` on ``||X w - y||``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n > p:
        raise InvalidInputError(f"need n <= p for interpolation, got n={n}, p={p}")
    if y.shape != (n,):
        raise InvalidInputError("y length must match rows of X")
    _check_finite("X", X)
    _check_finite("y", y)
    L, lam = cholesky_with_jitter(X @ X.T, jitter_scale)
    alpha = _cho_solve(L, y)
    w = X.T @ alpha
    x_op = float(np.linalg.norm(X, 2))
    return w, lam * float(np.linalg.norm(alpha)) * x_op


def _cho_solve(L: Matrix, b: Vector) -> Vector:
    from scipy.linalg import solve_triangular

    z = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, z, lower=False)
