"""Shared numeric primitives: small dense solvers, the counter-based RNG and
the 3D pose metric.

Points and vectors are plain ``numpy`` float64 arrays; ``Vec3`` is an alias
used in signatures only.
"""
from __future__ import annotations

import hashlib
import math
from typing import Iterable, Sequence, Tuple

import numpy as np

Vec3 = np.ndarray

DEFAULT_RIDGE = 1e-9


class NumericError(ArithmeticError):
    """Raised when a numeric routine cannot produce a finite, defined result."""


class RankDeficientError(NumericError):
    def __init__(self, column: int):
        super().__init__(f"rank-deficient design matrix at column {column}")
        self.column = column


class NotSPDError(NumericError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix is not symmetric positive definite (pivot {pivot})")
        self.pivot = pivot


class MissingTimestampError(KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(repr(t) for t in self.missing[:5])
        more = "" if len(self.missing) <= 5 else f" (+{len(self.missing) - 5} more)"
        super().__init__(f"prediction missing truth timestamps: {shown}{more}")


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def solve_least_squares(design, targets, ridge: float = 0.0) -> np.ndarray:
    """Ridge-regularised least squares.

    Returns ``argmin ||design @ beta - targets||^2 + ridge * ||beta||^2``.
    The system is solved by Householder QR on the ridge-augmented matrix,
    which avoids squaring the condition number.

    Raises
    ------
    RankDeficientError
        If ``ridge == 0`` and a column of ``design`` is (numerically) a
        linear combination of the preceding ones.
    """
    A = as_matrix(design)
    Y = as_matrix(targets)
    if A.shape[0] != Y.shape[0]:
        raise ValueError(f"design has {A.shape[0]} rows but targets has {Y.shape[0]}")
    if A.shape[0] < 1:
        raise ValueError("least squares needs at least one row")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    n_cols = A.shape[1]
    if ridge > 0:
        A = np.vstack([A, math.sqrt(ridge) * np.eye(n_cols)])
        Y = np.vstack([Y, np.zeros((n_cols, Y.shape[1]))])
    elif A.shape[0] < n_cols:
        raise RankDeficientError(A.shape[0])
    Q, R = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(R))
    col_norms = np.linalg.norm(A, axis=0)
    tol = max(A.shape) * np.finfo(np.float64).eps
    for j in range(n_cols):
        if diag[j] <= tol * max(col_norms[j], 1.0) or col_norms[j] == 0.0:
            raise RankDeficientError(j)
    rhs = Q.T @ Y
    return _back_substitute(R, rhs)


def _back_substitute(R: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = R.shape[0]
    out = np.zeros_like(rhs)
    for i in range(n - 1, -1, -1):
        out[i] = (rhs[i] - R[i, i + 1:] @ out[i + 1:]) / R[i, i]
    return out


def cholesky(spd) -> np.ndarray:
    """Lower-triangular Cholesky factor; raises NotSPDError on a bad pivot."""
    A = as_matrix(spd)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("cholesky needs a square matrix")
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotSPDError(j)
        L[j, j] = math.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_solve(spd, rhs) -> np.ndarray:
    """Solve ``spd @ X = rhs`` for symmetric positive definite ``spd``."""
    L = cholesky(spd)
    B = as_matrix(rhs)
    if B.shape[0] != L.shape[0]:
        raise ValueError("rhs row count does not match matrix size")
    n = L.shape[0]
    y = np.zeros_like(B)
    for i in range(n):
        y[i] = (B[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = np.zeros_like(B)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def mse_3d(pred: Iterable[Tuple[float, Sequence[float]]],
           truth: Iterable[Tuple[float, Sequence[float]]]) -> float:
    """Mean squared Euclidean error over the truth timestamps (exact-key match)."""
    lookup = {float(t): np.asarray(p, dtype=np.float64) for t, p in pred}
    truth = list(truth)
    if not truth:
        raise ValueError("truth is empty")
    missing = [t for t, _ in truth if float(t) not in lookup]
    if missing:
        raise MissingTimestampError(missing)
    total = 0.0
    for t, p in truth:
        d = lookup[float(t)] - np.asarray(p, dtype=np.float64)
        total += float(d @ d)
    return total / len(truth)


# -- counter-based RNG -------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finaliser; uint64 arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(root: int, name: str) -> int:
    """Child seed from a root seed and a component name (BLAKE2b, 64 bit)."""
    h = hashlib.blake2b(f"{int(root) & _MASK64}:{name}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Counter-based generator: draw ``n`` is ``splitmix64(seed + (n+1)*golden)``.

    Every draw is a pure function of ``(seed, counter)``, so streams are
    reproducible bit for bit on any platform with IEEE doubles.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def spawn(self, name: str) -> "Rng":
        return Rng(derive_seed(self.seed, name))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GOLDEN)

    def uint64(self, size: int | None = None):
        out = self._raw(1 if size is None else int(size))
        return int(out[0]) if size is None else out

    def random(self, size=None):
        """Uniform doubles in [0, 1) from the top 53 bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, loc=0.0, scale=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = self.random(m)
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.random(1 if size is None else size)
        v = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        v = np.minimum(v, high - 1)
        return int(v.ravel()[0]) if size is None else v

    def poisson(self, lam: float) -> int:
        if lam < 0:
            raise ValueError("poisson rate must be non-negative")
        if lam == 0:
            return 0
        # Knuth's product method; rates here are small
        limit = math.exp(-lam)
        k, p = 0, 1.0
        while True:
            p *= self.random()
            if p <= limit:
                return k
            k += 1

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        if k > n:
            raise ValueError("cannot choose more items than available")
        return self.permutation(n)[:k]
