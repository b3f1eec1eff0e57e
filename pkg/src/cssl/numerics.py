"""Dense float64 array helpers, a deterministic RNG, and the finite-difference oracle.

All matrices in this package are plain ``numpy.ndarray`` objects with dtype
float64 and C (row-major) layout. Construction-time validation lives in
:func:`as_matrix`; downstream code assumes validated inputs.

Randomness never touches ``numpy.random``. The :class:`Rng` class implements
SplitMix64, a counter-based 64-bit generator whose integer stream is exactly
reproducible on any platform, with Box-Muller for Gaussian variates. Any
sub-component derives its own stream from a root seed via
``Rng.derive(tag)``; the derivation is ``mix64(seed XOR fnv1a64(tag))`` and is
independent of how far the parent stream has advanced.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import EmptyInput, NonFiniteEvaluation, ShapeMismatch, ZeroRow

EPS_NORM = 1e-12

_U64 = np.uint64
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MIX_MUL_1 = 0xBF58476D1CE4E5B9
_MIX_MUL_2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TWO53_INV = 2.0 ** -53


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Coerce to a validated 2-D float64 C-contiguous array.

    Raises ShapeMismatch for non-2-D input and NonFiniteEvaluation if any
    entry is NaN or Inf.
    """
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"{name}: expected 2-D array, got ndim={m.ndim}")
    if m.size and not np.all(np.isfinite(m)):
        raise NonFiniteEvaluation(f"{name}: contains NaN or Inf")
    return m


def check_finite(m: np.ndarray, name: str = "array") -> None:
    if m.size and not np.all(np.isfinite(m)):
        raise NonFiniteEvaluation(f"{name}: contains NaN or Inf")


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(m * m, axis=1))


def row_l2_normalize(m: np.ndarray, eps: float = EPS_NORM) -> np.ndarray:
    """Scale every row to unit L2 norm. Raises ZeroRow if a norm is <= eps."""
    norms = row_norms(m)
    if m.shape[0] and np.min(norms) <= eps:
        bad = int(np.argmin(norms))
        raise ZeroRow(f"row {bad} has norm {norms[bad]:.3e} <= {eps:.0e}")
    return m / norms[:, None]


def row_l2_normalize_backward(raw: np.ndarray, grad_normalized: np.ndarray) -> np.ndarray:
    """Backprop through y = x / ||x|| applied row-wise.

    ``raw`` is the pre-normalization matrix; returns the gradient with
    respect to it given the gradient with respect to the normalized rows.
    """
    if raw.shape != grad_normalized.shape:
        raise ShapeMismatch(
            f"normalize backward: {raw.shape} vs {grad_normalized.shape}")
    norms = row_norms(raw)[:, None]
    y = raw / norms
    inner = np.sum(y * grad_normalized, axis=1, keepdims=True)
    return (grad_normalized - y * inner) / norms


def pairwise_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All pairwise dot products: out[i, j] = a[i] . b[j]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"pairwise_dot: {a.shape} vs {b.shape}")
    return a @ b.T


def logsumexp(v) -> float:
    """log(sum(exp(v))) with max-shift; exact for a single element."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("logsumexp of empty vector")
    check_finite(v, "logsumexp input")
    if v.size == 1:
        return float(v[0])
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def logsumexp_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp for matrices; tolerates -inf entries (masked columns)."""
    if m.shape[1] == 0:
        raise EmptyInput("logsumexp over zero columns")
    mx = np.max(m, axis=1)
    return mx + np.log(np.sum(np.exp(m - mx[:, None]), axis=1))


def finite_difference_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix.

    Perturbs one entry at a time: (f(x + eps*e) - f(x - eps*e)) / (2*eps).
    This is the independent oracle every analytic gradient in the package is
    checked against; it must never share code with the gradients it verifies.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = float(f(x))
        flat[k] = orig - eps
        lo = float(f(x))
        flat[k] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteEvaluation(
                f"finite differences: f returned non-finite at entry {k}")
        gflat[k] = (hi - lo) / (2.0 * eps)
    return grad


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; used for stream derivation and file checksums."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _mix64_scalar(z: int) -> int:
    z &= 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * _MIX_MUL_1) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * _MIX_MUL_2) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 stream: counter advances by a golden-ratio gamma, outputs
    are a bijective bit mix of the counter. The integer stream is identical
    on every platform; Gaussian outputs additionally rely on IEEE-754 libm
    (log/sqrt/cos/sin), which is bit-stable on a given platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._state = self.seed

    def derive(self, tag: str) -> "Rng":
        """Child stream keyed by (seed, tag); ignores this stream's position."""
        return Rng(_mix64_scalar(self.seed ^ fnv1a64(tag.encode("utf-8"))))

    def _next_block(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty(0, dtype=_U64)
        with np.errstate(over="ignore"):
            counters = (np.arange(1, n + 1, dtype=_U64) * _U64(_SPLITMIX_GAMMA)
                        + _U64(self._state))
            z = counters
            z = (z ^ (z >> _U64(30))) * _U64(_MIX_MUL_1)
            z = (z ^ (z >> _U64(27))) * _U64(_MIX_MUL_2)
            z = z ^ (z >> _U64(31))
        self._state = int(counters[-1])
        return z

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) using the top 53 bits of each output."""
        bits = self._next_block(n)
        return (bits >> _U64(11)).astype(np.float64) * _TWO53_INV

    def gaussian(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """n Gaussian draws via Box-Muller. std == 0 returns exact copies of mean."""
        if std < 0:
            raise ValueError("std must be non-negative")
        if n <= 0:
            return np.empty(0, dtype=np.float64)
        if std == 0.0:
            return np.full(n, float(mean))
        pairs = (n + 1) // 2
        bits1 = self._next_block(pairs)
        bits2 = self._next_block(pairs)
        # u1 in (0, 1] so log never sees zero
        u1 = ((bits1 >> _U64(11)).astype(np.float64) + 1.0) * _TWO53_INV
        u2 = (bits2 >> _U64(11)).astype(np.float64) * _TWO53_INV
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return mean + std * out[:n]

    def gaussian_matrix(self, rows: int, cols: int,
                        mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self.gaussian(rows * cols, mean, std).reshape(rows, cols)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of arange(n) driven by the integer stream."""
        idx = np.arange(n, dtype=np.int64)
        if n < 2:
            return idx
        draws = self._next_block(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k] % _U64(i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx
