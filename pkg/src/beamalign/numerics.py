"""Complex helpers and reproducible random streams.

All arithmetic is float64 / complex128. Random numbers come from a
counter-based generator (Philox) keyed by ``(seed, stream_id)`` so every
unit of work can own an independent, reproducible stream.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

_MASK64 = (1 << 64) - 1

# Stream-id namespaces. The low 32 bits carry a sample id or counter.
STREAM_DATASET = 1
STREAM_EVAL_NOISE = 2
STREAM_TRAIN_NOISE = 3
STREAM_INIT = 4
STREAM_SPLIT = 5
STREAM_KMEANS = 6
STREAM_SHUFFLE = 7


def stream_id(namespace: int, index: int = 0) -> int:
    """Compose a 64-bit stream id from a namespace tag and an index."""
    return ((namespace & 0xFFFFFFFF) << 32) | (index & 0xFFFFFFFF)


class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Two streams built from the same pair emit identical sequences; distinct
    stream ids give independent Philox keys.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self.generator = np.random.Generator(
            np.random.Philox(key=self.seed | (self.stream << 64)))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def spawn(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def complex_gaussian(rng: RngStream, variance: float, size=None):
    """Draw circularly-symmetric complex Gaussian samples CN(0, variance).

    Real and imaginary parts are i.i.d. N(0, variance / 2). Draws are
    interleaved (re, im, re, im, ...) so ``n`` scalar calls consume the
    stream exactly like one call with ``size=n``.
    """
    if variance < 0:
        raise DomainError(f"variance must be non-negative, got {variance}")
    shape = () if size is None else np.atleast_1d(size).tolist()
    pairs = rng.normal((*shape, 2))
    out = np.sqrt(variance / 2.0) * (pairs[..., 0] + 1j * pairs[..., 1])
    if size is None:
        return complex(out)
    return out


def hermitian_inner(a, b) -> complex:
    """Return ``a^H b``."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def cmat_vec(m, x) -> np.ndarray:
    """Complex matrix-vector product with shape checking."""
    m = np.asarray(m, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} by {x.shape}")
    return m @ x


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def db_to_linear(db):
    return _scalar_or_array(10.0 ** (np.asarray(db, dtype=float) / 10.0))


def linear_to_db(x):
    return _scalar_or_array(10.0 * np.log10(np.asarray(x, dtype=float)))


def dbm_to_watts(dbm):
    return _scalar_or_array(10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0))


def argmax_lowest(x, axis=-1):
    """Argmax with ties resolved to the lowest index (numpy already does this)."""
    return np.argmax(x, axis=axis)
