"""Counter-based random draws.

Every draw is a pure function of ``(key, counter)``: a 64-bit stream key is
folded from the run seed and a tuple of identifiers (role, generation, ...),
and draw ``i`` of that stream is the splitmix64 finalizer applied to
``key + (i + 1) * golden``. Batches can therefore be cut into chunks and
evaluated by any number of workers without changing a single bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.special import ndtri

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_GOLDEN_U = np.uint64(_GOLDEN)
_M1_U = np.uint64(_M1)
_M2_U = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


class Role(IntEnum):
    """Logical stream identifiers; one stream per role and generation."""

    INIT = 1
    SELECTION = 2
    MUTATION = 3
    EVALUATION = 4
    REEVALUATION = 5
    CORRECTION = 6


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> _S30)) * _M1_U
    z = (z ^ (z >> _S27)) * _M2_U
    return z ^ (z >> _S31)


def stream_key(seed: int, *ids: int) -> int:
    """Fold a seed and any number of identifiers into one 64-bit key."""
    key = _mix_int(seed + _GOLDEN)
    for ident in ids:
        key = _mix_int((key ^ (ident & _MASK)) + _GOLDEN)
    return key


def raw_draws(key: int, counters: np.ndarray) -> np.ndarray:
    counters = np.asarray(counters, dtype=np.uint64)
    x = np.uint64(key) + (counters + np.uint64(1)) * _GOLDEN_U
    return _mix(x)


def uniforms(key: int, counters: np.ndarray) -> np.ndarray:
    """Uniform draws in the open interval (0, 1), 53 bits of resolution."""
    bits = raw_draws(key, counters) >> _S11
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normals(key: int, counters: np.ndarray) -> np.ndarray:
    """Standard normal draws by inverse-CDF, one raw draw per normal."""
    return ndtri(uniforms(key, counters))


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair addressing an unbounded sequence of draws.

    ``stream_id`` is itself a 64-bit key; use :meth:`child` to derive the
    stream for a role/generation tuple.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK and 0 <= self.stream_id <= _MASK):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    @property
    def key(self) -> int:
        return stream_key(self.seed, self.stream_id)

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, stream_key(self.stream_id, *ids))

    def uniform(self, counters) -> np.ndarray:
        return uniforms(self.key, counters)

    def normal(self, counters) -> np.ndarray:
        return normals(self.key, counters)

    def normal_block(self, shape, start: int = 0) -> np.ndarray:
        n = int(np.prod(shape))
        return self.normal(np.arange(start, start + n, dtype=np.uint64)).reshape(shape)

    def uniform_block(self, shape, start: int = 0) -> np.ndarray:
        n = int(np.prod(shape))
        return self.uniform(np.arange(start, start + n, dtype=np.uint64)).reshape(shape)


def generation_stream(seed: int, role: Role, generation: int) -> RngStream:
    return RngStream(seed).child(int(role), generation)
