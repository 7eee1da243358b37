"""Deterministic splittable random streams keyed by integer multi-indices.

Every stream is identified by a (seed, multi-index, purpose-tag) triple.  The
triple is hashed into a 128-bit digest which keys a counter-based generator:
block ``b`` of the stream is ``blake2b(key=digest, data=b)``, yielding eight
64-bit words, i.e. eight uniforms.  Streams are therefore pure functions of
their key, need no shared state, and can be consumed from any number of
workers in any order.

Gaussian variates are produced by applying the inverse normal CDF to the
uniform stream (one uniform per normal), so the n-th normal of a stream is a
fixed, platform-independent function of the key.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .errors import UsageError

GENERATOR_NAME = "blake2b128-ctr/ndtri"
GENERATOR_VERSION = 1

# Purpose tags.  Distinct tags give the same multi-index disjoint streams:
# "R" draws the uniform proxy time, "W" the Gaussian increments of the flow.
TAG_TIME = b"R"
TAG_FIELD = b"W"

#: A multi-index is a non-empty tuple of signed integers.  The root experiment
#: index is ``(0,)``; estimator nodes append ``(level, sample)`` suffixes.
MultiIndex = Sequence[int]

ROOT: tuple[int, ...] = (0,)

_MASK64 = (1 << 64) - 1
_INV53 = 2.0**-53
_HALF54 = 2.0**-54
_PACK_Q = struct.Struct("<Q").pack
_PATH_FMT: dict[int, struct.Struct] = {}


def derive(parent: MultiIndex, suffix: MultiIndex) -> tuple[int, ...]:
    """Append ``suffix`` to ``parent``, yielding a child multi-index."""
    if len(suffix) == 0:
        raise UsageError("multi-index suffix must be non-empty")
    return tuple(parent) + tuple(suffix)


def root_index(j: int) -> tuple[int, ...]:
    """Root multi-index of the j-th independent replicate."""
    return (j,)


@dataclass(frozen=True)
class StreamKey:
    """Handle of one keyed stream: experiment seed plus 128-bit digest."""

    seed: int
    digest: bytes


def _index_struct(n: int) -> struct.Struct:
    s = _PATH_FMT.get(n)
    if s is None:
        s = _PATH_FMT[n] = struct.Struct(f"<{n}q")
    return s


def stream_key(seed: int, index: MultiIndex, tag: bytes) -> StreamKey:
    """Derive the stream key for (seed, index, tag).

    The hashed message is the seed, the index length, the index entries as
    little-endian signed 64-bit words (length-prefixed, hence prefix-free),
    and the purpose tag.
    """
    n = len(index)
    if n == 0:
        raise UsageError("multi-index must have length >= 1")
    msg = (
        _PACK_Q(seed & _MASK64)
        + _PACK_Q(n)
        + _index_struct(n).pack(*index)
        + tag
    )
    return StreamKey(seed, hashlib.blake2b(msg, digest_size=16).digest())


def _block(digest: bytes, b: int) -> bytes:
    return hashlib.blake2b(_PACK_Q(b), digest_size=64, key=digest).digest()


def _words(digest: bytes, first_block: int, nblocks: int) -> np.ndarray:
    if nblocks == 1:
        data = _block(digest, first_block)
    else:
        data = b"".join(
            _block(digest, b) for b in range(first_block, first_block + nblocks)
        )
    return np.frombuffer(data, dtype="<u8")


def uniform01(key: StreamKey, ordinal: int) -> float:
    """Element ``ordinal`` of the key's uniform stream, in [0, 1)."""
    if ordinal < 0:
        raise UsageError("ordinal must be nonnegative")
    b, lane = divmod(ordinal, 8)
    block = _block(key.digest, b)
    w = int.from_bytes(block[lane * 8 : lane * 8 + 8], "little")
    return (w >> 11) * _INV53


def uniforms(key: StreamKey, ordinal: int, count: int) -> np.ndarray:
    """Elements ordinal..ordinal+count-1 of the uniform stream, in [0, 1)."""
    if count < 1:
        raise UsageError("count must be >= 1")
    if ordinal < 0:
        raise UsageError("ordinal must be nonnegative")
    b0, lane = divmod(ordinal, 8)
    nblocks = (lane + count + 7) // 8
    w = _words(key.digest, b0, nblocks)[lane : lane + count]
    return (w >> np.uint64(11)) * _INV53


def std_normals(key: StreamKey, ordinal: int, count: int) -> np.ndarray:
    """``count`` standard normals from stream positions ordinal onward.

    Each normal is ndtri of the matching uniform, nudged to the open interval
    (0, 1) so the inverse CDF stays finite.
    """
    if count < 1:
        raise UsageError("count must be >= 1")
    if ordinal < 0:
        raise UsageError("ordinal must be nonnegative")
    b0, lane = divmod(ordinal, 8)
    if lane + count <= 8:
        # hot path of the estimator recursion: low dimension, one block
        block = _block(key.digest, b0)
        vals = [
            (int.from_bytes(block[i * 8 : i * 8 + 8], "little") >> 11) * _INV53
            + _HALF54
            for i in range(lane, lane + count)
        ]
        return ndtri(np.array(vals))
    nblocks = (lane + count + 7) // 8
    w = _words(key.digest, b0, nblocks)[lane : lane + count]
    return ndtri((w >> np.uint64(11)) * _INV53 + _HALF54)
