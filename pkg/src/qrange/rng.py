"""Deterministic sampling on a counter-based 64-bit generator.

The generator is splitmix64 used purely as a counter mix: output i of
stream (seed, stream) is a function of (seed, stream, i) alone.  There is
no sequential state, so sampling is chunk-order independent and trivially
vectorized.  Normal variates come from Box-Muller on consecutive counter
pairs.  Bitwise reproducibility is guaranteed within this implementation
only; callers should rely on statistical properties, not exact bits.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(v: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2^64 by design.
    with np.errstate(over="ignore"):
        v = (v ^ (v >> np.uint64(30))) * _MIX1
        v = (v ^ (v >> np.uint64(27))) * _MIX2
        return v ^ (v >> np.uint64(31))


def raw64(seed: int, n: int, stream: int = 0, offset: int = 0) -> np.ndarray:
    """n raw uint64 words for counters offset..offset+n-1 of (seed, stream)."""
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + np.uint64(stream & 0xFFFFFFFFFFFFFFFF))
        ctr = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
        return _mix(key + ctr * _GOLDEN)


def uniforms(seed: int, n: int, stream: int = 0, offset: int = 0) -> np.ndarray:
    """n doubles in [0, 1) with 53-bit resolution."""
    return (raw64(seed, n, stream, offset) >> np.uint64(11)) * 2.0**-53


def normals(seed: int, n: int, std: float = 1.0, stream: int = 0, offset: int = 0) -> np.ndarray:
    """n draws from Normal(0, std^2) via Box-Muller."""
    m = (n + 1) // 2
    # u1 in (0, 1] so log never sees zero; u2 in [0, 1).
    u1 = ((raw64(seed, m, stream, offset) >> np.uint64(11)) + np.uint64(1)) * 2.0**-53
    u2 = uniforms(seed, m, stream, offset + m)
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return std * out[:n]
