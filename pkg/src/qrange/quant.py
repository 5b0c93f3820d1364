"""Bit-exact uniform fake quantization, asymmetric and symmetric.

The asymmetric forward is

    xbar = clip(rint(x / s) - rint(z), 0, k)
    xhat = s * (xbar + rint(z))

with k = 2^bits - 1, s = (theta_max - theta_min) / k and z = theta_min / s.
All rounding is half-to-even.  The integer clip anchors are n = rint(z) and
p = k + n; a scalar is Below / Inside / Above according to where
rint(x / s) - n falls relative to [0, k], which is exactly when the clip
activates.

Every function is elementwise and accepts floats or ndarrays in the value
slots; per-channel use broadcasts array-valued encodings against the input
(e.g. shape (C, 1) encodings against a (C, M) tensor).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import DegenerateRange, NonPositiveRange

# Step sizes are clamped below at construction so a learned range collapsing
# through zero can never produce a division by zero in the forward.
S_FLOOR = 1e-12


class Scheme(Enum):
    ASYMMETRIC = "asymmetric"
    SYMMETRIC = "symmetric"


class RegionLabel(Enum):
    BELOW = "below"
    INSIDE = "inside"
    ABOVE = "above"


@dataclass(frozen=True)
class QuantSpec:
    """Static quantizer configuration.

    channel_axis is None for per-tensor granularity.  rounding has a single
    supported mode; the field exists for format stability.
    """

    bits: int
    scheme: Scheme = Scheme.ASYMMETRIC
    channel_axis: int | None = None
    rounding: str = "half-to-even"

    def __post_init__(self) -> None:
        if not 2 <= self.bits <= 16:
            raise ValueError(f"bits must be in [2, 16], got {self.bits}")
        if self.rounding != "half-to-even":
            raise ValueError(f"unsupported rounding mode: {self.rounding!r}")

    @property
    def k(self) -> int:
        # Recomputed on every access, never stored.
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class Encoding:
    """Derived quantizer state.

    s = (theta_max - theta_min) / k and z = theta_min / s hold at
    construction (up to the S_FLOOR clamp, which sets `clamped`).  Fields
    are floats for per-tensor encodings and ndarrays for per-channel ones.
    """

    theta_min: float
    theta_max: float
    s: float
    z: float
    k: int
    n: float
    p: float
    clamped: bool = False


def round_half_even(x):
    """Nearest integer, ties to even.  Valid for |x| < 2^52."""
    if isinstance(x, np.ndarray):
        return np.rint(x)
    return int(np.rint(x))


def derive_encoding(theta_min, theta_max, spec: QuantSpec, *, clamp: bool = False) -> Encoding:
    """Encoding for the asymmetric range [theta_min, theta_max].

    Raises DegenerateRange when the width cannot support k steps of at
    least S_FLOOR; with clamp=True the width is floored instead and the
    event recorded on the encoding.
    """
    if spec.scheme is not Scheme.ASYMMETRIC:
        raise ValueError("derive_encoding is for asymmetric specs")
    k = spec.k
    width = theta_max - theta_min
    clamped = width < S_FLOOR * k
    if np.any(clamped):
        if not clamp:
            raise DegenerateRange(f"theta_max - theta_min = {width} < {S_FLOOR * k}")
        width = np.maximum(width, S_FLOOR * k)
    s = width / k
    z = theta_min / s
    n = round_half_even(z)
    return Encoding(
        theta_min=theta_min,
        theta_max=theta_min + width,
        s=s,
        z=z,
        k=k,
        n=n,
        p=k + n,
        clamped=bool(np.any(clamped)),
    )


def encoding_from_scale_offset(s, z, k: int, *, clamp: bool = False) -> Encoding:
    """Encoding built directly from (s, z); the range is implied."""
    clamped = s < S_FLOOR
    if np.any(clamped):
        if not clamp:
            raise DegenerateRange(f"s = {s} < {S_FLOOR}")
        s = np.maximum(s, S_FLOOR)
    n = round_half_even(z)
    return Encoding(
        theta_min=s * z,
        theta_max=s * (z + k),
        s=s,
        z=z,
        k=k,
        n=n,
        p=k + n,
        clamped=bool(np.any(clamped)),
    )


def fake_quant_asym(x, enc: Encoding):
    """Quantize-dequantize x through enc; output lies in [s*n, s*p]."""
    q = np.rint(x / enc.s)
    qc = np.clip(q - enc.n, 0, enc.k)
    return enc.s * (qc + enc.n)


def fake_quant_sym(x, theta_max, spec: QuantSpec):
    """Symmetric quantize-dequantize with s = 2*theta_max/k."""
    if np.any(theta_max <= 0):
        raise NonPositiveRange(f"theta_max must be > 0, got {theta_max}")
    k = spec.k
    s = 2.0 * theta_max / k
    half = (k - 1) / 2
    return s * np.clip(np.rint(x / s), -half, half)


def region_offsets(x, enc: Encoding):
    """rint(x/s) - n for each element; <0 is Below, >k is Above."""
    return np.rint(x / enc.s) - enc.n


def classify_region(x: float, enc: Encoding) -> RegionLabel:
    rel = round_half_even(x / enc.s) - enc.n
    if rel < 0:
        return RegionLabel.BELOW
    if rel > enc.k:
        return RegionLabel.ABOVE
    return RegionLabel.INSIDE


def ste_surrogate(x, s, z, k: int):
    """Rounding-free relaxation of the asymmetric forward.

    s * (clip(x/s - z, 0, k) + z): the identity inside the range and a
    clamp to theta_min / theta_max outside it.  This is the function the
    finite-difference oracles differentiate.
    """
    return s * (np.clip(x / s - z, 0, k) + z)


def ste_surrogate_sym(x, theta_max, k: int):
    """Rounding-free relaxation of the symmetric forward."""
    s = 2.0 * theta_max / k
    half = (k - 1) / 2
    return s * np.clip(x / s, -half, half)


def with_clamped(enc: Encoding, flag: bool) -> Encoding:
    return replace(enc, clamped=flag)
