"""Analytic gradients of the dequantized output w.r.t. learnable ranges.

Four asymmetric parameterizations are supported, each a pair of raw
learnables (enc_a, enc_b):

    scale/offset      (s, z)
    kscale/koffset    (s' = theta_max - theta_min,  z' = theta_min / s')
    min/max           (theta_min, theta_max)
    beta/gamma        scalings of frozen calibration stats, optionally
                      squashed through a sigmoid

plus the symmetric targets s, theta_max and gamma, which differ only by
exact scale factors.

Two gradient modes exist because the clipped-region entries admit two
normalizations that differ by real factors:

    GradMode.TABLE      integer-anchored closed forms: clipped d/ds uses
                        the rounded offset anchors (n, p) and d/dz is 1,
                        i.e. the offset gradient lives in level units.
    GradMode.SURROGATE  derivatives of the clip-only relaxation
                        (ste_surrogate): clipped d/ds uses the unrounded
                        z and d/dz is s, i.e. input units.  This is the
                        mode central finite differences certify, and the
                        default everywhere.

Interior entries are identical in both modes: d/ds = rint(x/s) - x/s with
rounding treated as pass-through, and d/dz = 0.  min/max, beta/gamma and
kscale/koffset gradients are exact chain rules through (s, z), so the
scaling identities between parameterizations hold to the last bit.

Loss-level accumulation (accumulate_loss_grads) pairs the per-element
factors with the true quantization residual xhat - x; that is the training
gradient.  The finite-difference oracle instead differentiates the
mean-squared error of the surrogate itself, whose exact analytic gradient
is surrogate_loss_grads; interior points contribute nothing there because
the surrogate is the identity inside the range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import LengthMismatch, NonFiniteGradient, NonPositiveRange
from .quant import (
    Encoding,
    QuantSpec,
    Scheme,
    derive_encoding,
    encoding_from_scale_offset,
    fake_quant_asym,
    fake_quant_sym,
)


class ParamKind(Enum):
    SCALE_OFFSET = "scale-offset"
    KSCALE_KOFFSET = "kscale-koffset"
    MIN_MAX = "min-max"
    BETA_GAMMA = "beta-gamma"
    BETA_GAMMA_SIGMOID = "beta-gamma-sigmoid"


class GradMode(Enum):
    TABLE = "paper-table"
    SURROGATE = "surrogate"


class SymTarget(Enum):
    S = "sym-s"
    THETA_MAX = "sym-theta-max"
    GAMMA = "sym-gamma"


# sigmoid(6.9068) = 0.999: a sigmoid-squashed scaling starts within 0.1% of
# the calibration range instead of collapsing it.
SIGMOID_INIT = math.log(0.999 / 0.001)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class GradPair:
    d_enc_a: np.ndarray
    d_enc_b: np.ndarray


@dataclass
class RangeParams:
    """A parameterization tag, its two raw learnables and frozen stats.

    enc_a / enc_b are 1-D arrays (length 1 for per-tensor).  theta_min0 /
    theta_max0 are the frozen calibration extremes; beta/gamma scales them
    and the min/max+ learning-rate policy reads them.
    """

    kind: ParamKind
    enc_a: np.ndarray
    enc_b: np.ndarray
    theta_min0: np.ndarray
    theta_max0: np.ndarray
    bits: int

    def __post_init__(self) -> None:
        self.enc_a = np.atleast_1d(np.asarray(self.enc_a, dtype=np.float64))
        self.enc_b = np.atleast_1d(np.asarray(self.enc_b, dtype=np.float64))
        self.theta_min0 = np.atleast_1d(np.asarray(self.theta_min0, dtype=np.float64))
        self.theta_max0 = np.atleast_1d(np.asarray(self.theta_max0, dtype=np.float64))
        if self.enc_a.shape != self.enc_b.shape:
            raise LengthMismatch("enc_a and enc_b must have equal length")
        if np.any(self.theta_max0 <= self.theta_min0):
            raise ValueError("theta_max0 must exceed theta_min0")

    @property
    def k(self) -> int:
        return (1 << self.bits) - 1

    def copy(self) -> "RangeParams":
        return RangeParams(
            self.kind,
            self.enc_a.copy(),
            self.enc_b.copy(),
            self.theta_min0.copy(),
            self.theta_max0.copy(),
            self.bits,
        )


@dataclass
class SymRangeParams:
    """Symmetric counterpart: a single learnable per channel."""

    target: SymTarget
    enc: np.ndarray
    theta_max0: np.ndarray
    bits: int
    use_sigmoid: bool = False

    def __post_init__(self) -> None:
        self.enc = np.atleast_1d(np.asarray(self.enc, dtype=np.float64))
        self.theta_max0 = np.atleast_1d(np.asarray(self.theta_max0, dtype=np.float64))

    @property
    def k(self) -> int:
        return (1 << self.bits) - 1

    def copy(self) -> "SymRangeParams":
        return SymRangeParams(self.target, self.enc.copy(), self.theta_max0.copy(), self.bits, self.use_sigmoid)


def init_range_params(kind: ParamKind, theta_min0, theta_max0, bits: int) -> RangeParams:
    """Raw learnables that reproduce the calibration range exactly.

    For the sigmoid variant the raw values start at SIGMOID_INIT so the
    effective range opens at 99.9% of calibration.
    """
    tmin0 = np.atleast_1d(np.asarray(theta_min0, dtype=np.float64))
    tmax0 = np.atleast_1d(np.asarray(theta_max0, dtype=np.float64))
    k = (1 << bits) - 1
    if kind is ParamKind.MIN_MAX:
        a, b = tmin0.copy(), tmax0.copy()
    elif kind is ParamKind.SCALE_OFFSET:
        s0 = (tmax0 - tmin0) / k
        a, b = s0, tmin0 / s0
    elif kind is ParamKind.KSCALE_KOFFSET:
        w0 = tmax0 - tmin0
        a, b = w0, tmin0 / w0
    elif kind is ParamKind.BETA_GAMMA:
        a, b = np.ones_like(tmin0), np.ones_like(tmax0)
    elif kind is ParamKind.BETA_GAMMA_SIGMOID:
        a = np.full_like(tmin0, SIGMOID_INIT)
        b = np.full_like(tmax0, SIGMOID_INIT)
    else:
        raise ValueError(kind)
    return RangeParams(kind, a, b, tmin0, tmax0, bits)


def init_sym_params(target: SymTarget, theta_max0, bits: int, use_sigmoid: bool = False) -> SymRangeParams:
    tmax0 = np.atleast_1d(np.asarray(theta_max0, dtype=np.float64))
    k = (1 << bits) - 1
    if target is SymTarget.S:
        enc = 2.0 * tmax0 / k
    elif target is SymTarget.THETA_MAX:
        enc = tmax0.copy()
    elif target is SymTarget.GAMMA:
        enc = np.full_like(tmax0, SIGMOID_INIT) if use_sigmoid else np.ones_like(tmax0)
    else:
        raise ValueError(target)
    return SymRangeParams(target, enc, tmax0, bits, use_sigmoid)


def params_to_encoding(params: RangeParams, *, clamp: bool = False) -> Encoding:
    """Map raw learnables to the derived (s, z, n, p) encoding."""
    k = params.k
    a, b = params.enc_a, params.enc_b
    spec = QuantSpec(bits=params.bits, scheme=Scheme.ASYMMETRIC)
    if params.kind is ParamKind.MIN_MAX:
        return derive_encoding(a, b, spec, clamp=clamp)
    if params.kind is ParamKind.SCALE_OFFSET:
        return encoding_from_scale_offset(a, b, k, clamp=clamp)
    if params.kind is ParamKind.KSCALE_KOFFSET:
        return encoding_from_scale_offset(a / k, k * b, k, clamp=clamp)
    beta, gamma = effective_beta_gamma(params)
    return derive_encoding(beta * params.theta_min0, gamma * params.theta_max0, spec, clamp=clamp)


def effective_beta_gamma(params: RangeParams):
    """(beta, gamma) after the optional sigmoid squash."""
    if params.kind is ParamKind.BETA_GAMMA_SIGMOID:
        return sigmoid(params.enc_a), sigmoid(params.enc_b)
    return params.enc_a, params.enc_b


def sym_theta_max(params: SymRangeParams):
    """Effective symmetric range bound for the current learnable."""
    k = params.k
    if params.target is SymTarget.S:
        return params.enc * k / 2.0
    if params.target is SymTarget.THETA_MAX:
        return params.enc
    g = sigmoid(params.enc) if params.use_sigmoid else params.enc
    return g * params.theta_max0


# ---------------------------------------------------------------------------
# Per-element output gradients.  The vectorized *_factors functions are the
# workhorses; the scalar grad_* wrappers expose the documented signatures.
# ---------------------------------------------------------------------------


def scale_offset_factors(x, enc: Encoding, mode: GradMode):
    """(d xhat/d s, d xhat/d z) per element."""
    t = x / enc.s
    q = np.rint(t)
    rel = q - enc.n
    below = rel < 0
    above = rel > enc.k
    inside = ~(below | above)
    if mode is GradMode.TABLE:
        lo_a, hi_a = enc.n, enc.p
        clip_b = 1.0
    else:
        lo_a, hi_a = enc.z, enc.k + enc.z
        clip_b = enc.s
    fa = np.where(inside, q - t, np.where(below, lo_a, hi_a) * np.ones_like(t))
    fb = np.where(inside, 0.0, clip_b * np.ones_like(t))
    return fa, fb


def _minmax_jacobian(enc: Encoding):
    """Rows of d(s, z)/d(theta_min, theta_max) as chain coefficients."""
    k = enc.k
    ds_dmin, ds_dmax = -1.0 / k, 1.0 / k
    dz_dmin = (enc.z + k) / (k * enc.s)
    dz_dmax = -enc.z / (k * enc.s)
    return ds_dmin, ds_dmax, dz_dmin, dz_dmax


def min_max_factors(x, enc: Encoding, mode: GradMode):
    """(d xhat/d theta_min, d xhat/d theta_max) per element."""
    if mode is GradMode.SURROGATE:
        fa, fb = scale_offset_factors(x, enc, mode)
        ds_dmin, ds_dmax, dz_dmin, dz_dmax = _minmax_jacobian(enc)
        return fa * ds_dmin + fb * dz_dmin, fa * ds_dmax + fb * dz_dmax
    # Integer-anchored closed forms, taken verbatim.
    k = enc.k
    t = x / enc.s
    q = np.rint(t)
    rel = q - enc.n
    below = rel < 0
    above = rel > k
    inside = ~(below | above)
    frac = q - t
    nz = (enc.n - enc.z) / k
    ones = np.ones_like(t)
    dmin = np.where(
        inside, -frac / k, np.where(below, (-enc.n / k + nz + 1.0) * ones, nz * ones)
    )
    dmax = np.where(
        inside, frac / k, np.where(below, (enc.n / k - nz) * ones, (-nz + 1.0) * ones)
    )
    return dmin, dmax


def beta_gamma_factors(x, params: RangeParams, mode: GradMode):
    """(d xhat/d beta_raw, d xhat/d gamma_raw) per element.

    These are the min/max factors at the effective range scaled by the
    frozen calibration stats, times sigmoid' for the squashed variant.
    """
    enc = params_to_encoding(params, clamp=True)
    dmin, dmax = min_max_factors(x, enc, mode)
    da = params.theta_min0 * dmin
    db = params.theta_max0 * dmax
    if params.kind is ParamKind.BETA_GAMMA_SIGMOID:
        sa, sb = sigmoid(params.enc_a), sigmoid(params.enc_b)
        da = da * (sa * (1.0 - sa))
        db = db * (sb * (1.0 - sb))
    return da, db


def kscale_koffset_factors(x, enc: Encoding, mode: GradMode):
    """Chain through s = s'/k, z = k*z'."""
    fa, fb = scale_offset_factors(x, enc, mode)
    return fa / enc.k, enc.k * fb


def sym_factors(x, theta_max, k: int, target: SymTarget, theta_max0=None, use_sigmoid: bool = False, raw=None):
    """Per-element symmetric gradient for the chosen learnable.

    The base is the s-gradient; theta_max and gamma follow by the exact
    factors 2/k and theta_max0 * 2/k.  Clip anchors are +-(k-1)/2, so the
    integer-anchored and surrogate normalizations coincide.
    """
    s = 2.0 * theta_max / k
    half = (k - 1) / 2
    q = np.rint(x / s)
    base = np.where(q < -half, -half, np.where(q > half, half, q - x / s))
    if target is SymTarget.S:
        return base
    tm_grad = (2.0 / k) * base
    if target is SymTarget.THETA_MAX:
        return tm_grad
    g = theta_max0 * tm_grad
    if use_sigmoid:
        sg = sigmoid(raw)
        g = g * (sg * (1.0 - sg))
    return g


def elementwise_factors(x, params: RangeParams, mode: GradMode, enc: Encoding | None = None):
    """Dispatch to the kind-matching per-element factor pair."""
    if params.kind in (ParamKind.BETA_GAMMA, ParamKind.BETA_GAMMA_SIGMOID):
        return beta_gamma_factors(x, params, mode)
    if enc is None:
        enc = params_to_encoding(params, clamp=True)
    if params.kind is ParamKind.MIN_MAX:
        return min_max_factors(x, enc, mode)
    if params.kind is ParamKind.SCALE_OFFSET:
        return scale_offset_factors(x, enc, mode)
    return kscale_koffset_factors(x, enc, mode)


# Scalar wrappers -----------------------------------------------------------


def grad_scale_offset(x: float, enc: Encoding, mode: GradMode = GradMode.SURROGATE):
    fa, fb = scale_offset_factors(np.float64(x), enc, mode)
    return float(fa), float(fb)


def grad_min_max(x: float, enc: Encoding, mode: GradMode = GradMode.SURROGATE):
    fa, fb = min_max_factors(np.float64(x), enc, mode)
    return float(fa), float(fb)


def grad_beta_gamma(x: float, params: RangeParams, mode: GradMode = GradMode.SURROGATE) -> GradPair:
    fa, fb = beta_gamma_factors(np.float64(x), params, mode)
    return GradPair(np.atleast_1d(fa), np.atleast_1d(fb))


def grad_kscale_koffset(x: float, enc: Encoding, mode: GradMode = GradMode.SURROGATE) -> GradPair:
    fa, fb = kscale_koffset_factors(np.float64(x), enc, mode)
    return GradPair(np.atleast_1d(fa), np.atleast_1d(fb))


def grad_sym(x: float, theta_max: float, spec: QuantSpec, target: SymTarget, theta_max0: float | None = None) -> float:
    if theta_max <= 0:
        raise NonPositiveRange(f"theta_max must be > 0, got {theta_max}")
    return float(sym_factors(np.float64(x), theta_max, spec.k, target, theta_max0))


# ---------------------------------------------------------------------------
# Loss-level accumulation.
# ---------------------------------------------------------------------------


def broadcast_encoding(enc: Encoding) -> Encoding:
    """Reshape array-valued encoding fields to (C, 1) columns."""
    col = lambda v: np.reshape(v, (-1, 1))
    return Encoding(col(enc.theta_min), col(enc.theta_max), col(enc.s), col(enc.z),
                    enc.k, col(enc.n), col(enc.p), enc.clamped)


def accumulate_loss_grads(tensor, params: RangeParams, mode: GradMode = GradMode.SURROGATE,
                          enc: Encoding | None = None):
    """Mean-squared reconstruction loss and its range gradient.

    loss = mean((xhat - x)^2) with xhat the true fake-quantized value;
    grads pair the same residual with the per-element factors of the
    chosen mode.  Per-channel params expect tensor shaped (C, M) and
    reduce within channel slices only.
    """
    x = np.asarray(tensor, dtype=np.float64)
    if x.size == 0:
        raise LengthMismatch("tensor must be non-empty")
    if enc is None:
        enc = params_to_encoding(params, clamp=True)
    per_channel = params.enc_a.size > 1
    if per_channel:
        if x.ndim != 2 or x.shape[0] != params.enc_a.size:
            raise LengthMismatch("per-channel tensor must be shaped (channels, m)")
        enc = broadcast_encoding(enc)
    xhat = fake_quant_asym(x, enc)
    r = xhat - x
    loss = float(np.mean(r * r))
    if params.kind in (ParamKind.BETA_GAMMA, ParamKind.BETA_GAMMA_SIGMOID):
        fa, fb = _beta_gamma_factors_enc(x, params, enc, mode)
    else:
        fa, fb = elementwise_factors(x, params, mode, enc=enc)
    axis = 1 if per_channel else None
    ga = np.atleast_1d(2.0 * np.mean(r * fa, axis=axis))
    gb = np.atleast_1d(2.0 * np.mean(r * fb, axis=axis))
    if not (np.isfinite(loss) and np.all(np.isfinite(ga)) and np.all(np.isfinite(gb))):
        raise NonFiniteGradient("non-finite loss or gradient")
    return loss, GradPair(ga, gb)


def _beta_gamma_factors_enc(x, params: RangeParams, enc: Encoding, mode: GradMode):
    # beta/gamma factors against a pre-broadcast encoding.
    dmin, dmax = min_max_factors(x, enc, mode)
    tmin0 = np.reshape(params.theta_min0, (-1, 1)) if params.theta_min0.size > 1 else params.theta_min0
    tmax0 = np.reshape(params.theta_max0, (-1, 1)) if params.theta_max0.size > 1 else params.theta_max0
    da, db = tmin0 * dmin, tmax0 * dmax
    if params.kind is ParamKind.BETA_GAMMA_SIGMOID:
        sa, sb = sigmoid(params.enc_a), sigmoid(params.enc_b)
        sa = np.reshape(sa, (-1, 1)) if sa.size > 1 else sa
        sb = np.reshape(sb, (-1, 1)) if sb.size > 1 else sb
        da = da * (sa * (1.0 - sa))
        db = db * (sb * (1.0 - sb))
    return da, db


def accumulate_sym_loss_grads(tensor, params: SymRangeParams):
    """Symmetric counterpart of accumulate_loss_grads (single learnable)."""
    x = np.asarray(tensor, dtype=np.float64)
    k = params.k
    tmax = sym_theta_max(params)
    spec = QuantSpec(bits=params.bits, scheme=Scheme.SYMMETRIC)
    xhat = fake_quant_sym(x, tmax if tmax.size == 1 else np.reshape(tmax, (-1, 1)), spec)
    r = xhat - x
    loss = float(np.mean(r * r))
    tm = tmax if tmax.size == 1 else np.reshape(tmax, (-1, 1))
    tm0 = params.theta_max0 if params.theta_max0.size == 1 else np.reshape(params.theta_max0, (-1, 1))
    raw = params.enc if params.enc.size == 1 else np.reshape(params.enc, (-1, 1))
    f = sym_factors(x, tm, k, params.target, tm0, params.use_sigmoid, raw)
    axis = 1 if params.enc.size > 1 else None
    g = np.atleast_1d(2.0 * np.mean(r * f, axis=axis))
    if not (np.isfinite(loss) and np.all(np.isfinite(g))):
        raise NonFiniteGradient("non-finite loss or gradient")
    return loss, g


# ---------------------------------------------------------------------------
# Surrogate-loss gradients and the finite-difference oracle.
# ---------------------------------------------------------------------------


def surrogate_loss(tensor, params: RangeParams) -> float:
    """MSE of the clip-only relaxation (identity inside the range)."""
    x = np.asarray(tensor, dtype=np.float64)
    enc = params_to_encoding(params, clamp=True)
    r = np.clip(x, enc.theta_min, enc.theta_max) - x
    return float(np.mean(r * r))


def surrogate_loss_grads(tensor, params: RangeParams):
    """Exact analytic gradient of surrogate_loss w.r.t. the raw learnables.

    Only clipped elements contribute; the clipped-region factors are the
    SURROGATE-mode entries, which is what makes this quantity verifiable by
    central finite differences.
    """
    x = np.asarray(tensor, dtype=np.float64)
    enc = params_to_encoding(params, clamp=True)
    below = x < enc.theta_min
    above = x > enc.theta_max
    r = np.clip(x, enc.theta_min, enc.theta_max) - x
    loss = float(np.mean(r * r))
    g_min = 2.0 * np.mean(r * below)
    g_max = 2.0 * np.mean(r * above)
    k = params.k
    if params.kind is ParamKind.MIN_MAX:
        ga, gb = g_min, g_max
    elif params.kind is ParamKind.SCALE_OFFSET:
        ga = enc.z * g_min + (enc.z + k) * g_max
        gb = enc.s * (g_min + g_max)
    elif params.kind is ParamKind.KSCALE_KOFFSET:
        ga = (enc.z * g_min + (enc.z + k) * g_max) / k
        gb = k * enc.s * (g_min + g_max)
    else:
        ga = params.theta_min0 * g_min
        gb = params.theta_max0 * g_max
        if params.kind is ParamKind.BETA_GAMMA_SIGMOID:
            sa, sb = sigmoid(params.enc_a), sigmoid(params.enc_b)
            ga = ga * (sa * (1.0 - sa))
            gb = gb * (sb * (1.0 - sb))
    ga = np.atleast_1d(np.asarray(ga, dtype=np.float64))
    gb = np.atleast_1d(np.asarray(gb, dtype=np.float64))
    return loss, GradPair(ga, gb)


def finite_diff(params: RangeParams, tensor, h: float = 1e-5) -> GradPair:
    """Central differences of surrogate_loss in each raw learnable."""
    ga = np.zeros_like(params.enc_a)
    gb = np.zeros_like(params.enc_b)
    for i in range(params.enc_a.size):
        for which, out in (("a", ga), ("b", gb)):
            plus = params.copy()
            minus = params.copy()
            vec_p = plus.enc_a if which == "a" else plus.enc_b
            vec_m = minus.enc_a if which == "a" else minus.enc_b
            vec_p[i] += h
            vec_m[i] -= h
            out[i] = (surrogate_loss(tensor, plus) - surrogate_loss(tensor, minus)) / (2.0 * h)
    return GradPair(ga, gb)


def surrogate_sym_loss(tensor, params: SymRangeParams) -> float:
    x = np.asarray(tensor, dtype=np.float64)
    k = params.k
    tmax = sym_theta_max(params)
    bound = tmax * (k - 1) / k  # s * (k-1)/2
    r = np.clip(x, -bound, bound) - x
    return float(np.mean(r * r))


def surrogate_sym_loss_grads(tensor, params: SymRangeParams):
    """Exact analytic gradient of the symmetric surrogate loss."""
    x = np.asarray(tensor, dtype=np.float64)
    k = params.k
    tmax = sym_theta_max(params)
    bound = tmax * (k - 1) / k
    below = x < -bound
    above = x > bound
    r = np.clip(x, -bound, bound) - x
    loss = float(np.mean(r * r))
    half = (k - 1) / 2
    g_s = 2.0 * np.mean(r * (above * half - below * half))
    if params.target is SymTarget.S:
        g = g_s
    elif params.target is SymTarget.THETA_MAX:
        g = (2.0 / k) * g_s
    else:
        g = params.theta_max0 * (2.0 / k) * g_s
        if params.use_sigmoid:
            sg = sigmoid(params.enc)
            g = g * (sg * (1.0 - sg))
    return loss, np.atleast_1d(np.asarray(g, dtype=np.float64))


def finite_diff_sym(params: SymRangeParams, tensor, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(params.enc)
    for i in range(params.enc.size):
        plus, minus = params.copy(), params.copy()
        plus.enc[i] += h
        minus.enc[i] -= h
        g[i] = (surrogate_sym_loss(tensor, plus) - surrogate_sym_loss(tensor, minus)) / (2.0 * h)
    return g
