"""Finite-difference certification of the analytic range gradients.

Each trial draws a small tensor and a randomized parameter state, drops
elements inside tie/boundary exclusion zones, and compares the exact
analytic gradient of the surrogate loss against central differences of
the same loss.  The exclusion zone is the spec'd 1e-3*s band around clip
boundaries widened by the finite-difference perturbation radius, so the
clip state cannot flip between the +h and -h evaluations.

The pass rule per component is |analytic - fd| <= max(1e-4*|fd|, 1e-8),
reported as rel = |analytic - fd| / max(|fd|, 1e-4) <= 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .grads import (
    ParamKind,
    RangeParams,
    SymRangeParams,
    SymTarget,
    finite_diff,
    finite_diff_sym,
    params_to_encoding,
    surrogate_loss_grads,
    surrogate_sym_loss_grads,
    sym_theta_max,
)

CHECKABLE = [k.value for k in ParamKind] + [t.value for t in SymTarget]

_BITS_CHOICES = (2, 3, 4, 6, 8)


@dataclass
class GradCheckReport:
    parameterization: str
    trials: int
    max_rel_err: float
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def _trial_values(seed: int, trial: int, n: int) -> np.ndarray:
    return rng.uniforms(seed, n, stream=1000 + trial)


def _sc(v) -> float:
    return float(np.asarray(v).reshape(-1)[0])


def _edge_sensitivity(params: RangeParams) -> float:
    """Bound on |d theta_edge / d learnable| for the fd zone margin."""
    enc = params_to_encoding(params, clamp=True)
    k = params.k
    if params.kind is ParamKind.MIN_MAX:
        return 1.0
    if params.kind is ParamKind.SCALE_OFFSET:
        return max(abs(_sc(enc.z)) + k, _sc(enc.s))
    if params.kind is ParamKind.KSCALE_KOFFSET:
        zp = _sc(enc.z) / k
        return max(abs(zp) + 1.0, _sc(enc.s) * k)
    m = max(abs(_sc(params.theta_min0)), abs(_sc(params.theta_max0)))
    return m  # sigmoid' <= 1/4 only shrinks this


def _make_asym_trial(kind: ParamKind, seed: int, trial: int):
    u = _trial_values(seed, trial, 8)
    bits = _BITS_CHOICES[int(u[0] * len(_BITS_CHOICES)) % len(_BITS_CHOICES)]
    std = 0.5 + 1.5 * u[1]
    n = 32
    x = rng.normals(seed, n, std=std, stream=2000 + trial)
    tmin0 = -(0.8 + 1.7 * u[2]) * std
    tmax0 = (0.8 + 1.7 * u[3]) * std
    k = (1 << bits) - 1
    if kind in (ParamKind.BETA_GAMMA, ParamKind.BETA_GAMMA_SIGMOID):
        # current effective range strictly inside calibration for the
        # sigmoid variant (scalings in (0, 1)).
        bu = 0.25 + 0.7 * u[4]
        gu = 0.25 + 0.7 * u[5]
        if kind is ParamKind.BETA_GAMMA_SIGMOID:
            a = np.log(bu / (1.0 - bu))
            b = np.log(gu / (1.0 - gu))
        else:
            a, b = bu, gu
        return x, RangeParams(kind, a, b, tmin0, tmax0, bits)
    tmin = tmin0 * (0.6 + 0.8 * u[4])
    tmax = tmax0 * (0.6 + 0.8 * u[5])
    if kind is ParamKind.MIN_MAX:
        return x, RangeParams(kind, tmin, tmax, tmin0, tmax0, bits)
    width = tmax - tmin
    if kind is ParamKind.SCALE_OFFSET:
        return x, RangeParams(kind, width / k, tmin / (width / k), tmin0, tmax0, bits)
    return x, RangeParams(kind, width, tmin / width, tmin0, tmax0, bits)


def _filter_asym(x: np.ndarray, params: RangeParams, h: float) -> np.ndarray:
    enc = params_to_encoding(params, clamp=True)
    s = _sc(enc.s)
    zone = 1e-3 * s + 3.0 * h * _edge_sensitivity(params)
    t = x / s
    tie = np.abs(np.abs(t - np.floor(t)) - 0.5) < 1e-3
    near_edge = (np.abs(x - enc.theta_min) < zone) | (np.abs(x - enc.theta_max) < zone)
    return x[~(tie | near_edge)]


def _make_sym_trial(target: SymTarget, seed: int, trial: int):
    u = _trial_values(seed, trial, 6)
    bits = _BITS_CHOICES[int(u[0] * len(_BITS_CHOICES)) % len(_BITS_CHOICES)]
    std = 0.5 + 1.5 * u[1]
    x = rng.normals(seed, 32, std=std, stream=2000 + trial)
    tmax0 = (0.8 + 1.7 * u[2]) * std
    tmax = tmax0 * (0.5 + 0.9 * u[3])
    k = (1 << bits) - 1
    if target is SymTarget.S:
        enc = 2.0 * tmax / k
    elif target is SymTarget.THETA_MAX:
        enc = tmax
    else:
        enc = tmax / tmax0
    return x, SymRangeParams(target, enc, tmax0, bits)


def _filter_sym(x: np.ndarray, params: SymRangeParams, h: float) -> np.ndarray:
    k = params.k
    tmax = _sc(sym_theta_max(params))
    s = 2.0 * tmax / k
    bound = tmax * (k - 1) / k
    if params.target is SymTarget.S:
        sens = (k - 1) / 2.0
    elif params.target is SymTarget.THETA_MAX:
        sens = 1.0
    else:
        sens = abs(float(params.theta_max0[0]))
    zone = 1e-3 * s + 3.0 * h * sens
    t = x / s
    tie = np.abs(np.abs(t - np.floor(t)) - 0.5) < 1e-3
    near_edge = (np.abs(x - bound) < zone) | (np.abs(x + bound) < zone)
    return x[~(tie | near_edge)]


def check_parameterization(name: str, trials: int = 1000, seed: int = 0, h: float = 1e-5) -> GradCheckReport:
    """Max relative error over `trials` seeded samples of one parameterization."""
    sym = name in {t.value for t in SymTarget}
    max_rel = 0.0
    done = 0
    attempt = 0
    while done < trials and attempt < 4 * trials:
        attempt += 1
        if sym:
            x, params = _make_sym_trial(SymTarget(name), seed, attempt)
            x = _filter_sym(x, params, h)
            if x.size < 4:
                continue
            _, g = surrogate_sym_loss_grads(x, params)
            fd = finite_diff_sym(params, x, h)
            diffs = np.abs(g - fd)
            scales = np.maximum(np.abs(fd), 1e-4)
        else:
            x, params = _make_asym_trial(ParamKind(name), seed, attempt)
            x = _filter_asym(x, params, h)
            if x.size < 4:
                continue
            _, g = surrogate_loss_grads(x, params)
            fd = finite_diff(params, x, h)
            diffs = np.abs(np.concatenate([g.d_enc_a - fd.d_enc_a, g.d_enc_b - fd.d_enc_b]))
            scales = np.maximum(np.abs(np.concatenate([fd.d_enc_a, fd.d_enc_b])), 1e-4)
        max_rel = max(max_rel, float(np.max(diffs / scales)))
        done += 1
    return GradCheckReport(name, done, max_rel)
