"""SGD and Adam steppers plus per-parameterization learning-rate policies.

Adam uses (beta1, beta2, eps) = (0.9, 0.999, 1e-8) with standard bias
correction and no weight decay.  Both steppers accept a scalar or
per-element learning rate and return new values; state is never mutated
in place, so a single run owns its stepper state.

Policies rescale the effective learning rates (and, for `sophisticated`,
replace the offset gradient) before the step:

    uniform        lr_a = lr_b = base_lr
    naive          lr scaled by the current |parameter|, elementwise
    sophisticated  scale/offset only: lr_s scaled by 2/k (Adam) or 2/k^2
                   (SGD) so the step of s tracks the step of the derived
                   s under min/max; the z gradient is replaced by
                   dL/dtheta_min / s, using the exact (s, z) chain
    minmax-plus    min/max only: lr scaled by |theta_min0| / |theta_max0|
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import PolicyMismatch
from .grads import GradPair, ParamKind, RangeParams, params_to_encoding


class OptKind(Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def sgd_step(param, grad, lr):
    return param - lr * grad


def adam_step(param, grad, state: AdamState, lr):
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    new = param - lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


class PolicyKind(Enum):
    UNIFORM = "uniform"
    NAIVE = "naive"
    SOPHISTICATED = "sophisticated"
    MINMAX_PLUS = "minmax-plus"


@dataclass(frozen=True)
class LrPolicy:
    kind: PolicyKind
    base_lr: float

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")


def apply_lr_policy(policy: LrPolicy, params: RangeParams, grads: GradPair, opt: OptKind):
    """(lr_a, lr_b, grads') for the next step.  Never mutates params."""
    lr = policy.base_lr
    if policy.kind is PolicyKind.UNIFORM:
        return lr, lr, grads
    if policy.kind is PolicyKind.NAIVE:
        if params.kind is not ParamKind.SCALE_OFFSET:
            raise PolicyMismatch("naive policy requires scale/offset")
        return lr * np.abs(params.enc_a), lr * np.abs(params.enc_b), grads
    if policy.kind is PolicyKind.SOPHISTICATED:
        if params.kind is not ParamKind.SCALE_OFFSET:
            raise PolicyMismatch("sophisticated policy requires scale/offset")
        k = params.k
        enc = params_to_encoding(params, clamp=True)
        # dL/dtheta_min via the exact Jacobian transpose of (s, z).
        d_min = grads.d_enc_a * (-1.0 / k) + grads.d_enc_b * (enc.z + k) / (k * enc.s)
        lr_a = lr * (2.0 / k) if opt is OptKind.ADAM else lr * (2.0 / k**2)
        return lr_a, lr, GradPair(grads.d_enc_a, d_min / enc.s)
    if policy.kind is PolicyKind.MINMAX_PLUS:
        if params.kind is not ParamKind.MIN_MAX:
            raise PolicyMismatch("minmax-plus policy requires min/max")
        return lr * np.abs(params.theta_min0), lr * np.abs(params.theta_max0), grads
    raise ValueError(policy.kind)
