"""Desk-scale QAT harness: a frozen two-layer MLP with learnable ranges.

Weights are quantized symmetrically per output channel (default 4 bits);
the post-ReLU hidden activation and the network output are quantized
asymmetrically per tensor (default 12 bits).  Only the range learnables
move; backprop runs through the straight-through estimator, which passes
the incoming gradient unchanged for in-range elements and zero for
clipped ones.

Targets are the frozen network's own full-precision outputs plus noise,
so the task loss is dominated by quantization error and range learning
has something to recover.  The symmetric weight quantizers learn the
counterpart of the run's parameterization: scale/offset -> s,
min/max -> theta_max, beta/gamma -> gamma (with the same sigmoid choice).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .grads import (
    GradMode,
    ParamKind,
    SymTarget,
    _beta_gamma_factors_enc,
    elementwise_factors,
    init_range_params,
    init_sym_params,
    params_to_encoding,
    sym_factors,
    sym_theta_max,
)
from .optim import AdamState, adam_step
from .quant import QuantSpec, Scheme, fake_quant_asym, fake_quant_sym

_SYM_COUNTERPART = {
    ParamKind.SCALE_OFFSET: (SymTarget.S, False),
    ParamKind.KSCALE_KOFFSET: (SymTarget.S, False),
    ParamKind.MIN_MAX: (SymTarget.THETA_MAX, False),
    ParamKind.BETA_GAMMA: (SymTarget.GAMMA, False),
    ParamKind.BETA_GAMMA_SIGMOID: (SymTarget.GAMMA, True),
}


@dataclass(frozen=True)
class TinyMLPSpec:
    in_dim: int = 8
    hidden_dim: int = 32
    out_dim: int = 4
    weight_bits: int = 4
    act_bits: int = 12
    batch_size: int = 8
    steps: int = 2000
    lr: float = 1e-3
    parameterization: str = "min-max"
    seed: int = 0
    noise_std: float = 0.01
    eval_size: int = 256
    grad_mode: str = "surrogate"


@dataclass
class QatRun:
    loss_trace: np.ndarray
    fp_loss: float
    final_loss: float
    diverged: bool = False


class WeightQuantizer:
    """Symmetric per-channel fake quantizer over rows of a weight matrix."""

    def __init__(self, weight: np.ndarray, bits: int, target: SymTarget, use_sigmoid: bool):
        self.bits = bits
        self.k = (1 << bits) - 1
        theta_max0 = np.max(np.abs(weight), axis=1)
        self.params = init_sym_params(target, theta_max0, bits, use_sigmoid)
        self.spec = QuantSpec(bits=bits, scheme=Scheme.SYMMETRIC)

    def theta_max(self) -> np.ndarray:
        return np.maximum(sym_theta_max(self.params), 1e-12)

    def forward(self, w: np.ndarray) -> np.ndarray:
        return fake_quant_sym(w, self.theta_max()[:, None], self.spec)

    def grad(self, w: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        p = self.params
        tm = self.theta_max()[:, None]
        tm0 = p.theta_max0[:, None]
        raw = p.enc[:, None]
        f = sym_factors(w, tm, self.k, p.target, tm0, p.use_sigmoid, raw)
        return np.sum(upstream * f, axis=1)


class ActQuantizer:
    """Asymmetric per-tensor fake quantizer with a learnable range pair."""

    def __init__(self, calib: np.ndarray, bits: int, kind: ParamKind):
        self.bits = bits
        tmin0 = float(np.min(calib))
        tmax0 = float(np.max(calib))
        if tmax0 - tmin0 < 1e-6:
            tmax0 = tmin0 + 1e-6
        self.params = init_range_params(kind, tmin0, tmax0, bits)
        self.mode = GradMode.SURROGATE

    def encoding(self):
        return params_to_encoding(self.params, clamp=True)

    def forward(self, x: np.ndarray, enc=None) -> np.ndarray:
        return fake_quant_asym(x, enc if enc is not None else self.encoding())

    def factors(self, x: np.ndarray, enc):
        p = self.params
        if p.kind in (ParamKind.BETA_GAMMA, ParamKind.BETA_GAMMA_SIGMOID):
            return _beta_gamma_factors_enc(x, p, enc, self.mode)
        return elementwise_factors(x, p, self.mode, enc=enc)

    def inside_mask(self, x: np.ndarray, enc) -> np.ndarray:
        rel = np.rint(x / enc.s) - enc.n
        return (rel >= 0) & (rel <= enc.k)


class TinyMLP:
    """Frozen bias-free two-layer ReLU network with four quantizers."""

    def __init__(self, spec: TinyMLPSpec):
        self.spec = spec
        h, i, o = spec.hidden_dim, spec.in_dim, spec.out_dim
        self.W1 = rng.normals(spec.seed, h * i, stream=1).reshape(h, i) / np.sqrt(i)
        self.W2 = rng.normals(spec.seed, o * h, stream=2).reshape(o, h) / np.sqrt(h)
        self.bypass = False
        kind = ParamKind(spec.parameterization)
        target, use_sig = _SYM_COUNTERPART[kind]
        self.wq1 = WeightQuantizer(self.W1, spec.weight_bits, target, use_sig)
        self.wq2 = WeightQuantizer(self.W2, spec.weight_bits, target, use_sig)
        calib_x = self._batch(step=-1, size=spec.batch_size)
        z1, a1, z2 = self._fp_layers(calib_x)
        self.aq1 = ActQuantizer(a1, spec.act_bits, kind)
        self.aq2 = ActQuantizer(z2, spec.act_bits, kind)

    # Data streams: separate counters per purpose, all derived from seed.
    def _batch(self, step: int, size: int) -> np.ndarray:
        n = size * self.spec.in_dim
        return rng.normals(self.spec.seed, n, stream=10, offset=(step + 2) * n).reshape(size, -1)

    def _fp_layers(self, x: np.ndarray):
        z1 = x @ self.W1.T
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.W2.T
        return z1, a1, z2

    def fp_forward(self, x: np.ndarray) -> np.ndarray:
        return self._fp_layers(x)[2]

    def targets(self, x: np.ndarray, noise_offset: int) -> np.ndarray:
        y = self.fp_forward(x)
        noise = rng.normals(self.spec.seed, y.size, std=self.spec.noise_std,
                            stream=11, offset=noise_offset).reshape(y.shape)
        return y + noise

    def forward(self, x: np.ndarray, with_cache: bool = False):
        if self.bypass:
            z1, a1, z2 = self._fp_layers(x)
            return (z2, None) if with_cache else z2
        enc1 = self.aq1.encoding()
        enc2 = self.aq2.encoding()
        w1q = self.wq1.forward(self.W1)
        w2q = self.wq2.forward(self.W2)
        z1 = x @ w1q.T
        a1 = np.maximum(z1, 0.0)
        a1q = self.aq1.forward(a1, enc1)
        z2 = a1q @ w2q.T
        yq = self.aq2.forward(z2, enc2)
        if not with_cache:
            return yq
        cache = dict(z1=z1, a1=a1, a1q=a1q, z2=z2, yq=yq, w1q=w1q, w2q=w2q, enc1=enc1, enc2=enc2)
        return yq, cache

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        d = self.forward(x) - y
        return float(np.mean(d * d))


def build_tiny_mlp(spec: TinyMLPSpec) -> TinyMLP:
    """Frozen random weights, quantizers calibrated on a seeded batch."""
    return TinyMLP(spec)


def synthetic_batches(model: TinyMLP):
    """Seeded infinite stream of (x, y) training batches."""
    spec = model.spec
    step = 0
    per = spec.batch_size * spec.out_dim
    while True:
        x = model._batch(step, spec.batch_size)
        y = model.targets(x, noise_offset=step * per)
        yield x, y
        step += 1


def train_ranges(model: TinyMLP, data=None, spec: TinyMLPSpec | None = None) -> QatRun:
    """Learn all quantizer ranges with Adam; weights stay frozen.

    loss_trace records the loss on a fixed seeded evaluation batch before
    each update, so traces are smooth and deterministic.
    """
    spec = spec or model.spec
    if data is None:
        data = synthetic_batches(model)
    eval_x = rng.normals(spec.seed, spec.eval_size * spec.in_dim, stream=12).reshape(spec.eval_size, -1)
    eval_y = model.fp_forward(eval_x)

    groups = []  # (get, set, grad_fn) triples resolved per step
    if not model.bypass:
        groups = ["wq1", "wq2", "aq1a", "aq1b", "aq2a", "aq2b"]
    states = {g: AdamState.zeros(_group_param(model, g).size) for g in groups}

    losses = []
    diverged = False
    loss0 = None
    for _ in range(spec.steps):
        losses.append(model.loss(eval_x, eval_y))
        if loss0 is None:
            loss0 = losses[0]
        if not np.isfinite(losses[-1]) or losses[-1] > 1e6 * max(loss0, 1e-30):
            diverged = True
            break
        if model.bypass:
            continue
        x, y = next(data)
        grads = _backward(model, x, y)
        bad = any(not np.all(np.isfinite(g)) for g in grads.values())
        if bad:
            diverged = True
            break
        for g in groups:
            new, states[g] = adam_step(_group_param(model, g), grads[g], states[g], spec.lr)
            _set_group_param(model, g, new)
    fp_loss = _bypass_loss(model, eval_x, eval_y)
    trace = np.array(losses, dtype=np.float64)
    final = float(trace[-1]) if trace.size else float("nan")
    return QatRun(loss_trace=trace, fp_loss=fp_loss, final_loss=final, diverged=diverged)


def _bypass_loss(model: TinyMLP, x, y) -> float:
    was = model.bypass
    model.bypass = True
    out = model.loss(x, y)
    model.bypass = was
    return out


def _group_param(model: TinyMLP, g: str) -> np.ndarray:
    if g == "wq1":
        return model.wq1.params.enc
    if g == "wq2":
        return model.wq2.params.enc
    if g == "aq1a":
        return model.aq1.params.enc_a
    if g == "aq1b":
        return model.aq1.params.enc_b
    if g == "aq2a":
        return model.aq2.params.enc_a
    return model.aq2.params.enc_b


def _set_group_param(model: TinyMLP, g: str, v: np.ndarray) -> None:
    if g == "wq1":
        model.wq1.params.enc = v
    elif g == "wq2":
        model.wq2.params.enc = v
    elif g == "aq1a":
        model.aq1.params.enc_a = v
    elif g == "aq1b":
        model.aq1.params.enc_b = v
    elif g == "aq2a":
        model.aq2.params.enc_a = v
    else:
        model.aq2.params.enc_b = v


def _backward(model: TinyMLP, x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Task-loss gradients w.r.t. every range learnable (manual backprop)."""
    yq, c = model.forward(x, with_cache=True)
    n = yq.size
    d_yq = 2.0 * (yq - y) / n

    fa2, fb2 = model.aq2.factors(c["z2"], c["enc2"])
    g_aq2a = np.atleast_1d(np.sum(d_yq * fa2))
    g_aq2b = np.atleast_1d(np.sum(d_yq * fb2))
    d_z2 = d_yq * model.aq2.inside_mask(c["z2"], c["enc2"])

    d_w2q = d_z2.T @ c["a1q"]
    g_wq2 = model.wq2.grad(model.W2, d_w2q)
    d_a1q = d_z2 @ c["w2q"]

    fa1, fb1 = model.aq1.factors(c["a1"], c["enc1"])
    g_aq1a = np.atleast_1d(np.sum(d_a1q * fa1))
    g_aq1b = np.atleast_1d(np.sum(d_a1q * fb1))
    d_a1 = d_a1q * model.aq1.inside_mask(c["a1"], c["enc1"])

    d_z1 = d_a1 * (c["z1"] > 0)
    d_w1q = d_z1.T @ x
    g_wq1 = model.wq1.grad(model.W1, d_w1q)

    return {
        "wq1": g_wq1,
        "wq2": g_wq2,
        "aq1a": g_aq1a,
        "aq1b": g_aq1b,
        "aq2a": g_aq2a,
        "aq2b": g_aq2b,
    }
