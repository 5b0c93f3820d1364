"""Range-learning experiments on synthetic tensors.

A run learns the two range encodings of a fixed tensor by full-batch
gradient descent on the mean-squared reconstruction error, tracing the
derived encoding every step.  Presets expand to the configuration
matrices of the study this package reproduces; `oracle_best_range` is an
independent brute-force optimum used to judge convergence.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import LengthMismatch, NonFiniteGradient
from .grads import (
    GradMode,
    ParamKind,
    RangeParams,
    SymRangeParams,
    SymTarget,
    accumulate_loss_grads,
    accumulate_sym_loss_grads,
    init_range_params,
    init_sym_params,
    params_to_encoding,
    sym_theta_max,
)
from .optim import AdamState, LrPolicy, OptKind, PolicyKind, adam_step, apply_lr_policy, sgd_step

PRESET_NAMES = ("fig3", "fig5", "fig6", "fig7", "fig8", "lr-policies")

# A run is abandoned once its loss exceeds this multiple of the initial loss.
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class ExperimentSpec:
    """Complete, JSON-serializable configuration of one run."""

    preset: str = "custom"
    seed: int = 0
    n_samples: int = 10000
    dist_std: float = 1.0
    relu: bool = False
    bits: int = 3
    lr: float = 1e-2
    steps: int = 5000
    optimizer: str = "adam"              # "sgd" | "adam"
    parameterization: str = "min-max"    # ParamKind values, or SymTarget values
    policy: str = "uniform"              # PolicyKind values
    init_policy: str = "3xmax"           # "3xmax" | "exact"
    grad_mode: str = "surrogate"         # GradMode values
    scheme: str = "asymmetric"           # "asymmetric" | "symmetric"
    sym_lr_scaled: bool = False          # apply per-target equivalence factors
    with_oracle: bool = True


@dataclass(frozen=True)
class TraceRecord:
    step: int
    loss: float
    theta_min: float
    theta_max: float
    s: float
    z: float
    enc_a: float
    enc_b: float
    clamp_event: bool


@dataclass
class RunResult:
    spec: ExperimentSpec
    trace: list[TraceRecord]
    final_mse: float
    oracle_mse: float = float("nan")
    oracle_range: tuple[float, float] = (float("nan"), float("nan"))
    diverged: bool = False

    @property
    def label(self) -> str:
        base = f"{self.spec.parameterization} lr={self.spec.lr:g}"
        if self.spec.policy != "uniform":
            base += f" {self.spec.policy}"
        return base

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.trace], dtype=np.float64)


def sample_distribution(seed: int, n: int, std: float, relu: bool) -> np.ndarray:
    """n normal draws (optionally rectified) from the counter-based stream."""
    if n <= 0:
        raise ValueError("n must be positive")
    if std <= 0:
        raise ValueError("std must be positive")
    x = rng.normals(seed, n, std=std, stream=0)
    return np.maximum(x, 0.0) if relu else x


def mse_loss(x, xhat) -> float:
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise LengthMismatch(f"shape mismatch: {x.shape} vs {xhat.shape}")
    d = xhat - x
    return float(np.mean(d * d))


def make_tensor(spec: ExperimentSpec) -> np.ndarray:
    return sample_distribution(spec.seed, spec.n_samples, spec.dist_std, spec.relu)


def calibration_range(spec: ExperimentSpec, tensor: np.ndarray) -> tuple[float, float]:
    tmin = float(np.min(tensor))
    tmax = float(np.max(tensor))
    if spec.init_policy == "3xmax":
        return tmin, 3.0 * tmax
    if spec.init_policy == "exact":
        return tmin, tmax
    raise ValueError(f"unknown init policy {spec.init_policy!r}")


def init_params_for(spec: ExperimentSpec, tensor: np.ndarray):
    """RangeParams / SymRangeParams at the spec's initialization."""
    if spec.scheme == "symmetric":
        factor = 3.0 if spec.init_policy == "3xmax" else 1.0
        tmax0 = factor * float(np.max(np.abs(tensor)))
        return init_sym_params(SymTarget(spec.parameterization), tmax0, spec.bits)
    tmin0, tmax0 = calibration_range(spec, tensor)
    return init_range_params(ParamKind(spec.parameterization), tmin0, tmax0, spec.bits)


# Learning-rate factors that make the one-step update of the derived s
# identical across symmetric parameterizations (exact under SGD linearity,
# up to eps transients under Adam's sign/scale covariance).
def sym_lr_factor(target: SymTarget, opt: OptKind, k: int, theta_max0: float) -> float:
    if target is SymTarget.S:
        return 1.0
    if opt is OptKind.SGD:
        if target is SymTarget.THETA_MAX:
            return (k / 2.0) ** 2
        return (k / 2.0) ** 2 / theta_max0**2
    if target is SymTarget.THETA_MAX:
        return k / 2.0
    return (k / 2.0) / abs(theta_max0)


def _f(v) -> float:
    """Scalar view of a float or length-1 array."""
    return float(np.asarray(v).reshape(-1)[0])


def run_range_learning(spec: ExperimentSpec, tensor: np.ndarray, params0) -> RunResult:
    """Full-batch range learning; traces every step (loss is pre-update)."""
    if spec.scheme == "symmetric":
        return _run_symmetric(spec, tensor, params0)
    return _run_asymmetric(spec, tensor, params0)


def _oracle_fields(spec: ExperimentSpec, tensor: np.ndarray) -> dict:
    if not spec.with_oracle:
        return {}
    tmin, tmax, mse = oracle_best_range(tensor, spec.bits)
    return {"oracle_mse": mse, "oracle_range": (tmin, tmax)}


def _run_asymmetric(spec: ExperimentSpec, tensor: np.ndarray, params0: RangeParams) -> RunResult:
    params = params0.copy()
    mode = GradMode(spec.grad_mode)
    opt = OptKind(spec.optimizer)
    policy = LrPolicy(PolicyKind(spec.policy), spec.lr)
    state_a = AdamState.zeros(params.enc_a.size)
    state_b = AdamState.zeros(params.enc_b.size)
    trace: list[TraceRecord] = []
    diverged = False
    loss0 = None
    for step in range(spec.steps):
        enc = params_to_encoding(params, clamp=True)
        try:
            loss, grads = accumulate_loss_grads(tensor, params, mode, enc=enc)
        except NonFiniteGradient:
            diverged = True
            break
        trace.append(TraceRecord(
            step, loss, _f(enc.theta_min), _f(enc.theta_max), _f(enc.s),
            _f(enc.z), float(params.enc_a[0]), float(params.enc_b[0]), enc.clamped,
        ))
        if loss0 is None:
            loss0 = loss
        if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * max(loss0, 1e-30):
            diverged = True
            break
        lr_a, lr_b, grads = apply_lr_policy(policy, params, grads, opt)
        if opt is OptKind.ADAM:
            params.enc_a, state_a = adam_step(params.enc_a, grads.d_enc_a, state_a, lr_a)
            params.enc_b, state_b = adam_step(params.enc_b, grads.d_enc_b, state_b, lr_b)
        else:
            params.enc_a = sgd_step(params.enc_a, grads.d_enc_a, lr_a)
            params.enc_b = sgd_step(params.enc_b, grads.d_enc_b, lr_b)
    final = trace[-1].loss if trace else float("nan")
    return RunResult(spec, trace, final, diverged=diverged, **_oracle_fields(spec, tensor))


def _run_symmetric(spec: ExperimentSpec, tensor: np.ndarray, params0: SymRangeParams) -> RunResult:
    params = params0.copy()
    opt = OptKind(spec.optimizer)
    k = params.k
    lr = spec.lr
    if spec.sym_lr_scaled:
        lr = lr * sym_lr_factor(params.target, opt, k, float(params.theta_max0[0]))
    state = AdamState.zeros(params.enc.size)
    trace: list[TraceRecord] = []
    diverged = False
    loss0 = None
    for step in range(spec.steps):
        tmax = _f(sym_theta_max(params))
        s = 2.0 * tmax / k
        try:
            loss, grad = accumulate_sym_loss_grads(tensor, params)
        except NonFiniteGradient:
            diverged = True
            break
        trace.append(TraceRecord(step, loss, -tmax, tmax, s, 0.0, float(params.enc[0]), 0.0, False))
        if loss0 is None:
            loss0 = loss
        if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * max(loss0, 1e-30):
            diverged = True
            break
        if opt is OptKind.ADAM:
            params.enc, state = adam_step(params.enc, grad, state, lr)
        else:
            params.enc = sgd_step(params.enc, grad, lr)
    final = trace[-1].loss if trace else float("nan")
    return RunResult(spec, trace, final, diverged=diverged, **_oracle_fields(spec, tensor))


def oracle_best_range(tensor: np.ndarray, bits: int, grid: int = 200):
    """Brute-force (theta_min, theta_max, mse) through the exact forward.

    Coarse grid over [2*min(x) - eps, 0] x [0, 2*max(x) + eps], then one
    refinement pass around the coarse argmin at 1/100 of each span.  The
    search is independent of the gradient path; bits may be 1 here since
    the forward is evaluated inline.
    """
    x = np.asarray(tensor, dtype=np.float64)
    if x.size == 0:
        raise LengthMismatch("tensor must be non-empty")
    k = (1 << bits) - 1
    xmin, xmax = float(np.min(x)), float(np.max(x))
    eps = 1e-9 + 1e-6 * max(abs(xmin), abs(xmax), 1.0)
    lo_span = (2.0 * xmin - eps, 0.0)
    hi_span = (0.0, 2.0 * xmax + eps)
    n = x.size
    buf = np.empty((grid, n))

    def stage(lo_lo, lo_hi, hi_lo, hi_hi):
        mins = np.linspace(lo_lo, lo_hi, grid)
        maxs = np.linspace(hi_lo, hi_hi, grid)
        best = (np.inf, 0.0, 0.0)
        for i, tmin in enumerate(mins):
            width = maxs - tmin
            ok = width >= 1e-12 * k
            s = np.where(ok, width, 1.0)[:, None] / k          # (g, 1)
            zr = np.rint(tmin / s)
            np.divide(x[None, :], s, out=buf)
            np.rint(buf, out=buf)
            np.subtract(buf, zr, out=buf)
            np.clip(buf, 0, k, out=buf)
            np.add(buf, zr, out=buf)
            np.multiply(buf, s, out=buf)
            np.subtract(buf, x[None, :], out=buf)
            mse = np.einsum("ij,ij->i", buf, buf) / n
            mse[~ok] = np.inf
            j = int(np.argmin(mse))
            if mse[j] < best[0]:
                best = (float(mse[j]), float(tmin), float(maxs[j]))
        return best

    mse0, bmin, bmax = stage(*lo_span, *hi_span)
    half_lo = (lo_span[1] - lo_span[0]) / 200.0
    half_hi = (hi_span[1] - hi_span[0]) / 200.0
    mse1, rmin, rmax = stage(bmin - half_lo, bmin + half_lo, bmax - half_hi, bmax + half_hi)
    if mse1 <= mse0:
        return rmin, rmax, mse1
    return bmin, bmax, mse0


def expand_preset(preset: str, seed: int) -> list[ExperimentSpec]:
    """The per-run specs of a named preset."""
    base = dict(preset=preset, seed=seed)
    specs: list[ExperimentSpec] = []
    if preset == "fig3":
        for bits in (3, 10):
            for lr in (1e-2, 5e-3):
                for param in ("scale-offset", "min-max"):
                    specs.append(ExperimentSpec(**base, bits=bits, lr=lr, parameterization=param))
    elif preset == "fig5":
        for bits in (3, 10):
            for param, policy in (
                ("min-max", "uniform"),
                ("min-max", "minmax-plus"),
                ("beta-gamma", "uniform"),
                ("beta-gamma-sigmoid", "uniform"),
            ):
                specs.append(ExperimentSpec(**base, dist_std=50.0, bits=bits, lr=1e-3,
                                            parameterization=param, policy=policy))
    elif preset == "fig6":
        for opt in ("sgd", "adam"):
            for scaled in (False, True):
                for target in ("sym-s", "sym-theta-max", "sym-gamma"):
                    specs.append(ExperimentSpec(**base, bits=3, lr=5e-3, steps=1000,
                                                optimizer=opt, parameterization=target,
                                                scheme="symmetric", sym_lr_scaled=scaled,
                                                with_oracle=False))
    elif preset == "fig7":
        for bits in (3, 8):
            for param in ("scale-offset", "min-max"):
                specs.append(ExperimentSpec(**base, dist_std=50.0, relu=True, bits=bits,
                                            lr=1e-3, parameterization=param))
    elif preset == "fig8":
        for bits in (4, 8):
            for lr in (1e-2, 5e-3):
                for param in ("scale-offset", "min-max"):
                    specs.append(ExperimentSpec(**base, bits=bits, lr=lr, parameterization=param,
                                                init_policy="exact"))
    elif preset == "lr-policies":
        for bits in (3, 10):
            for lr in (1e-2, 5e-3):
                for param, policy in (
                    ("scale-offset", "uniform"),
                    ("scale-offset", "naive"),
                    ("scale-offset", "sophisticated"),
                    ("kscale-koffset", "uniform"),
                ):
                    specs.append(ExperimentSpec(**base, bits=bits, lr=lr,
                                                parameterization=param, policy=policy))
    else:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESET_NAMES}")
    return specs


def run_preset(preset: str, seed: int) -> list[RunResult]:
    """Run every cell of a preset's configuration matrix."""
    specs = expand_preset(preset, seed)
    results = []
    oracle_cache: dict[tuple, tuple] = {}
    tensor_cache: dict[tuple, np.ndarray] = {}
    for spec in specs:
        tkey = (spec.seed, spec.n_samples, spec.dist_std, spec.relu)
        if tkey not in tensor_cache:
            tensor_cache[tkey] = make_tensor(spec)
        tensor = tensor_cache[tkey]
        params0 = init_params_for(spec, tensor)
        if spec.with_oracle:
            okey = tkey + (spec.bits,)
            if okey not in oracle_cache:
                oracle_cache[okey] = oracle_best_range(tensor, spec.bits)
            tmin, tmax, omse = oracle_cache[okey]
            res = run_range_learning(dataclasses.replace(spec, with_oracle=False), tensor, params0)
            res.oracle_mse = omse
            res.oracle_range = (tmin, tmax)
            res.spec = spec
        else:
            res = run_range_learning(spec, tensor, params0)
        results.append(res)
    return results


def range_distance(result: RunResult) -> float:
    """Euclidean distance of the final derived range to the oracle range."""
    last = result.trace[-1]
    return float(np.hypot(last.theta_min - result.oracle_range[0],
                          last.theta_max - result.oracle_range[1]))
