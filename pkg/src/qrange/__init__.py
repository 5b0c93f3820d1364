"""Learnable uniform-quantization ranges: forward paths, analytic range
gradients under several parameterizations, optimizer policies, and a
reproducible experiment harness."""

from .errors import (
    DegenerateRange,
    LengthMismatch,
    NonFiniteGradient,
    NonPositiveRange,
    PolicyMismatch,
    QRangeError,
)
from .grads import (
    GradMode,
    GradPair,
    ParamKind,
    RangeParams,
    SymRangeParams,
    SymTarget,
    accumulate_loss_grads,
    accumulate_sym_loss_grads,
    finite_diff,
    finite_diff_sym,
    grad_beta_gamma,
    grad_kscale_koffset,
    grad_min_max,
    grad_scale_offset,
    grad_sym,
    init_range_params,
    init_sym_params,
    params_to_encoding,
    surrogate_loss_grads,
    surrogate_sym_loss_grads,
)
from .lab import (
    ExperimentSpec,
    RunResult,
    TraceRecord,
    expand_preset,
    mse_loss,
    oracle_best_range,
    run_preset,
    run_range_learning,
    sample_distribution,
)
from .net import QatRun, TinyMLPSpec, build_tiny_mlp, train_ranges
from .optim import AdamState, LrPolicy, OptKind, PolicyKind, adam_step, apply_lr_policy, sgd_step
from .quant import (
    Encoding,
    QuantSpec,
    RegionLabel,
    S_FLOOR,
    Scheme,
    classify_region,
    derive_encoding,
    fake_quant_asym,
    fake_quant_sym,
    round_half_even,
    ste_surrogate,
)

__version__ = "0.1.0"
