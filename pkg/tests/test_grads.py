import numpy as np
import pytest

from qrange import rng
from qrange.errors import NonFiniteGradient
from qrange.grads import (
    GradMode,
    ParamKind,
    RangeParams,
    SIGMOID_INIT,
    SymRangeParams,
    SymTarget,
    accumulate_loss_grads,
    accumulate_sym_loss_grads,
    beta_gamma_factors,
    finite_diff,
    grad_beta_gamma,
    grad_kscale_koffset,
    grad_min_max,
    grad_scale_offset,
    grad_sym,
    init_range_params,
    init_sym_params,
    min_max_factors,
    params_to_encoding,
    scale_offset_factors,
    sigmoid,
    surrogate_loss_grads,
    sym_factors,
)
from qrange.quant import QuantSpec, Scheme, derive_encoding

SPEC3 = QuantSpec(bits=3)
SPEC3S = QuantSpec(bits=3, scheme=Scheme.SYMMETRIC)
ENC = derive_encoding(-1.0, 1.0, SPEC3)
TABLE, SURR = GradMode.TABLE, GradMode.SURROGATE


def test_params_to_encoding_examples():
    mm = params_to_encoding(init_range_params(ParamKind.MIN_MAX, -1.0, 1.0, 3))
    assert float(mm.s[0]) == pytest.approx(2 / 7)
    assert float(mm.z[0]) == pytest.approx(-3.5)

    bg = params_to_encoding(init_range_params(ParamKind.BETA_GAMMA, -1.0, 1.0, 3))
    assert float(bg.s[0]) == float(mm.s[0]) and float(bg.z[0]) == float(mm.z[0])

    ks = RangeParams(ParamKind.KSCALE_KOFFSET, 2.0, -0.5, -1.0, 1.0, 3)
    ke = params_to_encoding(ks)
    assert float(ke.s[0]) == pytest.approx(2 / 7)
    assert float(ke.z[0]) == pytest.approx(-3.5)


def test_sigmoid_init_opens_at_calibration_range():
    p = init_range_params(ParamKind.BETA_GAMMA_SIGMOID, -1.0, 1.0, 3)
    assert float(p.enc_a[0]) == pytest.approx(SIGMOID_INIT)
    enc = params_to_encoding(p)
    assert float(enc.theta_min[0]) == pytest.approx(-0.999)
    assert float(enc.theta_max[0]) == pytest.approx(0.999)


def test_grad_scale_offset_examples():
    assert grad_scale_offset(0.4, ENC, TABLE) == pytest.approx((-0.4, 0.0))
    assert grad_scale_offset(0.4, ENC, SURR) == pytest.approx((-0.4, 0.0))
    assert grad_scale_offset(-2.0, ENC, TABLE) == pytest.approx((-4.0, 1.0))
    # surrogate clipped entries carry the unrounded offset and the step size
    assert grad_scale_offset(-2.0, ENC, SURR) == pytest.approx((-3.5, 2 / 7))
    assert grad_scale_offset(2.0, ENC, TABLE) == pytest.approx((3.0, 1.0))
    assert grad_scale_offset(2.0, ENC, SURR) == pytest.approx((3.5, 2 / 7))


def test_grad_min_max_examples():
    for mode in (TABLE, SURR):
        dmin, dmax = grad_min_max(0.4, ENC, mode)
        assert dmin == pytest.approx(0.0571429, abs=1e-7)
        assert dmax == pytest.approx(-0.0571429, abs=1e-7)
        assert dmin + dmax == pytest.approx(0.0, abs=1e-15)


def test_grad_min_max_surrogate_matches_clip_derivative():
    # clipped-region entries equal central differences of the relaxation
    # composed with (min,max) -> (s,z); interior entries keep the rounding
    # term, which the relaxation cannot see (its interior residual is zero).
    from qrange.quant import ste_surrogate

    h = 1e-7
    for x in (-2.0, 2.0):
        def f(tmin, tmax):
            e = derive_encoding(tmin, tmax, SPEC3)
            return ste_surrogate(x, e.s, e.z, e.k)

        fd_min = (f(-1 + h, 1) - f(-1 - h, 1)) / (2 * h)
        fd_max = (f(-1, 1 + h) - f(-1, 1 - h)) / (2 * h)
        dmin, dmax = grad_min_max(x, ENC, SURR)
        assert dmin == pytest.approx(fd_min, rel=1e-6, abs=1e-9)
        assert dmax == pytest.approx(fd_max, rel=1e-6, abs=1e-9)


def test_grad_beta_gamma_examples():
    params = init_range_params(ParamKind.BETA_GAMMA, -1.0, 1.0, 3)
    g = grad_beta_gamma(0.4, params, SURR)
    assert float(g.d_enc_a[0]) == pytest.approx(-0.0571429, abs=1e-7)
    assert float(g.d_enc_b[0]) == pytest.approx(-0.0571429, abs=1e-7)


def test_grad_beta_gamma_is_scaled_min_max_exactly():
    params = RangeParams(ParamKind.BETA_GAMMA, 0.7, 1.2, -1.3, 0.9, 4)
    enc = params_to_encoding(params)
    for x in np.linspace(-3, 3, 41):
        g = grad_beta_gamma(float(x), params, SURR)
        dmin, dmax = min_max_factors(np.full(1, x), enc, SURR)
        assert float(g.d_enc_a[0]) == float((params.theta_min0 * dmin)[0])
        assert float(g.d_enc_b[0]) == float((params.theta_max0 * dmax)[0])


def test_grad_beta_gamma_sigmoid_chain():
    # raw 0 -> sigmoid 0.5: effective range (-0.5, 0.5), chain factor 0.25
    p_sig = RangeParams(ParamKind.BETA_GAMMA_SIGMOID, 0.0, 0.0, -1.0, 1.0, 3)
    p_plain = RangeParams(ParamKind.BETA_GAMMA, 0.5, 0.5, -1.0, 1.0, 3)
    g_sig = grad_beta_gamma(0.4, p_sig, SURR)
    g_plain = grad_beta_gamma(0.4, p_plain, SURR)
    assert float(g_sig.d_enc_a[0]) == pytest.approx(0.25 * float(g_plain.d_enc_a[0]))
    assert float(g_sig.d_enc_b[0]) == pytest.approx(0.25 * float(g_plain.d_enc_b[0]))


def test_grad_kscale_koffset_examples():
    g = grad_kscale_koffset(0.4, ENC, SURR)
    assert float(g.d_enc_a[0]) == pytest.approx(-0.4 / 7)
    assert float(g.d_enc_b[0]) == 0.0
    g = grad_kscale_koffset(-2.0, ENC, SURR)
    assert float(g.d_enc_a[0]) == pytest.approx(-0.5)
    assert float(g.d_enc_b[0]) == pytest.approx(2.0)


def test_grad_sym_examples():
    assert grad_sym(0.4, 1.0, SPEC3S, SymTarget.S) == pytest.approx(-0.4)
    assert grad_sym(0.4, 1.0, SPEC3S, SymTarget.THETA_MAX) == pytest.approx(-0.8 / 7)
    assert grad_sym(0.4, 1.0, SPEC3S, SymTarget.GAMMA, 1.0) == pytest.approx(-0.114286, abs=1e-6)


def _random_encs(n, bits, seed):
    lo = -0.2 - 2.5 * rng.uniforms(seed, n, stream=1)
    hi = 0.2 + 2.5 * rng.uniforms(seed, n, stream=2)
    return lo, hi


def test_exact_chain_identities_bulk():
    n = 100_000
    bits = 4
    k = (1 << bits) - 1
    lo, hi = _random_encs(n, bits, 11)
    x = rng.normals(11, n, std=2.0, stream=3)
    enc = derive_encoding(lo, hi, QuantSpec(bits=bits))

    fa, fb = scale_offset_factors(x, enc, SURR)
    ka, kb = (fa / k, k * fb)
    from qrange.grads import kscale_koffset_factors

    ga, gb = kscale_koffset_factors(x, enc, SURR)
    assert np.array_equal(ka, ga) and np.array_equal(kb, gb)

    base = sym_factors(x, hi, k, SymTarget.S)
    tm = sym_factors(x, hi, k, SymTarget.THETA_MAX)
    gm = sym_factors(x, hi, k, SymTarget.GAMMA, hi)
    assert np.array_equal(tm, (2.0 / k) * base)
    assert np.array_equal(gm, hi * tm)


def test_inside_region_zero_sum_bulk():
    n = 10_000
    lo, hi = _random_encs(n, 3, 5)
    x = rng.normals(5, n, stream=4)
    enc = derive_encoding(lo, hi, SPEC3)
    dmin, dmax = min_max_factors(x, enc, SURR)
    inside = (np.rint(x / enc.s) - enc.n >= 0) & (np.rint(x / enc.s) - enc.n <= enc.k)
    gap = np.abs((dmin + dmax)[inside])
    assert np.all(gap <= np.spacing(np.float64(1.0)))


def test_accumulate_examples():
    p = init_range_params(ParamKind.MIN_MAX, -1.0, 1.0, 3)
    loss, g = accumulate_loss_grads(np.array([0.4]), p)
    assert loss == pytest.approx((2 / 7 - 0.4) ** 2)
    assert float(g.d_enc_a[0]) == pytest.approx(2 * (2 / 7 - 0.4) * 0.0571429, abs=1e-8)
    assert float(g.d_enc_b[0]) == pytest.approx(-2 * (2 / 7 - 0.4) * 0.0571429, abs=1e-8)


def test_accumulate_on_exact_grid_is_stationary():
    # grid points with x/s safely away from rounding ties
    p = init_range_params(ParamKind.MIN_MAX, -1.0, 1.0, 3)
    enc = params_to_encoding(p)
    levels = float(enc.s[0]) * (np.arange(8) + float(enc.n[0]))
    loss, g = accumulate_loss_grads(levels, p)
    assert loss == 0.0
    assert float(g.d_enc_a[0]) == 0.0 and float(g.d_enc_b[0]) == 0.0


def test_accumulate_nonfinite_raises():
    p = RangeParams(ParamKind.MIN_MAX, -1.0, 1.0, -1.0, 1.0, 3)
    with pytest.raises(NonFiniteGradient):
        accumulate_loss_grads(np.array([np.nan]), p)


def test_accumulate_per_channel_reduces_within_slices():
    p = RangeParams(ParamKind.MIN_MAX, [-1.0, -2.0], [1.0, 2.0], [-1.0, -2.0], [1.0, 2.0], 3)
    x = np.vstack([np.linspace(-1, 1, 64), np.linspace(-2, 2, 64)])
    loss, g = accumulate_loss_grads(x, p)
    p0 = init_range_params(ParamKind.MIN_MAX, -1.0, 1.0, 3)
    _, g0 = accumulate_loss_grads(x[0], p0)
    assert float(g.d_enc_a[0]) == pytest.approx(float(g0.d_enc_a[0]))
    assert float(g.d_enc_b[0]) == pytest.approx(float(g0.d_enc_b[0]))


def test_finite_diff_flat_loss_on_representable_tensor():
    p = init_range_params(ParamKind.MIN_MAX, -1.0, 1.0, 3)
    x = np.full(16, 2 / 7)  # exactly representable, strictly inside
    fd = finite_diff(p, x)
    assert float(fd.d_enc_a[0]) == 0.0 and float(fd.d_enc_b[0]) == 0.0
    _, g = surrogate_loss_grads(x, p)
    assert float(g.d_enc_a[0]) == 0.0 and float(g.d_enc_b[0]) == 0.0


def test_finite_diff_inside_only_matches_surrogate_grads():
    p = init_range_params(ParamKind.MIN_MAX, -1.0, 1.0, 3)
    x = np.linspace(-0.8, 0.8, 33)
    fd = finite_diff(p, x)
    _, g = surrogate_loss_grads(x, p)
    assert float(fd.d_enc_a[0]) == pytest.approx(float(g.d_enc_a[0]), abs=1e-8)
    assert float(fd.d_enc_b[0]) == pytest.approx(float(g.d_enc_b[0]), abs=1e-8)


def test_finite_diff_below_matches_analytic():
    p = init_range_params(ParamKind.MIN_MAX, -1.0, 1.0, 3)
    x = np.array([-2.0])
    fd = finite_diff(p, x)
    _, g = surrogate_loss_grads(x, p)
    assert float(fd.d_enc_a[0]) == pytest.approx(float(g.d_enc_a[0]), rel=1e-4)
    assert float(g.d_enc_a[0]) == pytest.approx(2 * (-1.0 + 2.0), rel=1e-12)  # 2*(theta_min - x)


def test_sym_accumulate_matches_scalar_path():
    p = init_sym_params(SymTarget.THETA_MAX, 1.0, 3)
    x = np.array([0.4])
    loss, g = accumulate_sym_loss_grads(x, p)
    xhat = 2 / 7
    assert loss == pytest.approx((xhat - 0.4) ** 2)
    assert float(g[0]) == pytest.approx(2 * (xhat - 0.4) * (-0.8 / 7), rel=1e-9)
