"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.  Heavy artifacts (tensors,
brute-force oracles, 5000-step runs) are cached at module scope and shared
across criteria, so wall-clock budgets apply to first use.
"""

import dataclasses
import time

import numpy as np
import pytest

from qrange.gradcheck import CHECKABLE, check_parameterization
from qrange.grads import (
    GradMode,
    ParamKind,
    RangeParams,
    SymTarget,
    accumulate_loss_grads,
    init_range_params,
    kscale_koffset_factors,
    min_max_factors,
    params_to_encoding,
    scale_offset_factors,
    sym_factors,
)
from qrange.lab import (
    ExperimentSpec,
    init_params_for,
    oracle_best_range,
    run_range_learning,
    sample_distribution,
)
from qrange.net import TinyMLPSpec, build_tiny_mlp, train_ranges
from qrange.optim import AdamState, adam_step
from qrange.quant import QuantSpec, Scheme, derive_encoding, fake_quant_asym, fake_quant_sym
from qrange import rng as qrng

_tensors: dict = {}
_oracles: dict = {}
_runs: dict = {}
_net_runs: dict = {}


def tensor_for(seed, std=1.0, relu=False, n=10000):
    key = (seed, std, relu, n)
    if key not in _tensors:
        _tensors[key] = sample_distribution(seed, n, std, relu)
    return _tensors[key]


def oracle_for(seed, bits, std=1.0, relu=False):
    key = (seed, std, relu, bits)
    if key not in _oracles:
        _oracles[key] = oracle_best_range(tensor_for(seed, std, relu), bits)
    return _oracles[key]


def run_for(**kw):
    spec = ExperimentSpec(with_oracle=False, **kw)
    if spec not in _runs:
        x = tensor_for(spec.seed, spec.dist_std, spec.relu, spec.n_samples)
        _runs[spec] = run_range_learning(spec, x, init_params_for(spec, x))
    return _runs[spec]


def net_run_for(**kw):
    spec = TinyMLPSpec(**kw)
    if spec not in _net_runs:
        _net_runs[spec] = train_ranges(build_tiny_mlp(spec), spec=spec)
    return _net_runs[spec]


def report(num, name, ok, detail=""):
    print(f"\nACCEPTANCE {num:02d} ({name}): {'PASS' if ok else 'FAIL'}  {detail}")


def dist_trajectory(result, oracle):
    tm = result.column("theta_min")
    tx = result.column("theta_max")
    return np.hypot(tm - oracle[0], tx - oracle[1])


def test_c01_gradient_oracle_suite():
    t0 = time.monotonic()
    worst = {}
    for name in CHECKABLE:
        rep = check_parameterization(name, trials=1000, seed=2024)
        worst[name] = rep.max_rel_err
        assert rep.trials == 1000
    elapsed = time.monotonic() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 10.0
    report(1, "gradient oracle suite", ok,
           f"max rel err {max(worst.values()):.2e} across {len(worst)} parameterizations, {elapsed:.1f}s")
    assert max(worst.values()) <= 1e-4, worst
    assert elapsed < 10.0


def test_c02_exact_scaling_identities():
    n = 100_000
    bits = 4
    k = (1 << bits) - 1
    lo = -0.2 - 2.5 * qrng.uniforms(31, n, stream=1)
    hi = 0.2 + 2.5 * qrng.uniforms(31, n, stream=2)
    x = qrng.normals(31, n, std=2.0, stream=3)
    enc = derive_encoding(lo, hi, QuantSpec(bits=bits))

    # beta/gamma = (theta_min0, theta_max0) . min/max at the effective range
    params = RangeParams(ParamKind.BETA_GAMMA, np.ones(n), np.ones(n), lo, hi, bits)
    from qrange.grads import beta_gamma_factors

    ba, bb = beta_gamma_factors(x, params, GradMode.SURROGATE)
    dmin, dmax = min_max_factors(x, enc, GradMode.SURROGATE)
    assert np.array_equal(ba, lo * dmin)
    assert np.array_equal(bb, hi * dmax)

    # kscale/koffset = (1/k, k) . scale/offset
    fa, fb = scale_offset_factors(x, enc, GradMode.SURROGATE)
    ka, kb = kscale_koffset_factors(x, enc, GradMode.SURROGATE)
    assert np.all(np.abs(ka - (1.0 / k) * fa) <= np.spacing(np.abs(ka)))
    assert np.array_equal(kb, k * fb)

    # symmetric proportionalities: (2/k) and theta_max0
    base = sym_factors(x, hi, k, SymTarget.S)
    tm = sym_factors(x, hi, k, SymTarget.THETA_MAX)
    gm = sym_factors(x, hi, k, SymTarget.GAMMA, hi)
    assert np.array_equal(tm, (2.0 / k) * base)
    assert np.array_equal(gm, hi * tm)

    report(2, "exact scaling identities", True, f"{n} random points, bit-exact / <=1 ulp")


def test_c03_symmetric_equivalence():
    t0 = time.monotonic()
    results = {}
    for opt in ("sgd", "adam"):
        traces = []
        for target in ("sym-s", "sym-theta-max", "sym-gamma"):
            res = run_for(seed=42, bits=3, lr=5e-3, steps=1000, optimizer=opt,
                          parameterization=target, scheme="symmetric", sym_lr_scaled=True)
            traces.append(res.column("s"))
        worst = 0.0
        for i in range(3):
            for j in range(i + 1, 3):
                worst = max(worst, float(np.max(np.abs(traces[i] - traces[j]) / np.abs(traces[j]))))
        results[opt] = worst
    elapsed = time.monotonic() - t0
    ok = results["sgd"] <= 1e-6 and results["adam"] <= 1e-3 and elapsed < 5.0
    report(3, "symmetric equivalence", ok,
           f"sgd {results['sgd']:.2e} (tol 1e-6), adam {results['adam']:.2e} (tol 1e-3), {elapsed:.1f}s")
    assert results["sgd"] <= 1e-6
    assert results["adam"] <= 1e-3
    assert elapsed < 5.0


def test_c04_beta_gamma_equals_minmax_plus():
    t0 = time.monotonic()
    kw = dict(seed=1, dist_std=50.0, bits=3, lr=1e-3, steps=5000)
    bg = run_for(**kw, parameterization="beta-gamma")
    mmp = run_for(**kw, parameterization="min-max", policy="minmax-plus")
    worst = 0.0
    for field in ("theta_min", "theta_max"):
        a, b = bg.column(field), mmp.column(field)
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12))))
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-3 and elapsed < 30.0
    report(4, "beta/gamma = min/max+", ok, f"max pointwise rel diff {worst:.2e} over 5000 steps, {elapsed:.1f}s")
    assert worst <= 1e-3
    assert elapsed < 30.0


def test_c05_low_and_high_bit_convergence():
    t0 = time.monotonic()
    seeds = range(1, 6)
    ratio_fail = []
    dist_ok = 0
    worst_ratio = 0.0
    for seed in seeds:
        for bits in (3, 10):
            oracle = oracle_for(seed, bits)
            for lr in (1e-2, 5e-3):
                mm = run_for(seed=seed, bits=bits, lr=lr, parameterization="min-max")
                ratio = mm.final_mse / oracle[2]
                worst_ratio = max(worst_ratio, ratio)
                if ratio > 2.0:
                    ratio_fail.append((seed, bits, lr, ratio))
        oracle10 = oracle_for(seed, 10)
        mm = run_for(seed=seed, bits=10, lr=1e-2, parameterization="min-max")
        so = run_for(seed=seed, bits=10, lr=1e-2, parameterization="scale-offset")
        d_mm = float(dist_trajectory(mm, oracle10)[-1])
        d_so = float(dist_trajectory(so, oracle10)[-1])
        if d_so >= 10.0 * d_mm:
            dist_ok += 1
    elapsed = time.monotonic() - t0
    ok = not ratio_fail and dist_ok >= 4 and elapsed < 120.0
    report(5, "low/high-bit convergence", ok,
           f"worst min/max mse ratio {worst_ratio:.2f} (<=2), scale/offset dist >=10x in {dist_ok}/5 seeds, {elapsed:.0f}s")
    assert not ratio_fail, ratio_fail
    assert dist_ok >= 4
    assert elapsed < 120.0


def _steps_to_band(result, target, tol=0.05):
    tm = result.column("theta_max")
    hit = np.nonzero(np.abs(tm - target) <= tol * abs(target))[0]
    return int(hit[0]) if hit.size else None


def test_c06_wide_distribution_convergence_speed():
    seeds = range(1, 6)
    good = 0
    details = []
    for seed in seeds:
        oracle = oracle_for(seed, 10, std=50.0)
        kw = dict(seed=seed, dist_std=50.0, bits=10, lr=1e-3)
        n_bg = _steps_to_band(run_for(**kw, parameterization="beta-gamma"), oracle[1])
        n_sig = _steps_to_band(run_for(**kw, parameterization="beta-gamma-sigmoid"), oracle[1])
        n_mm = _steps_to_band(run_for(**kw, parameterization="min-max"), oracle[1])
        fast = n_bg is not None and (n_mm is None or n_bg <= n_mm / 5)
        slower = n_sig is None or (n_bg is not None and n_sig > n_bg)
        good += fast and slower
        details.append(f"s{seed}: bg={n_bg} sig={n_sig} mm={n_mm}")
    ok = good >= 4
    report(6, "wide-distribution speed", ok, f"{good}/5 seeds ({'; '.join(details)})")
    assert good >= 4


def test_c07_relu_offset_stability():
    seeds = range(1, 6)
    good = 0
    details = []
    for seed in seeds:
        kw = dict(seed=seed, dist_std=50.0, relu=True, bits=8, lr=1e-3)
        so = run_for(**kw, parameterization="scale-offset")
        mm = run_for(**kw, parameterization="min-max")
        v_so = float(np.var(so.column("theta_min")[-1000:]))
        v_mm = float(np.var(mm.column("theta_min")[-1000:]))
        theta_max0 = 3.0 * float(tensor_for(seed, 50.0, True).max())
        bounded = float(np.max(np.abs(mm.column("theta_min")))) <= 0.05 * theta_max0
        good += (v_so >= 10.0 * v_mm) and bounded
        details.append(f"s{seed}: var so/mm={v_so:.2g}/{v_mm:.2g} bounded={bounded}")
    ok = good >= 4
    report(7, "relu offset stability", ok, f"{good}/5 seeds ({'; '.join(details)})")
    assert good >= 4


def test_c08_easy_init_agreement():
    good = 0
    worst = 0.0
    for seed in range(1, 6):
        span = float(tensor_for(seed).max() - tensor_for(seed).min())
        agree = True
        for bits in (4, 8):
            kw = dict(seed=seed, bits=bits, lr=5e-3, init_policy="exact")
            so = run_for(**kw, parameterization="scale-offset").trace[-1]
            mm = run_for(**kw, parameterization="min-max").trace[-1]
            d = max(abs(so.theta_min - mm.theta_min), abs(so.theta_max - mm.theta_max))
            worst = max(worst, d / span)
            agree = agree and d <= 1e-2 * span
        good += agree
    ok = good == 5
    report(8, "easy-init agreement", ok, f"{good}/5 seeds, worst gap {worst:.3g} of span (tol 1e-2)")
    assert good == 5


def test_c09_lr_policy_comparison():
    # final distance averaged over the last 1000 steps: robust to the
    # arbitrary phase of Adam limit cycles at the final record
    seeds = range(1, 6)
    good = 0
    details = []
    for seed in seeds:
        oracle = oracle_for(seed, 10)
        kw = dict(seed=seed, bits=10, lr=1e-2)
        def mean_dist(**extra):
            r = run_for(**kw, **extra)
            return float(dist_trajectory(r, oracle)[-1000:].mean())
        vanilla = mean_dist(parameterization="scale-offset")
        alts = {
            "naive": mean_dist(parameterization="scale-offset", policy="naive"),
            "soph": mean_dist(parameterization="scale-offset", policy="sophisticated"),
            "ks": mean_dist(parameterization="kscale-koffset"),
        }
        mm = mean_dist(parameterization="min-max")
        passed = all(vanilla >= a for a in alts.values()) and all(a > mm for a in alts.values())
        good += passed
        details.append(f"s{seed}: van={vanilla:.2f} " +
                       " ".join(f"{k}={v:.3f}" for k, v in alts.items()) + f" mm={mm:.3f}")
    ok = good >= 4
    report(9, "lr-policy comparison", ok, f"{good}/5 seeds ({'; '.join(details)})")
    assert good >= 4


def test_c10_offset_paths_diverge():
    x = sample_distribution(7, 1000, 1.0, False)
    k = 7
    so = init_range_params(ParamKind.SCALE_OFFSET, float(x.min()), 3 * float(x.max()), 3)
    mm = init_range_params(ParamKind.MIN_MAX, float(x.min()), 3 * float(x.max()), 3)
    states = [AdamState.zeros(1) for _ in range(4)]
    lr = 1e-3
    for _ in range(100):
        _, gso = accumulate_loss_grads(x, so)
        _, gmm = accumulate_loss_grads(x, mm)
        so.enc_a, states[0] = adam_step(so.enc_a, gso.d_enc_a, states[0], lr * 2 / k)
        so.enc_b, states[1] = adam_step(so.enc_b, gso.d_enc_b, states[1], lr)
        mm.enc_a, states[2] = adam_step(mm.enc_a, gmm.d_enc_a, states[2], lr)
        mm.enc_b, states[3] = adam_step(mm.enc_b, gmm.d_enc_b, states[3], lr)
    z_so = float(params_to_encoding(so).z[0])
    z_mm = float(params_to_encoding(mm).z[0])
    gap = abs(z_so - z_mm)
    ok = gap > 1e-6
    report(10, "offset paths diverge", ok, f"|z_so - z_mm| = {gap:.3e} after 100 matched steps")
    assert gap > 1e-6


def test_c11_net_harness_analogue():
    t0 = time.monotonic()
    seeds = (1, 2, 3)

    def med(param, lr, attr):
        vals = []
        for s in seeds:
            r = net_run_for(parameterization=param, lr=lr, seed=s)
            vals.append(getattr(r, attr) if attr else r.loss_trace[0])
        return float(np.median(vals))

    reductions = {}
    for param in ("min-max", "beta-gamma"):
        for lr in (1e-2, 1e-3):
            l0 = med(param, lr, None)
            lf = med(param, lr, "final_loss")
            reductions[(param, lr)] = 1.0 - lf / l0
    mm_final = med("min-max", 1e-2, "final_loss")
    so_final = med("scale-offset", 1e-2, "final_loss")
    so_diverged = all(net_run_for(parameterization="scale-offset", lr=1e-2, seed=s).diverged for s in seeds)
    bg_final = med("beta-gamma", 1e-2, "final_loss")
    sig_final = med("beta-gamma-sigmoid", 1e-2, "final_loss")
    elapsed = time.monotonic() - t0

    red_ok = all(r >= 0.20 for r in reductions.values())
    so_ok = so_diverged or so_final >= 2.0 * mm_final
    sig_ok = bg_final <= sig_final
    ok = red_ok and so_ok and sig_ok and elapsed < 120.0
    report(11, "net-harness analogue", ok,
           f"reductions {['%.0f%%' % (100 * r) for r in reductions.values()]}, "
           f"scale/offset final {so_final:.4g} vs 2x min/max {2 * mm_final:.4g}, "
           f"bg {bg_final:.4g} <= sigmoid {sig_final:.4g}, {elapsed:.0f}s")
    assert red_ok, reductions
    assert so_ok
    assert sig_ok
    assert elapsed < 120.0


def test_c12_core_invariant_suite():
    t0 = time.monotonic()

    # idempotence and level count over seeded ranges
    for seed in range(20):
        u = qrng.uniforms(seed, 4, stream=50)
        bits = int(2 + u[0] * 10)
        enc = derive_encoding(-0.1 - 3 * u[1], 0.1 + 3 * u[2], QuantSpec(bits=bits))
        x = qrng.normals(seed, 2000, std=1 + 3 * u[3], stream=51)
        once = fake_quant_asym(x, enc)
        twice = fake_quant_asym(once, enc)
        assert np.all(np.abs(twice - once) <= np.spacing(np.abs(once)))
        assert len(np.unique(once)) <= enc.k + 1

    # symmetric zero is exact
    for bits in range(2, 17):
        spec = QuantSpec(bits=bits, scheme=Scheme.SYMMETRIC)
        for tmax in (1e-6, 0.37, 151.0):
            assert fake_quant_sym(0.0, tmax, spec) == 0.0

    # frozen-weight invariance
    nspec = TinyMLPSpec(seed=12, steps=150)
    model = build_tiny_mlp(nspec)
    w1, w2 = model.W1.copy(), model.W2.copy()
    train_ranges(model, spec=nspec)
    assert np.array_equal(model.W1, w1) and np.array_equal(model.W2, w2)

    # CSV round-trip at 9 significant digits
    import tempfile
    from pathlib import Path

    from qrange.traces import read_trace_csv, write_trace_csv

    res = run_for(seed=13, bits=3, steps=50, n_samples=1000)
    with tempfile.TemporaryDirectory() as td:
        p = Path(td) / "t.csv"
        write_trace_csv(res, p)
        records, meta = read_trace_csv(p)
        assert meta["schema"] == "qrange-trace-v1"
        for got, orig in zip(records, res.trace):
            for f in ("loss", "theta_min", "theta_max", "s", "z", "enc_a", "enc_b"):
                assert float(format(getattr(orig, f), ".9g")) == getattr(got, f)

    # determinism: identical spec + seed give bitwise-identical traces
    spec = ExperimentSpec(seed=14, bits=4, steps=200, with_oracle=False)
    x = tensor_for(14)
    r1 = run_range_learning(spec, x, init_params_for(spec, x))
    r2 = run_range_learning(spec, x, init_params_for(spec, x))
    assert [vars(a) for a in r1.trace] == [vars(b) for b in r2.trace]

    elapsed = time.monotonic() - t0
    ok = elapsed < 30.0
    report(12, "core invariant suite", ok, f"{elapsed:.1f}s")
    assert elapsed < 30.0
