"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .gradcheck import CHECKABLE, check_parameterization
from .lab import (
    PRESET_NAMES,
    ExperimentSpec,
    init_params_for,
    make_tensor,
    oracle_best_range,
    run_preset,
    run_range_learning,
    sample_distribution,
)
from .net import TinyMLPSpec, build_tiny_mlp, train_ranges
from .svgplot import render_svg_plot
from .traces import write_trace_csv

PARAM_CHOICES = ["scale-offset", "min-max", "min-max-plus", "beta-gamma",
                 "beta-gamma-sigmoid", "kscale-koffset"]
POLICY_CHOICES = ["uniform", "naive", "sophisticated", "minmax-plus"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrange", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run-preset", help="run a named experiment preset")
    rp.add_argument("--preset", required=True, choices=PRESET_NAMES)
    rp.add_argument("--seed", required=True, type=int)
    rp.add_argument("--out", required=True)

    rc = sub.add_parser("run-custom", help="run a single custom configuration")
    rc.add_argument("--bits", required=True, type=int)
    rc.add_argument("--lr", required=True, type=float)
    rc.add_argument("--steps", required=True, type=int)
    rc.add_argument("--param", required=True, choices=PARAM_CHOICES)
    rc.add_argument("--policy", choices=POLICY_CHOICES, default=None)
    rc.add_argument("--opt", choices=["sgd", "adam"], default="adam")
    rc.add_argument("--grad-mode", choices=["paper-table", "surrogate"], default="surrogate")
    rc.add_argument("--std", type=float, default=1.0)
    rc.add_argument("--relu", action="store_true")
    rc.add_argument("--init", choices=["3xmax", "exact"], default="3xmax")
    rc.add_argument("--n", type=int, default=10000)
    rc.add_argument("--seed", required=True, type=int)
    rc.add_argument("--out", required=True)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient certification")
    gc.add_argument("--param", required=True, choices=CHECKABLE + ["all"])
    gc.add_argument("--trials", type=int, default=1000)
    gc.add_argument("--seed", required=True, type=int)

    orc = sub.add_parser("oracle", help="brute-force optimal range for a seeded tensor")
    orc.add_argument("--bits", required=True, type=int)
    orc.add_argument("--seed", required=True, type=int)
    orc.add_argument("--std", type=float, default=1.0)
    orc.add_argument("--n", type=int, default=10000)
    orc.add_argument("--relu", action="store_true")

    net = sub.add_parser("net", help="tiny-MLP QAT with learnable ranges")
    net.add_argument("--param", required=True, choices=[c for c in PARAM_CHOICES if c != "min-max-plus"])
    net.add_argument("--lr", required=True, type=float)
    net.add_argument("--seed", required=True, type=int)
    net.add_argument("--steps", type=int, default=2000)

    rd = sub.add_parser("render", help="render trace CSVs to an SVG line chart")
    rd.add_argument("--in", dest="inputs", action="append", required=True,
                    help="trace CSV path (repeatable)")
    rd.add_argument("--fields", default="theta_min,theta_max",
                    help="comma-separated TraceRecord fields")
    rd.add_argument("--out", required=True)
    return p


def _trace_name(idx: int, spec: ExperimentSpec) -> str:
    bits = f"b{spec.bits}"
    tag = spec.parameterization.replace("/", "-")
    extra = "" if spec.policy == "uniform" else f"_{spec.policy}"
    sched = "_scaled" if spec.sym_lr_scaled else ""
    return f"trace_{idx:02d}_{tag}{extra}_{bits}_lr{spec.lr:g}_{spec.optimizer}{sched}.csv"


def _cmd_run_preset(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_preset(args.preset, args.seed)
    summary = {"preset": args.preset, "seed": args.seed, "runs": []}
    for i, res in enumerate(results):
        name = _trace_name(i, res.spec)
        write_trace_csv(res, out / name)
        summary["runs"].append({
            "trace": name,
            "label": res.label,
            "final_mse": res.final_mse,
            "oracle_mse": res.oracle_mse if res.oracle_mse == res.oracle_mse else None,
            "diverged": res.diverged,
        })
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(results)} traces to {out}")
    return 0


def _cmd_run_custom(args) -> int:
    param = args.param
    policy = args.policy
    if param == "min-max-plus":
        if policy not in (None, "minmax-plus"):
            raise SystemExit(2)
        param, policy = "min-max", "minmax-plus"
    spec = ExperimentSpec(
        preset="custom", seed=args.seed, n_samples=args.n, dist_std=args.std,
        relu=args.relu, bits=args.bits, lr=args.lr, steps=args.steps,
        optimizer=args.opt, parameterization=param, policy=policy or "uniform",
        init_policy=args.init, grad_mode=args.grad_mode,
    )
    tensor = make_tensor(spec)
    result = run_range_learning(spec, tensor, init_params_for(spec, tensor))
    if spec.with_oracle:
        tmin, tmax, omse = oracle_best_range(tensor, spec.bits)
        result.oracle_mse = omse
        result.oracle_range = (tmin, tmax)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / _trace_name(0, spec)
    write_trace_csv(result, path)
    print(f"final mse {result.final_mse:.9g}  oracle mse {result.oracle_mse:.9g}  -> {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    names = CHECKABLE if args.param == "all" else [args.param]
    worst = 0.0
    for name in names:
        rep = check_parameterization(name, trials=args.trials, seed=args.seed)
        status = "ok" if rep.passed else "FAIL"
        print(f"{name}: max rel err = {rep.max_rel_err:.3e} over {rep.trials} trials [{status}]")
        worst = max(worst, rep.max_rel_err)
    return 0 if worst <= 1e-4 else 1


def _cmd_oracle(args) -> int:
    x = sample_distribution(args.seed, args.n, args.std, args.relu)
    tmin, tmax, mse = oracle_best_range(x, args.bits)
    print(f"theta_min {tmin:.9g}  theta_max {tmax:.9g}  mse {mse:.9g}")
    return 0


def _cmd_net(args) -> int:
    spec = TinyMLPSpec(parameterization=args.param, lr=args.lr, seed=args.seed, steps=args.steps)
    model = build_tiny_mlp(spec)
    run = train_ranges(model, spec=spec)
    print(f"fp loss {run.fp_loss:.9g}  initial {run.loss_trace[0]:.9g}  "
          f"final {run.final_loss:.9g}  diverged {run.diverged}")
    return 0


def _cmd_render(args) -> int:
    fields = [f for f in args.fields.split(",") if f]
    if not fields:
        print("error: --fields must name at least one field", file=sys.stderr)
        return 2
    render_svg_plot(args.inputs, fields, args.out)
    print(f"wrote {args.out}")
    return 0


_DISPATCH = {
    "run-preset": _cmd_run_preset,
    "run-custom": _cmd_run_custom,
    "gradcheck": _cmd_gradcheck,
    "oracle": _cmd_oracle,
    "net": _cmd_net,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except SystemExit:
        raise
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
