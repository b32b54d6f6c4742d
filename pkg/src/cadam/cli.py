"""Command-line harness.

Subcommands: run (seeded benchmark runs across optimizers), ablate (coupled
batch/step grids), maml (meta-train + meta-test), jstar (optimality
baseline), gen-data (synthetic returns), diagnose (recursion/assumption
checks), report (re-render figures from traces).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (NaN/Inf in iterates, with the offending iteration reported).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import bench, diagnostics, report
from .config import (
    ConfigError,
    ExperimentConfig,
    OptimizerArm,
    ProblemSpec,
    load_config,
)
from .problems import REGIMES
from .core import (
    InvalidConfigError,
    NumericFailureError,
    ProblemConstants,
    ScheduleConfig,
    meta_schedule,
    portfolio_schedule,
)
from .trace import RunTrace

PRESETS = ("portfolio-medium", "portfolio-large", "quad-small")


def preset_config(name: str, seed: int) -> ExperimentConfig:
    """Built-in experiment configurations mirroring the benchmark setups."""
    if name in ("portfolio-medium", "portfolio-large"):
        regime = "medium" if name == "portfolio-medium" else "large"
        return ExperimentConfig(
            problem=ProblemSpec("portfolio", {"regime": regime, "data_seed": 7}),
            optimizers=[
                OptimizerArm("cadam", "cadam", asdict(portfolio_schedule())),
                OptimizerArm("scgd", "scgd", {}),
                OptimizerArm("ascpg", "ascpg", {}),
            ],
            T=40000,
            seeds=[seed],
            sample_budget=100000,
            checkpoints="geometric",
            output_rule="last-iterate",
        )
    if name == "quad-small":
        return ExperimentConfig(
            problem=ProblemSpec("quad", {"p": 10, "q": 15, "noise": 0.1, "data_seed": 3}),
            optimizers=[OptimizerArm("cadam", "cadam", asdict(ScheduleConfig()))],
            T=5000,
            seeds=[seed],
            checkpoints="geometric",
            output_rule="last-iterate",
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def _base_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = preset_config(args.preset, args.seed if args.seed is not None else 0)
    else:
        raise ConfigError("either --config or --preset is required")

    if getattr(args, "seeds", None):
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    elif args.config and cfg.seeds:
        seeds = cfg.seeds
    else:
        seeds = [args.seed + i for i in range(getattr(args, "n_seeds", 1) or 1)]
    overrides = {"seeds": seeds}
    if getattr(args, "t", None):
        overrides["T"] = args.t
    if getattr(args, "budget", None):
        overrides["sample_budget"] = args.budget
    if getattr(args, "output_rule", None):
        overrides["output_rule"] = args.output_rule
    if getattr(args, "checkpoints", None):
        overrides["checkpoints"] = args.checkpoints
    if getattr(args, "box_clip", None):
        lo, hi = (float(v) for v in args.box_clip.split(","))
        overrides["box_clip"] = (lo, hi)
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    return replace(cfg, **overrides)


def _add_run_flags(sp, require_out=True):
    sp.add_argument("--config", help="experiment config file")
    sp.add_argument("--preset", choices=PRESETS, help="built-in experiment")
    sp.add_argument("--seed", type=int, required=True, help="base seed")
    sp.add_argument("--out-dir", required=require_out, help="output directory")
    sp.add_argument("--seeds", help="explicit comma-separated seed list")
    sp.add_argument("--n-seeds", type=int, default=1, help="seeds = seed..seed+n-1")
    sp.add_argument("--t", type=int, help="override iteration count")
    sp.add_argument("--budget", type=int, help="override sample budget")
    sp.add_argument("--output-rule", choices=("uniform-iterate", "last-iterate", "best-evaluated"))
    sp.add_argument("--checkpoints", help="geometric | all | comma-separated t list")
    sp.add_argument("--box-clip", help="lo,hi bounds applied after each step")
    sp.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadam", description="compositional optimization benchmark harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("run", help="run a trace benchmark across optimizers and seeds")
    _add_run_flags(sp)

    sp = sub.add_parser("ablate", help="coupled batch-size or step-size grid")
    _add_run_flags(sp)
    sp.add_argument("--axis", choices=("batch", "step"), required=True)
    sp.add_argument("--values", required=True, help="comma-separated grid values")

    sp = sub.add_parser("maml", help="meta-train on sine tasks and meta-test")
    sp.add_argument("--case", type=int, choices=(1, 2), default=2)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--iters", type=int, default=20000, help="meta-iterations")
    sp.add_argument("--tasks", type=int, default=8, help="meta-batch task count (case 2)")
    sp.add_argument("--optimizer", choices=("cadam", "adam", "sgd"), default="cadam")
    sp.add_argument("--alpha-inner", type=float, default=0.01)
    sp.add_argument("--shots", type=int, default=10)
    sp.add_argument("--test-tasks", type=int, default=100)
    sp.add_argument("--fine-tune-steps", type=int, default=10)
    sp.add_argument("--layers", default="1,40,40,1")
    sp.add_argument("--c-alpha", type=float, help="override outer step constant")
    sp.add_argument("--k-batch", type=int, help="override oracle batch size")
    sp.add_argument("--no-figures", action="store_true")

    sp = sub.add_parser("jstar", help="compute the optimality baseline J*")
    sp.add_argument("--config", help="experiment config file")
    sp.add_argument("--preset", choices=PRESETS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--budget", type=int, default=20000)
    sp.add_argument("--out-dir", help="cache directory")

    sp = sub.add_parser("gen-data", help="write synthetic returns CSV")
    sp.add_argument("--m", type=int, help="time points")
    sp.add_argument("--n", type=int, help="assets")
    sp.add_argument("--regime", choices=sorted(REGIMES))
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True, help="output CSV path")

    sp = sub.add_parser("diagnose", help="run recursion/assumption checks")
    sp.add_argument("--check", choices=("theta", "lemma2", "lemma3", "decay"), required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--t", type=int, help="horizon (lemma2/lemma3)")
    sp.add_argument("--configs", type=int, default=20, help="random configs (lemma3)")
    sp.add_argument("--epsilon", type=float, default=0.1, help="solver epsilon (lemma2)")
    sp.add_argument("--trace", action="append", help="trace CSV (decay; repeatable)")
    sp.add_argument("--run-dir", help="directory of trace CSVs (decay)")
    sp.add_argument("--max-slope", type=float, help="fail decay check above this slope")

    sp = sub.add_parser("report", help="re-render figures from a run directory")
    sp.add_argument("--run-dir", required=True)

    return parser


def _cmd_run(args) -> int:
    cfg = _base_config(args)
    result = bench.run_experiment(cfg, args.out_dir)
    print(f"wrote {len(result['entries'])} files to {result['out_dir']} "
          f"(J* = {result['jstar']:.17g})")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _base_config(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    results = bench.ablation_grid(cfg, args.axis, values, args.out_dir)
    for value, res in results.items():
        print(f"{args.axis}={value:g}: {res['out_dir']}")
    return 0


def _cmd_maml(args) -> int:
    options = asdict(meta_schedule())
    if args.c_alpha is not None:
        options["C_alpha"] = args.c_alpha
    if args.k_batch is not None:
        options["C_1"] = options["C_2"] = options["C_3"] = float(args.k_batch)
    if args.optimizer != "cadam":
        options = {"k": args.k_batch or 10}
        if args.c_alpha is not None:
            options["alpha"] = args.c_alpha
    cfg = ExperimentConfig(
        problem=ProblemSpec(
            f"maml-case{args.case}",
            {
                "layers": args.layers,
                "meta_tasks": args.tasks,
                "alpha_inner": args.alpha_inner,
                "shots": args.shots,
                "test_tasks": args.test_tasks,
                "fine_tune_steps": args.fine_tune_steps,
            },
        ),
        optimizers=[OptimizerArm(args.optimizer, args.optimizer, options)],
        T=args.iters,
        seeds=[args.seed],
        figures=not args.no_figures,
    )
    result = bench.maml_pipeline(cfg, args.out_dir)
    for (arm, seed), run in result["runs"].items():
        print(
            f"{arm} seed {seed}: trained MSE {run['trained_final_mse']:.4f} "
            f"vs random-init {run['random_final_mse']:.4f}"
        )
    return 0


def _cmd_jstar(args) -> int:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset_config(args.preset, args.seed)
    else:
        raise ConfigError("either --config or --preset is required")
    problem = bench.build_problem(cfg.problem)
    value = bench.compute_jstar(problem, budget=args.budget, cache_dir=args.out_dir)
    print(format(value, ".17g"))
    return 0


def _cmd_gen_data(args) -> int:
    if args.regime is None and (args.m is None or args.n is None):
        raise ConfigError("gen-data needs --regime or both --m and --n")
    data = bench.synthetic_returns(m=args.m, n=args.n, seed=args.seed, regime=args.regime)
    bench.write_returns_csv(args.out, data)
    print(f"wrote {data.m}x{data.n} returns to {args.out}")
    return 0


def _feasible_decay_config(rng: np.random.Generator) -> diagnostics.DecayRecursionConfig:
    a = rng.uniform(0.4, 1.0)
    gap = rng.uniform(0.05, 0.9)
    return diagnostics.DecayRecursionConfig(
        C_eta=(1.0 + gap) * rng.uniform(1.05, 2.5),
        C_zeta=rng.uniform(0.0, 2.0),
        C_1=rng.uniform(0.0, 1.0),
        C_2=rng.uniform(0.0, 2.0),
        a=a,
        b=a + gap,
        A_1=rng.uniform(0.0, 5.0),
    )


def _cmd_diagnose(args) -> int:
    ok = True
    if args.check == "theta":
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(10):
            t = int(rng.integers(1, 21))
            betas = rng.uniform(0.0, 1.0, size=t)
            worst = max(worst, abs(diagnostics.theta_coefficients(betas).sum() - 1.0))
        ok = worst <= 1e-12
        print(f"theta normalization: max |sum - 1| = {worst:.3e} "
              f"over 10 random beta sequences -> {'PASS' if ok else 'FAIL'}")
    elif args.check == "lemma2":
        T = args.t or 5000
        cfg = ScheduleConfig(epsilon=args.epsilon)
        constants = ProblemConstants(M_f=1.0, M_g=1.0, L_f=1.0, L_g=1.0, sigma3_sq=1.0)
        bounds = diagnostics.tracking_bound_recursion(cfg, constants, T, e1_sq=1.0)
        t_burn = diagnostics.envelope_burn_in(bounds, constants.L_g)
        ok = t_burn < T
        print(f"tracking envelope nonincreasing from t = {t_burn} (T = {T}) "
              f"-> {'PASS' if ok else 'FAIL'}")
    elif args.check == "lemma3":
        T = args.t or 10000
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(args.configs):
            cert = diagnostics.certify_power_decay(_feasible_decay_config(rng), T)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.nanmax(np.where(cert.bound > 0, cert.A / cert.bound, 0.0))
            worst = max(worst, float(ratio))
            ok = ok and cert.holds
        print(f"decay recursion certificate: worst A_t/bound = {worst:.6f} "
              f"over {args.configs} configs, T = {T} -> {'PASS' if ok else 'FAIL'}")
    elif args.check == "decay":
        paths = list(args.trace or [])
        if args.run_dir:
            paths += sorted(
                str(p) for p in Path(args.run_dir).glob("*_seed*.csv")
                if not p.name.endswith("_meta_test.csv")
            )
        if not paths:
            raise ConfigError("decay check needs --trace or --run-dir")
        traces = [RunTrace.from_csv(p) for p in paths]
        slope = diagnostics.decay_exponent_fit(traces)
        if args.max_slope is not None:
            ok = slope <= args.max_slope
            print(f"tracking decay slope = {slope:.4f} (limit {args.max_slope}) "
                  f"-> {'PASS' if ok else 'FAIL'}")
        else:
            print(f"tracking decay slope = {slope:.4f}")
    return 0 if ok else 1


def _cmd_report(args) -> int:
    rendered = report.render_run_dir(args.run_dir)
    if not rendered:
        print(f"no trace CSVs found in {args.run_dir}", file=sys.stderr)
        return 1
    for p in rendered:
        print(f"rendered {p}")
    return 0


_DISPATCH = {
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "maml": _cmd_maml,
    "jstar": _cmd_jstar,
    "gen-data": _cmd_gen_data,
    "diagnose": _cmd_diagnose,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except (ConfigError, InvalidConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except bench.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericFailureError as exc:
        print(f"numeric failure: {exc} (aborted at t = {exc.t})", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
