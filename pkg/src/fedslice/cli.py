"""Command-line entry point.

Subcommands: train, eval-cdf, eval-traces, eval-sweep, selftest.
Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 self-test failure.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from fedslice import config as config_mod
from fedslice import experiments, kernels, selftest
from fedslice.config import ConfigError, ScenarioConfig, apply_smoke
from fedslice.errors import NumericalError


def _add_common(parser):
    parser.add_argument("--config", help="YAML scenario file (defaults apply)")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--seeds", type=int, help="number of seeds")
    parser.add_argument("--out", help="output directory (or FEDSLICE_OUT)")
    parser.add_argument("--smoke", action="store_true",
                        help="reduced scale: 20 rounds x 200 steps")


def _resolve_config(args) -> ScenarioConfig:
    cfg = config_mod.load(args.config) if args.config else ScenarioConfig().validate()
    if getattr(args, "smoke", False):
        apply_smoke(cfg)
    if args.seed is not None:
        cfg.run.base_seed = args.seed
    if args.seeds is not None:
        cfg.run.seeds = args.seeds
    return cfg.validate()


def _policies_arg(value: str):
    return [p.strip() for p in value.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedslice",
        description="Federated constrained multi-agent slicing simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the round schedule")
    _add_common(p_train)
    p_train.add_argument("--policy", default=experiments.LEARNED_POLICY,
                         choices=experiments.POLICY_KINDS)
    p_train.add_argument("--dump-updates", action="store_true",
                         help="write per-round model-update exchange files")

    p_cdf = sub.add_parser("eval-cdf", help="URLLC delay CDF for trained/baseline policies")
    _add_common(p_cdf)
    p_cdf.add_argument("--models", help="training output dir with seed*/global_actor.bin")
    p_cdf.add_argument("--policies", type=_policies_arg,
                       default=[experiments.LEARNED_POLICY, "equal", "queueprop"])
    p_cdf.add_argument("--slots", type=int, default=50_000)

    p_tr = sub.add_parser("eval-traces", help="per-slot queue/allocation traces")
    _add_common(p_tr)
    p_tr.add_argument("--models", help="training output dir")
    p_tr.add_argument("--policies", type=_policies_arg,
                      default=[experiments.LEARNED_POLICY, "queueprop"])
    p_tr.add_argument("--slots", type=int, default=2000)

    p_sw = sub.add_parser("eval-sweep", help="URLLC load sweep without retraining")
    _add_common(p_sw)
    p_sw.add_argument("--models", help="training output dir")
    p_sw.add_argument("--policies", type=_policies_arg,
                      default=[experiments.LEARNED_POLICY, "queueprop", "random"])
    p_sw.add_argument("--lambdas", type=_policies_arg, default=["2", "3", "4", "5", "6"])
    p_sw.add_argument("--slots", type=int, default=3000)

    p_self = sub.add_parser("selftest", help="run the fast acceptance checks")
    _add_common(p_self)
    p_self.add_argument("--skip-determinism", action="store_true",
                        help="skip the two-smoke-run byte comparison")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return _run_selftest(args)
        cfg = _resolve_config(args)
        out = experiments.output_dir(args.out)
        if args.command == "train":
            out = out / args.policy
            experiments.run_training(cfg, args.policy, out,
                                     dump_updates=args.dump_updates)
            print(f"wrote round records and figure exports under {out}")
        elif args.command == "eval-cdf":
            table = experiments.run_delay_cdf(
                cfg, args.policies, args.models, args.slots, out)
            deadline = cfg.traffic.urllc_deadline_slots
            for name, cdf in table.items():
                print(f"{name}: CDF({deadline} slot) = {cdf[deadline]:.4f}")
        elif args.command == "eval-traces":
            experiments.run_queue_traces(
                cfg, args.policies, args.models, args.slots, out)
            print(f"wrote fig3_traces.csv under {out}")
        elif args.command == "eval-sweep":
            lambdas = [float(x) for x in args.lambdas]
            table = experiments.run_load_sweep(
                cfg, args.policies, args.models, lambdas, args.slots, out)
            for (name, lam), cell in sorted(table.items()):
                print(f"{name} lambda={lam:g}: g2={cell['g2_mean']:.4g}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def _run_selftest(args) -> int:
    print(f"kernel backend: {kernels.backend()}")
    with tempfile.TemporaryDirectory(prefix="fedslice_selftest_") as tmp:
        results = selftest.run_all(
            Path(tmp), include_determinism=not args.skip_determinism
        )
    failed = False
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        failed = failed or not passed
    return 3 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
