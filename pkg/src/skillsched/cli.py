"""Command-line entry point.

Subcommands: pretrain, train, suite, report, grad-check, oracle-check.
Exit codes: 0 success, 2 config/validation error, 3 numerical failure.
Environment overrides: SKILLSCHED_OUT_DIR (prefix for output directories),
SKILLSCHED_THREADS (suite worker processes).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import harness
from .backend import backend_name
from .errors import ConfigurationError, MalformedEpisodeError, NumericalAbort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _apply_out_dir_override(path: str) -> str:
    prefix = os.environ.get("SKILLSCHED_OUT_DIR", "")
    return os.path.join(prefix, path) if prefix else path


def _workers(requested: int | None) -> int:
    env = os.environ.get("SKILLSCHED_THREADS", "")
    if env:
        return max(1, int(env))
    return max(1, requested or 1)


def cmd_pretrain(args) -> int:
    cfg = harness.PretrainConfig(
        task=args.task, variant=args.variant, seed=args.seed,
        episodes=args.episodes, threshold=args.threshold,
        out_path=_apply_out_dir_override(args.out))
    doc = harness.pretrain_skill(cfg)
    prov = doc["provenance"]
    print(f"pretrained {args.task} (seed {args.seed}): "
          f"eval {prov['eval_mean_step_reward']:.3f} "
          f"after {prov['episodes_run']} episodes"
          + (" [subthreshold]" if prov["subthreshold"] else ""))
    return EXIT_OK


def cmd_train(args) -> int:
    from dataclasses import replace
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    cfg = replace(cfg, out_dir=_apply_out_dir_override(cfg.out_dir))
    csv_path = harness.train(cfg)
    print(csv_path)
    return EXIT_OK


def cmd_suite(args) -> int:
    base = harness.load_config(args.config)
    from dataclasses import replace
    base = replace(base, out_dir=_apply_out_dir_override(args.out or base.out_dir))
    seeds = tuple(range(1, args.seeds + 1))
    configs = harness.ablation_suite(args.name, base, args.skill_dir, seeds=seeds)
    if args.dry_run:
        for c in configs:
            print(c.out_dir)
        return EXIT_OK
    paths = harness.run_suite(configs, workers=_workers(args.workers))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_report(args) -> int:
    rep = harness.report(args.csv, threshold_return=args.threshold)
    print(harness.format_report(rep))
    if args.json_out:
        with open(args.json_out, "w") as f:
            json.dump(rep, f, indent=2)
            f.write("\n")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .grad_sweep import run_grad_sweep
    results = run_grad_sweep(n_points=args.points, seeds=range(1, args.seeds + 1))
    worst = 0.0
    for name, err in sorted(results.items()):
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:<40}{err:>12.3e}  {status}")
        worst = max(worst, err)
    print(f"worst relative error: {worst:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if worst < args.tolerance else EXIT_NUMERICAL


def cmd_oracle_check(args) -> int:
    from . import oracle_mdp
    from .policies import SchedulerAction
    from .replay import Transition, augment
    failures = 0

    sweeps, err, monotone = oracle_mdp.run_convergence_check()
    ok = err < 1e-5 and monotone
    failures += not ok
    print(f"augmented-chain TD vs linear solve: sup error {err:.2e} "
          f"after {sweeps} sweeps, monotone={monotone} "
          f"[{'ok' if ok else 'FAIL'}]")

    residual = oracle_mdp.counter_blind_residual()
    ok = residual > 1e-3
    failures += not ok
    print(f"counter-blind critic residual: {residual:.2e} "
          f"(must stay > 1e-3) [{'ok' if ok else 'FAIL'}]")

    traj = [Transition(s=np.array([float(t)]), a=np.zeros(1),
                       z=SchedulerAction(0, 60), c=60 - t, r=float(t % 2),
                       s_next=np.array([float(t + 1)]), done=False,
                       decision_point=(t == 0)) for t in range(60)]
    dup = augment(traj, 10)
    decisions = [t for t, tr in enumerate(dup) if tr.decision_point]
    counters_ok = [tr.c for tr in dup] == list(range(10, 0, -1)) * 6
    content_ok = all(o.s is d.s and o.a is d.a and o.r == d.r
                     for o, d in zip(traj, dup))
    ok = decisions == [0, 10, 20, 30, 40, 50] and counters_ok and content_ok
    failures += not ok
    print(f"duplicated-trajectory law (k*=60, k_min=10): decisions at "
          f"{decisions}, counters cycle={counters_ok}, content shared="
          f"{content_ok} [{'ok' if ok else 'FAIL'}]")
    return EXIT_OK if failures == 0 else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillsched",
                                description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("pretrain", help="train one skill on its dense variant")
    q.add_argument("--task", required=True)
    q.add_argument("--variant", default=None)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--episodes", type=int, default=1500)
    q.add_argument("--threshold", type=float, default=0.85)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_pretrain)

    q = sub.add_parser("train", help="run one training config")
    q.add_argument("--config", required=True)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--out", default=None)
    q.set_defaults(fn=cmd_train)

    q = sub.add_parser("suite", help="expand and run an ablation suite")
    q.add_argument("--name", required=True, choices=harness.SUITE_NAMES)
    q.add_argument("--config", required=True, help="base run config JSON")
    q.add_argument("--skill-dir", required=True)
    q.add_argument("--seeds", type=int, default=5)
    q.add_argument("--out", default=None)
    q.add_argument("--workers", type=int, default=None)
    q.add_argument("--dry-run", action="store_true")
    q.set_defaults(fn=cmd_suite)

    q = sub.add_parser("report", help="summarize metrics CSVs")
    q.add_argument("csv", nargs="+")
    q.add_argument("--threshold", type=float, default=None,
                   help="return threshold for episodes-to-threshold")
    q.add_argument("--json-out", default=None)
    q.set_defaults(fn=cmd_report)

    q = sub.add_parser("grad-check", help="finite-difference sweep over losses")
    q.add_argument("--points", type=int, default=10)
    q.add_argument("--seeds", type=int, default=3)
    q.add_argument("--tolerance", type=float, default=1e-4)
    q.set_defaults(fn=cmd_grad_check)

    q = sub.add_parser("oracle-check", help="tabular and augmentation oracles")
    q.set_defaults(fn=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().handlers[0].setLevel(
        logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except (ConfigurationError, MalformedEpisodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
