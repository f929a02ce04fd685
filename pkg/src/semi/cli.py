"""Command-line entry point.

Verbs: ``run`` (one training run), ``sweep`` (same config across seeds),
``export`` (step-aligned CSV of one metric across runs), ``gradcheck``
(finite-difference audit of every registered loss), and ``replay``
(recompute a dumped run's incongruity rewards from its artifacts).

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 a verification check (gradcheck or replay) did not pass. The default
output root is the ``SEMI_OUT`` environment variable, falling back to
``./runs``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import harness
from .config import REWARD_PRESETS, make_config
from .envs import ENV_PRESETS

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3


class CliError(Exception):
    """A problem with arguments or configuration (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad arguments are configuration errors
        raise CliError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="config file of key = value lines")
    p.add_argument("--env", choices=sorted(ENV_PRESETS), help="environment preset")
    p.add_argument("--reward", choices=sorted(REWARD_PRESETS), help="reward preset")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--out", help="output directory (default: under SEMI_OUT)")
    p.add_argument("--gamma-weight", type=float, help="weight on action incongruity")
    p.add_argument("--beta-weight", type=float, help="weight on extrinsic reward")
    p.add_argument("--dump-trajectories", action="store_true", default=None,
                   help="record per-step observations and rewards for replay")
    p.add_argument("--no-deterministic", action="store_true", default=None,
                   help="record live wall-clock times in metrics")
    p.add_argument("--set", dest="assignments", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key, e.g. ppo.lr=0.001")


def _collect_overrides(args) -> dict:
    overrides: dict[str, object] = {}
    for item in args.assignments:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    named = {
        "env": args.env,
        "reward": args.reward,
        "seed": args.seed,
        "steps": args.steps,
        "out": args.out,
        "gamma_weight": args.gamma_weight,
        "beta_weight": args.beta_weight,
        "dump_trajectories": args.dump_trajectories,
        "deterministic": None if args.no_deterministic is None else False,
    }
    overrides.update({k: v for k, v in named.items() if v is not None})
    return overrides


def _make_cfg(args):
    file_text = None
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        file_text = path.read_text(encoding="utf-8")
    return make_config(file_text=file_text, overrides=_collect_overrides(args))


def _default_out(name: str) -> Path:
    root = Path(os.environ.get("SEMI_OUT", "runs"))
    candidate = root / name
    suffix = 2
    while candidate.exists():
        candidate = root / f"{name}-{suffix}"
        suffix += 1
    return candidate


def _cmd_run(args) -> int:
    cfg = _make_cfg(args)
    out_dir = Path(cfg.out) if cfg.out else _default_out(f"{cfg.env}-{cfg.reward}-s{cfg.seed}")
    summary = harness.run(cfg, out_dir)
    print(f"run directory: {out_dir}")
    for key, value in summary.items():
        print(f"  {key} = {value}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _make_cfg(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise CliError(f"--seeds expects a comma-separated integer list, got {args.seeds!r}")
    if not seeds:
        raise CliError("--seeds expects at least one seed")
    out_dir = Path(cfg.out) if cfg.out else _default_out(f"sweep-{cfg.env}-{cfg.reward}")
    result = harness.sweep(cfg, seeds, out_dir)
    print(f"sweep directory: {out_dir}")
    print(f"  aggregate: {result['aggregate_csv']}")
    for seed in seeds:
        if seed in result["failures"]:
            print(f"  seed {seed}: FAILED ({result['failures'][seed]})")
        else:
            summary = result["summaries"][seed]
            print(f"  seed {seed}: interaction_rate={summary['interaction_rate']:.4f} "
                  f"best_return={summary['best_episode_return']:.4f}")
    return EXIT_OK


def _cmd_export(args) -> int:
    out_path = args.out if args.out else f"{args.metric}.csv"
    path = harness.export_plotdata(args.run_dirs, args.metric, out_path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    report = harness.gradcheck_suite(eps=args.eps, tol=args.tol, seed=args.seed,
                                     cases_per_loss=args.cases)
    for row in report["cases"]:
        status = "ok" if row["ok"] else "FAIL"
        print(f"{row['loss']:24s} max_rel_err={row['max_rel_err']:.3e} "
              f"worst={row['worst_param']:20s} [{status}]")
    if not report["ok"]:
        print("gradient checks FAILED", file=sys.stderr)
        return EXIT_CHECK
    print(f"all gradient checks passed (eps={report['eps']}, tol={report['tolerance']})")
    return EXIT_OK


def _cmd_replay(args) -> int:
    result = harness.replay(args.run_dir, tol=args.tol)
    print(f"replayed {result['steps']} steps: "
          f"max_err_p={result['max_err_p']:.3e} max_err_a={result['max_err_a']:.3e} "
          f"(tolerance {result['tolerance']:.1e}, r_a "
          f"{'checked' if result['ra_checked'] else 'not recorded'})")
    if not result["ok"]:
        print("replay check FAILED", file=sys.stderr)
        return EXIT_CHECK
    print("replay check passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semi",
                     description="Multisensory-incongruity exploration experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one training run")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run one config across several seeds")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--seeds", required=True, metavar="S0,S1,...",
                         help="comma-separated seeds")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_export = sub.add_parser("export", help="collect a metric across runs into a CSV")
    p_export.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    p_export.add_argument("--metric", required=True, help="metrics.jsonl field to export")
    p_export.add_argument("--out", help="output CSV path (default: <metric>.csv)")
    p_export.set_defaults(func=_cmd_export)

    p_grad = sub.add_parser("gradcheck", help="finite-difference audit of all loss graphs")
    p_grad.add_argument("--eps", type=float, default=harness.GRADCHECK_EPS)
    p_grad.add_argument("--tol", type=float, default=harness.GRADCHECK_TOL)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--cases", type=int, default=3, help="random cases per loss")
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_replay = sub.add_parser("replay", help="recompute a dumped run's incongruity rewards")
    p_replay.add_argument("run_dir", metavar="RUN_DIR")
    p_replay.add_argument("--tol", type=float, default=harness.REPLAY_TOL)
    p_replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - boundary: report and signal failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
