"""Command-line front end: train / diagnose / verify / ablate.

Exit codes: 0 success, 1 failure (bad config, parse error, audit violation,
non-finite update), 2 completed-with-early-stop.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import CollapseLabError
from .experiments import (
    DEFAULT_SLIP_LEVELS,
    collapse_config,
    filter_compare,
    noise_config,
    noise_sweep,
    quartile_ablation,
    quartile_config,
    traj_filter_compare,
)
from .miproxy import EmaState
from .policy import load_checkpoint
from .rollout import read_rollout_log, rv_statistics
from .rng import root_key
from .trainer import proxy_panel, run_config
from .verify import AUDITS, report, run_suite

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_EARLY_STOP = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors by default, which would
    # collide with the early-stop exit code; route usage errors to status 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CollapseLabError(message)


def _add_common(p):
    p.add_argument("--config", help="experiment config file (INI sections or JSON)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--threads", type=int, default=None,
                   help="upper bound on worker threads; results do not depend on it")
    p.add_argument("--out", help="output directory (default: $COLLAPSE_LAB_OUT or ./runs)")


def build_parser() -> _Parser:
    parser = _Parser(prog="collapselab",
                     description="Desk-scale study of template collapse in "
                                 "filtered policy-gradient training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    _add_common(p_train)

    p_diag = sub.add_parser("diagnose",
                            help="recompute the proxy panel from rollout logs")
    p_diag.add_argument("--log", required=True,
                        help="rollout log file, or a rollouts/ directory to replay in order")
    p_diag.add_argument("--checkpoint", required=True,
                        help="matching checkpoint file, or a checkpoints/ directory")
    p_diag.add_argument("--scope", default="first_turn",
                        choices=("first_turn", "trajectory_uniform"))
    p_diag.add_argument("--out", help="write the diagnosis JSON here instead of stdout")

    p_verify = sub.add_parser("verify", help="run the analytic audits")
    p_verify.add_argument("--suite", default=None,
                          help="comma list of audits (default all): " + ",".join(AUDITS))
    p_verify.add_argument("--trials", type=int, default=None,
                          help="override the per-audit trial count")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", help="write the report JSON here as well")

    p_abl = sub.add_parser("ablate", help="multi-arm comparison studies")
    p_abl.add_argument("kind", choices=("quartile", "filter_compare", "traj_filter",
                                        "noise_sweep"))
    _add_common(p_abl)
    p_abl.add_argument("--seeds", default="0", help="comma list of seeds")
    p_abl.add_argument("--levels", default=None,
                       help="comma list of noise levels (noise_sweep only)")
    return parser


def _load_config(args, default_factory=None) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    elif default_factory is not None:
        cfg = default_factory()
    else:
        cfg = ExperimentConfig.default()
    if args.set:
        cfg = cfg.with_overrides(args.set)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.set("run.seed", args.seed)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        raise CollapseLabError("--threads must be >= 1")
    return cfg


def _out_dir(args, cfg: ExperimentConfig, suffix: str = "") -> str:
    if args.out:
        return args.out
    configured = cfg.get("run", "out")
    if configured:
        return configured
    base = os.environ.get("COLLAPSE_LAB_OUT", "runs")
    stem = Path(args.config).stem if args.config else "run"
    name = f"{stem}-s{cfg.seed()}" + (f"-{suffix}" if suffix else "")
    return os.path.join(base, name)


def _emit(doc: dict, out_path=None):
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w") as f:
            f.write(text + "\n")
    print(text)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    result = run_config(cfg, out_dir=out)
    print(f"run written to {out} ({result.stop_reason}, "
          f"{len(result.records)} iterations)")
    if result.stop_reason == "nan_abort":
        return EXIT_FAIL
    return EXIT_EARLY_STOP if result.stopped_early else EXIT_OK


def _diagnose_pairs(log_path: str, checkpoint_path: str):
    log = Path(log_path)
    if log.is_dir():
        files = sorted(log.glob("*.jsonl"))
        if not files:
            raise CollapseLabError(f"no .jsonl rollout logs under {log}")
    else:
        files = [log]
    ckpt = Path(checkpoint_path)
    for f in files:
        batch = read_rollout_log(f)
        if ckpt.is_dir():
            cp = ckpt / f"iter_{batch.iteration:05d}.json"
            if not cp.exists():
                raise CollapseLabError(f"missing checkpoint {cp} for {f.name}")
        else:
            cp = ckpt
        yield batch, load_checkpoint(cp)


def cmd_diagnose(log_path: str, checkpoint_path: str, scope: str = "first_turn") -> dict:
    """Recompute every proxy from logged trajectories and a checkpoint.

    The RNG streams for tie-breaks and turn selection are re-derived from the
    seed recorded in the log, so a replay from the first iteration reproduces
    the training-time panel exactly (including the EMA column).
    """
    rows = []
    ema = EmaState()
    for batch, params in _diagnose_pairs(log_path, checkpoint_path):
        if batch.seed is None:
            raise CollapseLabError(
                "rollout log lacks the seed field; proxies that break ties "
                "randomly cannot be re-derived")
        key = root_key(batch.seed, batch.iteration)
        panel, _, ema = proxy_panel(params, batch, scope, key, ema)
        rvs = rv_statistics(batch)
        row = {"iter": batch.iteration, "ret": batch.mean_return()}
        row.update(panel)
        row.update({
            "rv_mean": rvs.mean,
            "rv_std": rvs.std,
            "rv_min": rvs.min,
            "rv_max": rvs.max,
            "rv_som": rvs.std_over_mean,
            "zero_var": rvs.zero_variance_count,
        })
        rows.append(row)
    return {"scope": scope, "rows": rows}


def cmd_verify(args) -> int:
    names = args.suite.split(",") if args.suite else None
    results = run_suite(names=names, seed=args.seed, trials=args.trials)
    doc = report(results, args.seed)
    _emit(doc, args.out)
    return EXIT_OK if doc["passed"] else EXIT_FAIL


def cmd_ablate(args) -> int:
    defaults = {
        "quartile": quartile_config,
        "filter_compare": collapse_config,
        "traj_filter": collapse_config,
        "noise_sweep": noise_config,
    }
    cfg = _load_config(args, default_factory=defaults[args.kind])
    seeds = tuple(int(s) for s in args.seeds.split(","))
    out = _out_dir(args, cfg, suffix=args.kind)
    if args.kind == "quartile":
        comparison = quartile_ablation(cfg, seeds=seeds, out_dir=out)
        doc = {"kind": args.kind, "arms": comparison["arms"]}
    elif args.kind == "filter_compare":
        comparison = filter_compare(cfg, seeds=seeds, out_dir=out)
        doc = {"kind": args.kind, "arms": comparison["arms"]}
    elif args.kind == "traj_filter":
        comparison = traj_filter_compare(cfg, seeds=seeds, out_dir=out)
        doc = {"kind": args.kind, "arms": comparison["arms"]}
    else:
        levels = (tuple(float(x) for x in args.levels.split(","))
                  if args.levels else DEFAULT_SLIP_LEVELS)
        sweep = noise_sweep(cfg, levels=levels, seeds=seeds, out_dir=out)
        doc = {
            "kind": args.kind,
            "noise_key": sweep["noise_key"],
            "levels": [{"level": e["level"], "arms": e["arms"]}
                       for e in sweep["levels"]],
        }
    doc["seeds"] = list(seeds)
    os.makedirs(out, exist_ok=True)
    _emit(doc, os.path.join(out, "comparison.json"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "diagnose":
            doc = cmd_diagnose(args.log, args.checkpoint, args.scope)
            _emit(doc, args.out)
            return EXIT_OK
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_ablate(args)
    except CollapseLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
