"""Command line entry point: ``python -m snrlora {run,sweep,report,trace}``.

Settings are layered: dataclass defaults, then ``--preset``, then the JSON
``--config`` file, then individual flags (one per config field, e.g.
``--scorer snr_abs --total-steps 2000``).  Output goes below
``$SNRLORA_OUTPUT_ROOT`` (default ``runs``) unless ``--output-dir`` is given.
"""

import argparse
import dataclasses
import json
import os
import sys

from .harness.config import (ADAM_LR, PRESETS, ConfigError, ExperimentConfig,
                             default_output_root)
from .harness.reporting import (compare_scorers, load_summaries, read_traces, render_table,
                                row_label, score_trace_report, summarize, write_summary)
from .harness.training import run_experiment
from .importance import SCORER_NAMES
from .ivon import DivergenceError

_ELEMENT_TYPES = {"widths": int, "planted_ranks": int, "seeds": int, "trace_scorers": str}
# fields whose default is None, so the type cannot be read off the default
_OPTIONAL_TYPES = {"task_seed": int, "init_rank": int, "warmup_lr": float,
                   "lambda_ess": float, "score_ema": float, "output_dir": str}


def _add_config_flags(parser):
    group = parser.add_argument_group("config fields")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _ELEMENT_TYPES:
            group.add_argument(flag, dest=f.name, nargs="+", type=_ELEMENT_TYPES[f.name],
                               default=argparse.SUPPRESS)
        else:
            kind = _OPTIONAL_TYPES.get(f.name) or type(f.default)
            group.add_argument(flag, dest=f.name, type=kind, default=argparse.SUPPRESS,
                               help=f"default: {f.default}")
    parser.add_argument("--config", help="JSON file with config fields")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named starting point")


def build_config(args):
    data = {}
    if args.preset:
        data.update(PRESETS[args.preset])
    if args.config:
        data.update(_read_json(args.config))
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    data.update({k: v for k, v in vars(args).items() if k in names})
    return ExperimentConfig.from_dict(data).validate()


def _read_json(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    ExperimentConfig.from_dict(data)  # rejects unknown keys early
    return data


def _run_dir(cfg, seed):
    method, optimizer, scorer = row_label(cfg)
    root = cfg.output_dir or os.path.join(default_output_root(), f"{method}-{optimizer}-{scorer}")
    return os.path.join(root, f"seed{seed}")


def cmd_run(args):
    cfg = build_config(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = _run_dir(cfg, seed)
    metrics = run_experiment(cfg, seed=seed, output_dir=out)
    ranks = " ".join(str(r[2]) for r in metrics.final_ranks)
    print(f"seed {seed}: best val {metrics.best_val:.6g} at step {metrics.best_step}; final ranks {ranks}")
    print(f"artifacts in {out}")
    return 0


def cmd_sweep(args):
    base = build_config(args)
    configs = []
    for name in args.scorers:
        overrides = {"scorer": name}
        if args.optimizer_override:
            overrides["optimizer"] = args.optimizer_override
        configs.append(base.replace(**overrides))
    if args.with_lora:
        lora = base.replace(method="lora")
        if base.optimizer == "ivon" and args.lora_adam:
            lora = lora.replace(optimizer="adam", lr=ADAM_LR, warmup_lr=None)
        configs.append(lora)
    out = base.output_dir or os.path.join(default_output_root(), "sweep")
    rows, _ = compare_scorers(configs, output_dir=out)
    sys.stdout.write(render_table(rows))
    print(f"summary in {out}")
    return 0


def cmd_report(args):
    summaries = load_summaries(args.root)
    if not summaries:
        print(f"no summary.json found below {args.root}", file=sys.stderr)
        return 1
    rows = summarize(summaries)
    write_summary(rows, args.root)
    sys.stdout.write(render_table(rows))
    return 0


def cmd_trace(args):
    path = args.path
    if os.path.isdir(path):
        path = os.path.join(path, "traces.jsonl")
    if not os.path.exists(path):
        print(f"no traces at {path}; run with --trace-scorers {args.first} {args.second}", file=sys.stderr)
        return 1
    report = score_trace_report(read_traces(path), first=args.first, second=args.second)
    print(f"step  spearman({args.first}, {args.second})")
    for row in report:
        rho = "undefined" if row["spearman"] is None else f"{row['spearman']:+.4f}"
        print(f"{row['step']:>5}  {rho}")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="snrlora", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one model and write its artifacts")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, help="seed to run (default: first of --seeds)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="scorer x seed grid with a summary table")
    _add_config_flags(p)
    p.add_argument("--scorers", nargs="+", choices=SCORER_NAMES, default=list(SCORER_NAMES))
    p.add_argument("--optimizer-override", choices=("adam", "ivon"))
    p.add_argument("--with-lora", action="store_true", help="add a fixed-rank LoRA row")
    p.add_argument("--lora-adam", action="store_true", help="train the LoRA row with Adam")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate summary.json files below a directory")
    p.add_argument("root")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("trace", help="Spearman correlation between two traced scorers")
    p.add_argument("path", help="run directory or traces.jsonl")
    p.add_argument("--first", default="sensitivity", choices=SCORER_NAMES)
    p.add_argument("--second", default="snr_mean", choices=SCORER_NAMES)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
