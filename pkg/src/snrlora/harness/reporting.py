"""Cross-run summaries and score-correlation reports."""

import csv
import json
import math
import os

import numpy as np
from scipy.stats import spearmanr

from .config import ExperimentConfig
from .training import run_experiment

# fields that define the task; runs being compared must agree on them
TASK_FIELDS = ("task", "widths", "planted_ranks", "delta_scale", "noise", "n_train", "n_val", "task_seed")
SUMMARY_COLUMNS = ("method", "optimizer", "scorer", "n", "mean", "std", "mark")


def row_label(config):
    """``(method, optimizer, scorer)``; fixed-rank runs carry ``r=<rank>`` as scorer."""
    if isinstance(config, ExperimentConfig):
        config = config.to_dict()
    scorer = config["scorer"] if config["method"] == "adalora" else f"r={config['target_rank']}"
    return config["method"], config["optimizer"], scorer


def summarize(summaries):
    """Group per-run summaries by label and mark best / second best means.

    ``summaries`` are dicts as produced by ``RunMetrics.summary()``.
    """
    if not summaries:
        raise ValueError("nothing to summarize")
    directions = {s["higher_is_better"] for s in summaries}
    if len(directions) != 1:
        raise ValueError("runs mix metric directions")
    higher = directions.pop()
    groups = {}
    for s in summaries:
        groups.setdefault(row_label(s["config"]), []).append(s["best_val"])
    rows = []
    for (method, optimizer, scorer), vals in groups.items():
        vals = np.asarray(vals, dtype=np.float64)
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        rows.append({"method": method, "optimizer": optimizer, "scorer": scorer,
                     "n": int(vals.size), "mean": float(vals.mean()), "std": std, "mark": ""})
    means = sorted({r["mean"] for r in rows}, reverse=higher)
    for r in rows:
        if r["mean"] == means[0]:
            r["mark"] = "best"
        elif len(means) > 1 and r["mean"] == means[1]:
            r["mark"] = "second"
    return rows


def _check_same_task(configs):
    ref = None
    for cfg in configs:
        key = tuple(tuple(v) if isinstance(v, (list, tuple)) else v
                    for v in (getattr(cfg, f) for f in TASK_FIELDS + ("seeds",)))
        if ref is None:
            ref = key
        elif key != ref:
            raise ValueError("configs disagree on task definition or seeds")


def compare_scorers(configs, output_dir=None):
    """Run every config over its seeds and tabulate mean and std of the best
    validation metric per (method, optimizer, scorer).

    Writes ``summary.csv``, ``summary.txt`` and one run directory per
    (config, seed) when ``output_dir`` is given.  Returns ``(rows, runs)``.
    """
    configs = [c.validate() for c in configs]
    _check_same_task(configs)
    runs = []
    for cfg in configs:
        method, optimizer, scorer = row_label(cfg)
        for seed in cfg.seeds:
            run_dir = None
            if output_dir is not None:
                run_dir = os.path.join(output_dir, f"{method}-{optimizer}-{scorer}", f"seed{seed}")
            runs.append(run_experiment(cfg, seed=seed, output_dir=run_dir))
    rows = summarize([r.summary() for r in runs])
    if output_dir is not None:
        write_summary(rows, output_dir)
    return rows, runs


def render_table(rows):
    lines = [f"{'method':<8} {'optimizer':<9} {'scorer':<12} {'n':>3} {'mean':>10} {'std':>10}  mark"]
    for r in rows:
        lines.append(f"{r['method']:<8} {r['optimizer']:<9} {r['scorer']:<12} {r['n']:>3} "
                     f"{r['mean']:>10.5f} {r['std']:>10.5f}  {r['mark']}")
    return "\n".join(lines) + "\n"


def write_summary(rows, output_dir):
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(output_dir, "summary.txt"), "w") as fh:
        fh.write(render_table(rows))


def load_summaries(root):
    """Every ``summary.json`` below ``root``, sorted by path."""
    found = []
    for dirpath, _, files in sorted(os.walk(root)):
        if "summary.json" in files:
            with open(os.path.join(dirpath, "summary.json")) as fh:
                found.append(json.load(fh))
    return found


def spearman(a, b):
    """Spearman rank correlation, ``None`` when undefined (constant input)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("score vectors differ in length")
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    rho = float(spearmanr(a, b).statistic)
    return None if math.isnan(rho) else rho


def score_trace_report(traces, first="sensitivity", second="snr_mean"):
    """Per-snapshot Spearman correlation between two traced triplet-score vectors.

    ``traces`` is a list of snapshot dicts (``RunMetrics.traces`` or the lines
    of ``traces.jsonl``), or a run object carrying ``.traces``.
    """
    traces = getattr(traces, "traces", traces)
    if not traces:
        raise ValueError("run has no score traces")
    report = []
    for snap in traces:
        if first not in snap or second not in snap:
            raise ValueError(f"snapshot at step {snap.get('step')} lacks {first!r} or {second!r}")
        report.append({"step": snap["step"], "spearman": spearman(snap[first], snap[second])})
    return report


def read_traces(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
