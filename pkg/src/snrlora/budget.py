"""Global rank budget: cubic decay schedule and top-k triplet allocation."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .adapter import set_mask

RANK_CSV_HEADER = ("layer", "module", "rank")


@dataclass(frozen=True)
class BudgetSchedule:
    """Budget ``b0`` for ``t <= t_warmup``, cubic decay to ``b_target`` by
    ``t_total - t_final``, then constant."""

    b_init: int
    b_target: int
    t_warmup: int
    t_final: int
    t_total: int

    def __post_init__(self):
        if self.b_target < 1 or self.b_init < self.b_target:
            raise ValueError("need b_init >= b_target >= 1")
        if min(self.t_warmup, self.t_final) < 0 or self.t_total < 1:
            raise ValueError("step counts must be nonnegative and t_total positive")
        if self.t_warmup + self.t_final >= self.t_total:
            raise ValueError("t_warmup + t_final must be smaller than t_total")

    @classmethod
    def with_default_init(cls, b_target, t_warmup, t_final, t_total):
        return cls(round(1.5 * b_target), b_target, t_warmup, t_final, t_total)


def budget_at(schedule, t):
    s = schedule
    if not 0 <= t <= s.t_total:
        raise ValueError(f"t={t} outside [0, {s.t_total}]")
    if t <= s.t_warmup:
        return s.b_init
    decay_end = s.t_total - s.t_final
    if t >= decay_end:
        return s.b_target
    frac = 1.0 - (t - s.t_warmup) / (decay_end - s.t_warmup)
    return s.b_target + math.floor((s.b_init - s.b_target) * frac**3)


@dataclass
class AllocationDecision:
    step: int
    budget: int
    kept: frozenset
    pruned: frozenset


def allocate(scores, budget, step=0):
    """Keep the ``budget`` highest-scoring triplets.

    Ties are broken by ``(layer_id, triplet_index)`` ascending.
    """
    if budget < 0 or budget > len(scores):
        raise ValueError(f"budget {budget} outside [0, {len(scores)}]")
    order = sorted(scores, key=lambda s: (-s.score, s.layer_id, s.triplet_index))
    keys = [(s.layer_id, s.triplet_index) for s in order]
    return AllocationDecision(step, budget, frozenset(keys[:budget]), frozenset(keys[budget:]))


def apply_decision(layers, decision):
    """Rewrite every layer's mask from ``decision`` (layer ids index ``layers``)."""
    for layer_id, layer in enumerate(layers):
        mask = np.array([(layer_id, k) in decision.kept for k in range(layer.rank)])
        set_mask(layer, mask)


def rank_distribution(layers):
    """Rows ``(layer, module, active_rank)``, one per adapter."""
    return [(i, layer.module, layer.active_rank) for i, layer in enumerate(layers)]


def write_rank_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RANK_CSV_HEADER)
        writer.writerows(rows)


def read_rank_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RANK_CSV_HEADER:
            raise ValueError(f"unexpected rank CSV header {reader.fieldnames}")
        return [(int(r["layer"]), r["module"], int(r["rank"])) for r in reader]
