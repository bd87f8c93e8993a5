"""Experiment configuration.

A config is a flat JSON object whose keys are the fields of
:class:`ExperimentConfig`; unknown keys are rejected.  Tuple fields accept
JSON arrays.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, fields

from ..importance import POSTERIOR_SCORERS, SCORER_NAMES

OUTPUT_ROOT_ENV = "SNRLORA_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def default_output_root():
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


@dataclass
class ExperimentConfig:
    # task
    task: str = "regression"
    widths: tuple = (16, 24, 24, 24, 8)
    planted_ranks: tuple = (0, 1, 3, 0)
    delta_scale: float = 1.5
    noise: float = 0.05
    n_train: int = 1024
    n_val: int = 512
    task_seed: int = None  # None: reuse the run seed

    # method
    method: str = "adalora"  # "adalora" (adaptive) or "lora" (fixed rank)
    optimizer: str = "ivon"
    scorer: str = "snr_mean"
    target_rank: int = 1
    init_rank: int = None  # None: round(1.5 * target_rank), at least target_rank
    gamma_orth: float = 0.1
    init_scale: float = 0.02

    # schedule
    total_steps: int = 1500
    t_warmup: int = 300
    t_final: int = 300
    alloc_interval: int = 100
    batch_size: int = 64

    # learning rates
    lr: float = 0.1
    warmup_lr: float = None  # None: same as lr
    lr_final_frac: float = 0.0

    # IVON
    lambda_ess: float = None  # None: n_train
    ivon_delta: float = 1e-4
    ivon_beta1: float = 0.9
    ivon_beta2: float = 0.99999
    hess_init: float = 1.0
    mc_samples: int = 1

    # Adam
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # scoring
    score_beta1: float = 0.85
    score_beta2: float = 0.85
    score_ema: float = None
    trace_scorers: tuple = ()

    # bookkeeping
    seeds: tuple = (0, 1, 2, 3, 4)
    eval_interval: int = 50
    log_interval: int = 50
    rank_csv_interval: int = 0  # 0: final table only
    output_dir: str = None

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.planted_ranks = tuple(self.planted_ranks)
        self.seeds = tuple(self.seeds)
        self.trace_scorers = tuple(self.trace_scorers)

    @property
    def rank_init(self):
        """Starting rank per layer; fixed-rank runs train at ``target_rank``."""
        if not self.adaptive:
            return self.target_rank
        if self.init_rank is not None:
            return self.init_rank
        return max(self.target_rank, round(1.5 * self.target_rank))

    @property
    def adaptive(self):
        return self.method == "adalora"

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.task in ("regression", "classification"), f"unknown task {self.task!r}")
        need(self.method in ("adalora", "lora"), f"unknown method {self.method!r}")
        need(self.optimizer in ("adam", "ivon"), f"unknown optimizer {self.optimizer!r}")
        if self.adaptive:
            need(self.scorer in SCORER_NAMES, f"unknown scorer {self.scorer!r}")
            need(not (self.optimizer == "adam" and self.scorer in POSTERIOR_SCORERS),
                 f"scorer {self.scorer!r} needs a posterior; use optimizer 'ivon'")
        for name in self.trace_scorers:
            need(name in SCORER_NAMES, f"unknown trace scorer {name!r}")
        need(not (self.trace_scorers and self.optimizer == "adam"
                  and set(self.trace_scorers) & set(POSTERIOR_SCORERS)),
             "posterior trace scorers need optimizer 'ivon'")
        need(self.target_rank >= 1, "target_rank must be >= 1")
        need(self.rank_init >= self.target_rank, "init_rank must be >= target_rank")
        need(len(self.widths) == len(self.planted_ranks) + 1, "need len(widths) == len(planted_ranks) + 1")
        need(self.t_warmup + self.t_final < self.total_steps, "t_warmup + t_final must be < total_steps")
        need(self.alloc_interval >= 1 and self.batch_size >= 1, "alloc_interval and batch_size must be >= 1")
        need(self.eval_interval >= 1 and self.log_interval >= 1, "eval/log intervals must be >= 1")
        need(self.lr > 0 and (self.warmup_lr is None or self.warmup_lr > 0), "learning rates must be positive")
        need(0 <= self.lr_final_frac <= 1, "lr_final_frac must lie in [0, 1]")
        need(self.mc_samples >= 1, "mc_samples must be >= 1")
        need(len(self.seeds) >= 1, "at least one seed is required")
        return self

    def to_dict(self):
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f in fields(self) for v in [getattr(self, f.name)]}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)


CONFIG_FIELDS = tuple(f.name for f in fields(ExperimentConfig))


# Planted-task settings used by the allocation-recovery and comparison checks.
# Every layer starts at rank 3 so the rank-3 layer can be represented at all.
PLANTED_PRESET = {
    "delta_scale": 2.5,
    "n_train": 4096,
    "init_rank": 3,
    "target_rank": 1,
    "total_steps": 3000,
    "t_warmup": 1000,
    "t_final": 500,
    "alloc_interval": 50,
    "lr": 0.3,
    "warmup_lr": 1.0,
}
PRESETS = {"planted": PLANTED_PRESET}
ADAM_LR = 0.01


def planted_config(**overrides):
    """The planted-task preset; Adam runs get their own learning rate."""
    cfg = ExperimentConfig(**PLANTED_PRESET)
    if overrides.get("optimizer") == "adam":
        cfg = cfg.replace(lr=ADAM_LR, warmup_lr=None)
    return cfg.replace(**overrides)
