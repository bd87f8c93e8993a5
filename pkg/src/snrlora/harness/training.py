"""The training loop: optimizer, scorer and budget allocator wired together."""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..budget import BudgetSchedule, allocate, apply_decision, budget_at, rank_distribution, write_rank_csv
from ..importance import make_scorer
from ..ivon import IVON, Adam
from ..numerics import Rng
from .config import ExperimentConfig
from .model import AdaptedMLP
from .task import generate_task

# Rng streams per purpose; the task uses stream 1 of the task seed
_INIT_STREAM, _BATCH_STREAM, _SAMPLE_STREAM = 2, 3, 4


@dataclass
class RunMetrics:
    seed: int
    config: dict
    records: list = field(default_factory=list)
    budget_trace: list = field(default_factory=list)
    active_trace: list = field(default_factory=list)  # (step, sum of active ranks) after allocation
    traces: list = field(default_factory=list)
    final_ranks: list = field(default_factory=list)
    best_val: float = None
    best_step: int = None
    higher_is_better: bool = False
    best_masks: list = None
    best_mean: np.ndarray = None

    def summary(self):
        return {
            "seed": self.seed,
            "optimizer": self.config["optimizer"],
            "method": self.config["method"],
            "scorer": self.config["scorer"] if self.config["method"] == "adalora" else None,
            "best_val": self.best_val,
            "best_step": self.best_step,
            "higher_is_better": self.higher_is_better,
            "final_ranks": [list(r) for r in self.final_ranks],
            "config": self.config,
        }


def lr_at(config, t):
    """Warm-up value for ``t <= t_warmup``, then linear decay to ``lr * lr_final_frac``."""
    if t <= config.t_warmup:
        if config.optimizer == "ivon":
            return config.warmup_lr if config.warmup_lr is not None else config.lr
        # Adam: linear ramp-up
        return config.lr * t / max(config.t_warmup, 1)
    span = config.total_steps - config.t_warmup
    frac = (t - config.t_warmup) / span
    return config.lr * (1.0 - (1.0 - config.lr_final_frac) * frac)


def build_task(config, seed):
    return generate_task(
        kind=config.task, widths=config.widths, planted_ranks=config.planted_ranks,
        delta_scale=config.delta_scale, noise=config.noise, n_train=config.n_train,
        n_val=config.n_val, seed=seed if config.task_seed is None else config.task_seed,
    )


def make_optimizer(config, params):
    if config.optimizer == "ivon":
        return IVON(
            params, lr=config.lr,
            lambda_ess=config.lambda_ess if config.lambda_ess is not None else config.n_train,
            delta=config.ivon_delta, beta1=config.ivon_beta1, beta2=config.ivon_beta2,
            hess_init=config.hess_init,
        )
    return Adam(params, lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)


def _feed(scorer, opt):
    if scorer.needs_gradients:
        return
    mu, sigma = opt.posterior()
    scorer.update(mu, sigma)


def _summary_stats(values):
    values = np.asarray(values, dtype=np.float64)
    return {"min": float(values.min()), "mean": float(values.mean()), "max": float(values.max())}


def run_experiment(config, seed=None, output_dir=None):
    """Train one model; returns :class:`RunMetrics` and writes artifacts if
    ``output_dir`` (or ``config.output_dir``) is set."""
    config = config.validate() if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config).validate()
    seed = config.seeds[0] if seed is None else int(seed)
    task = build_task(config, seed)
    rng = Rng(seed)
    model = AdaptedMLP(task.base_weights, config.rank_init, rng.child(_INIT_STREAM), kind=task.kind,
                       init_scale=config.init_scale, gamma_orth=config.gamma_orth)
    opt = make_optimizer(config, model.get_params())
    batch_rng, sample_rng = rng.child(_BATCH_STREAM), rng.child(_SAMPLE_STREAM)

    n_layers = len(model.layers)
    b_target = config.target_rank * n_layers
    schedule = BudgetSchedule(config.rank_init * n_layers, b_target, config.t_warmup,
                              config.t_final, config.total_steps)
    scorer = None
    if config.adaptive:
        scorer = make_scorer(config.scorer, model.n_params, config.score_beta1,
                             config.score_beta2, config.score_ema)
    tracers = {name: make_scorer(name, model.n_params, config.score_beta1, config.score_beta2)
               for name in config.trace_scorers}

    metrics = RunMetrics(seed=seed, config=config.to_dict(), higher_is_better=task.kind == "classification")
    last_scores = None
    n_draws = config.mc_samples if config.optimizer == "ivon" else 1
    order, cursor = batch_rng.permutation(config.n_train), 0

    for t in range(1, config.total_steps + 1):
        opt.lr = lr_at(config, t)
        if cursor + config.batch_size > config.n_train:
            order, cursor = batch_rng.permutation(config.n_train), 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size

        grads, loss, task_loss = [], 0.0, 0.0
        for _ in range(n_draws):
            theta = opt.draw(sample_rng)
            l, tl, g = model.loss_and_grad(theta, task.x_train[idx], task.y_train[idx])
            grads.append(g)
            loss += l / n_draws
            task_loss += tl / n_draws
        grad = grads[0] if n_draws == 1 else np.mean(grads, axis=0)
        opt.step(grads[0] if n_draws == 1 else np.vstack(grads))
        model.set_params(opt.mean)

        for s in [scorer, *tracers.values()]:
            if s is not None and s.needs_gradients:
                s.update(opt.mean, grad)

        if t > config.t_warmup and t % config.alloc_interval == 0:
            budget = budget_at(schedule, t) if config.adaptive else model_budget(model)
            if config.adaptive:
                _feed(scorer, opt)
                scores = model.triplet_scores(scorer.scores())
                decision = allocate(scores, budget, step=t)
                apply_decision(model.layers, decision)
                last_scores = [s.score for s in scores]
            metrics.budget_trace.append((t, budget))
            metrics.active_trace.append((t, model_budget(model)))
            if tracers:
                snap = {"step": t}
                for name, s in tracers.items():
                    _feed(s, opt)
                    snap[name] = [ts.score for ts in model.triplet_scores(s.scores())]
                metrics.traces.append(snap)

        if config.rank_csv_interval and t % config.rank_csv_interval == 0 and _out(config, output_dir):
            _write_ranks(model, _out(config, output_dir), f"ranks_step{t:06d}.csv")

        val = None
        if t % config.eval_interval == 0 or t == config.total_steps:
            val = model.metric(task.x_val, task.y_val)
            better = (metrics.best_val is None
                      or (val > metrics.best_val if metrics.higher_is_better else val < metrics.best_val))
            if better:
                metrics.best_val, metrics.best_step = val, t
                metrics.best_masks = model.masks()
                metrics.best_mean = opt.mean.copy()

        if t % config.log_interval == 0 or t == config.total_steps:
            record = {
                "step": t,
                "loss": loss,
                "task_loss": task_loss,
                "lr": opt.lr,
                "budget": sum(model.active_ranks()),
                "active_ranks": model.active_ranks(),
                "val_metric": val,
            }
            if last_scores is not None:
                record["triplet_scores"] = _summary_stats(last_scores)
            metrics.records.append(record)

    metrics.final_ranks = rank_distribution(model.layers)
    out = _out(config, output_dir)
    if out:
        write_artifacts(metrics, out)
    return metrics


def model_budget(model):
    return sum(model.active_ranks())


def _out(config, output_dir):
    return output_dir if output_dir is not None else config.output_dir


def _write_ranks(model, out, name):
    os.makedirs(out, exist_ok=True)
    write_rank_csv(rank_distribution(model.layers), os.path.join(out, name))


def write_artifacts(metrics, out):
    """``metrics.jsonl``, ``ranks.csv``, ``summary.json`` and (if traced) ``traces.jsonl``."""
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.jsonl"), "w") as fh:
        for rec in metrics.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    write_rank_csv(metrics.final_ranks, os.path.join(out, "ranks.csv"))
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(metrics.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if metrics.traces:
        with open(os.path.join(out, "traces.jsonl"), "w") as fh:
            for snap in metrics.traces:
                fh.write(json.dumps(snap, sort_keys=True) + "\n")
