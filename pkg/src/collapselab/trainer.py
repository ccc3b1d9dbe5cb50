"""Closed-loop policy-gradient training with filtering and collapse metrics.

One iteration: collect a fresh on-policy batch, score the diagnostic proxy
panel, rank prompt groups by the configured statistic, apply the filter
decision, and take a plain ascent step on the weighted sum of task and
regularizer gradients.  Masked groups contribute nothing to the step — the
regularizer is masked together with the task term, so a fully rejected batch
leaves the parameters bit-identical.

Metrics are recorded per iteration in a fixed delimited schema (CSV_HEADER);
floats are written with shortest round-trip repr so a run is byte-reproducible
from (config, seed).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import softmax

from . import rng as streams
from .envs import MOVES, ContextualTargetEnv, SlipGridEnv
from .errors import ConfigError, DomainError
from .filtering import FilterConfig, FilterDecision, _rank, apply_filter_mask, group_statistics, select
from .gradients import (
    advantages,
    dominance_ratio,
    grpo_normalize,
    reg_gradient,
    score_function,
    task_gradient_mc,
)
from .miproxy import (
    EmaState,
    cross_score,
    matched_marginal,
    mi_est,
    mi_seq_est,
    mi_zscore,
    mi_zscore_ema,
    proxy_entropies,
    recall_at_k,
    retrieval_acc,
)
from .policy import PolicyParams, save_checkpoint
from .rollout import RolloutBatch, collect_batch, rv_statistics, write_rollout_log
from .rng import root_key

CSV_HEADER = (
    "iter,ret,succ,ret_acc,recall2,recall4,recall8,mi_est,mi_seq,mi_z,mi_z_ema,"
    "h_cond,h_marg,rv_mean,rv_std,rv_min,rv_max,rv_som,g_task,g_reg,rho,"
    "kept_ratio,zero_var,rejected"
)

STOP_COMPLETED = "completed"
STOP_RV_COLLAPSE = "rv_collapse"
STOP_SUCCESS_FLOOR = "success_floor"
STOP_NAN = "nan_abort"


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 400
    num_prompts: int = 8
    group_size: int = 16
    learning_rate: float = 1e-6
    lambda_kl: float = 0.001
    lambda_ent: float = 0.001
    grpo_norm: bool = False
    scale_loss_by_rho: bool = True
    score_scope: str = "first_turn"
    filter: FilterConfig = field(default_factory=FilterConfig)
    eval_prompts: int = 512
    eval_temperature: float = 0.5
    eval_every: int = 1
    early_stop: bool = True
    rv_floor_frac: float = 0.1
    rv_floor_patience: int = 5
    success_floor: float = 0.01
    success_patience: int = 5
    baseline_window: int = 10
    checkpoint_every: int = 0
    log_rollouts: bool = False
    traj_keep_top: int = 0
    traj_keep_bottom: int = 0
    seed: int = 0
    # ablation hook: train on one RV quartile only (0 = highest-RV quarter)
    quartile: int | None = None

    def __post_init__(self):
        if self.iterations < 1 or self.group_size < 2 or self.num_prompts < 2:
            raise ConfigError("iterations >= 1, group_size >= 2, num_prompts >= 2 required")
        if self.eval_every < 1 or self.eval_prompts < 1:
            raise ConfigError("eval_every and eval_prompts must be >= 1")
        if self.eval_temperature <= 0:
            raise ConfigError("eval_temperature must be > 0")
        if self.quartile is not None and self.quartile not in (0, 1, 2, 3):
            raise ConfigError("quartile must be in 0..3")
        if self.traj_keep_top < 0 or self.traj_keep_bottom < 0:
            raise ConfigError("trajectory keep counts must be >= 0")


@dataclass(frozen=True)
class MetricsRecord:
    """One CSV row; field order matches CSV_HEADER."""

    iteration: int
    ret: float
    succ: float
    ret_acc: float
    recall2: float
    recall4: float
    recall8: float
    mi_est: float
    mi_seq: float
    mi_z: float
    mi_z_ema: float
    h_cond: float
    h_marg: float
    rv_mean: float
    rv_std: float
    rv_min: float
    rv_max: float
    rv_som: float
    g_task: float
    g_reg: float
    rho: float
    kept_ratio: float
    zero_var: int
    rejected: int

    def to_csv(self) -> str:
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int":
                parts.append(str(int(v)))
            else:
                parts.append(repr(float(v)))
        return ",".join(parts)

    def as_dict(self) -> dict:
        names = CSV_HEADER.split(",")
        values = [getattr(self, f.name) for f in fields(self)]
        return dict(zip(names, values))

    @classmethod
    def from_csv(cls, line: str) -> "MetricsRecord":
        raw = line.strip().split(",")
        specs = fields(cls)
        if len(raw) != len(specs):
            raise ConfigError(f"metrics row has {len(raw)} columns, expected {len(specs)}")
        values = [int(r) if f.type == "int" else float(r) for r, f in zip(raw, specs)]
        return cls(*values)


@dataclass
class TrainResult:
    records: list
    eval_history: list  # (iteration, success) pairs at actual eval checkpoints
    params: PolicyParams
    ref: PolicyParams
    stop_reason: str
    ema_state: EmaState

    @property
    def stopped_early(self) -> bool:
        return self.stop_reason in (STOP_RV_COLLAPSE, STOP_SUCCESS_FLOOR)

    @property
    def peak_success(self) -> float:
        return max((s for _, s in self.eval_history), default=float("nan"))

    def final(self) -> MetricsRecord:
        return self.records[-1]


class RunWriter:
    """Writes the on-disk layout of a run: metrics.csv, summary.json,
    resolved.cfg, checkpoints/, rollouts/."""

    def __init__(self, out_dir, resolved_cfg_text: str | None = None):
        self.out_dir = str(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        if resolved_cfg_text is not None:
            with open(os.path.join(self.out_dir, "resolved.cfg"), "w") as f:
                f.write(resolved_cfg_text)
        self._metrics = open(os.path.join(self.out_dir, "metrics.csv"), "w")
        self._metrics.write(CSV_HEADER + "\n")

    def write_record(self, rec: MetricsRecord):
        self._metrics.write(rec.to_csv() + "\n")
        self._metrics.flush()

    def write_rollouts(self, batch: RolloutBatch):
        d = os.path.join(self.out_dir, "rollouts")
        os.makedirs(d, exist_ok=True)
        write_rollout_log(batch, os.path.join(d, f"iter_{batch.iteration:05d}.jsonl"))

    def write_checkpoint(self, params: PolicyParams, name: str):
        d = os.path.join(self.out_dir, "checkpoints")
        os.makedirs(d, exist_ok=True)
        save_checkpoint(params, os.path.join(d, f"{name}.json"))

    def write_summary(self, summary: dict):
        with open(os.path.join(self.out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")

    def close(self):
        if not self._metrics.closed:
            self._metrics.close()


def proxy_panel(params: PolicyParams, batch: RolloutBatch, scope: str, key,
                ema: EmaState):
    """The per-iteration diagnostic panel, shared by the train loop and the
    offline log replay so both produce identical numbers.

    recall columns are clamped at k = P (recall@P is identically 1) so the
    schema stays fixed for small prompt sets.  Returns (panel, matched, ema').
    """
    matrix = cross_score(params, batch, scope, key=key)
    matched, marginal = matched_marginal(matrix)
    P = matrix.num_prompts
    mi_z_e, ema = mi_zscore_ema(matched, marginal, ema)
    h_cond, h_marg = proxy_entropies(matched, marginal)
    panel = {
        "ret_acc": retrieval_acc(matrix, key),
        "recall2": recall_at_k(matrix, min(2, P), key),
        "recall4": recall_at_k(matrix, min(4, P), key),
        "recall8": recall_at_k(matrix, min(8, P), key),
        "mi_est": mi_est(matched, marginal),
        "mi_seq": mi_seq_est(matrix),
        "mi_z": mi_zscore(matched, marginal),
        "mi_z_ema": mi_z_e,
        "h_cond": h_cond,
        "h_marg": h_marg,
    }
    return panel, matched, ema


# -- evaluation ---------------------------------------------------------------


def _sample_actions(cum_rows, prompts, u):
    # inverse-CDF draw per episode; clip guards cum[-1] rounding below 1
    idx = (cum_rows[prompts] <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cum_rows.shape[1] - 1)


def evaluate(params: PolicyParams, env, num_episodes: int, temperature: float, key) -> float:
    """Greedy-free success-rate eval: sample episodes from the
    temperature-scaled action head and report the success fraction.

    Reasoning tokens are not sampled — they never influence the environment,
    so the vectorized eval path draws only actions (and slip outcomes).
    Success means a noiseless reward of at least 1.0 for the contextual
    target task and reaching the goal for the grid.
    """
    if temperature <= 0:
        raise DomainError("temperature must be > 0")
    gen = key.generator()
    P = params.spec.num_prompts
    prompts = np.arange(num_episodes) % P
    probs = softmax(params.action_logits / temperature, axis=1)
    cum = np.cumsum(probs, axis=1)

    if isinstance(env, ContextualTargetEnv):
        u = gen.random(num_episodes)
        actions = _sample_actions(cum, prompts, u)
        tables = np.stack([env.reward_table(x) for x in range(P)])
        return float(np.mean(tables[prompts, actions] >= 1.0 - 1e-9))

    if not isinstance(env, SlipGridEnv):
        raise ConfigError(f"no evaluation routine for {type(env).__name__}")
    starts = np.array(env.start_cells)
    pos = starts[prompts].copy()
    goal = np.array(env.goal)
    holes = np.array(env.holes).reshape(-1, 2) if env.holes else None
    alive = np.ones(num_episodes, dtype=bool)
    success = np.zeros(num_episodes, dtype=bool)
    moves = np.array(MOVES)
    for _ in range(env.max_turns):
        u = gen.random(num_episodes)
        actions = _sample_actions(cum, prompts, u)
        if env.slip_prob > 0:
            slipped = gen.random(num_episodes) < env.slip_prob
            # uniform over the three non-intended directions
            offset = gen.integers(1, 4, size=num_episodes)
            actions = np.where(slipped, (actions + offset) % 4, actions)
        nxt = pos + moves[actions]
        off = (nxt < 0).any(axis=1) | (nxt >= env.grid_size).any(axis=1)
        nxt = np.where(off[:, None], pos, nxt)
        pos = np.where(alive[:, None], nxt, pos)
        at_goal = alive & (pos == goal).all(axis=1)
        success |= at_goal
        dead = at_goal
        if holes is not None:
            in_hole = alive & (pos[:, None, :] == holes[None, :, :]).all(axis=2).any(axis=1)
            dead = dead | in_hole
        alive &= ~dead
        if not alive.any():
            break
    return float(success.mean())


# -- gradient assembly ---------------------------------------------------------


def _trajectory_subset_gradient(params, group, keep_top: int, keep_bottom: int):
    """Trajectory-level return filtering: keep the top/bottom trajectories of
    the group by return, recompute advantages over the kept subset.

    Keeping G/2 from each end keeps every trajectory, which reproduces the
    unfiltered estimator exactly.
    """
    returns = np.asarray(group.returns)
    order = np.argsort(-returns, kind="stable")
    kept_idx = sorted(set(order[:keep_top]) | set(order[len(order) - keep_bottom:]))
    if not kept_idx:
        return np.zeros(params.spec.num_params)
    kept_returns = returns[list(kept_idx)]
    adv = kept_returns - kept_returns.mean()
    grad = np.zeros(params.spec.num_params)
    for a, i in zip(adv, kept_idx):
        grad += a * score_function(params, group.trajectories[i])
    return grad / len(kept_idx)


def _group_gradient(params, group, cfg: TrainConfig):
    if cfg.traj_keep_top or cfg.traj_keep_bottom:
        return _trajectory_subset_gradient(
            params, group, cfg.traj_keep_top, cfg.traj_keep_bottom
        )
    if cfg.grpo_norm:
        adv, degenerate = grpo_normalize(advantages(group.returns), group.rv)
        if degenerate:
            return np.zeros(params.spec.num_params)
        grad = np.zeros(params.spec.num_params)
        for a, traj in zip(adv, group.trajectories):
            grad += a * score_function(params, traj)
        return grad / len(group.trajectories)
    return task_gradient_mc(params, group)


def _quartile_decision(stat_values, quartile: int, key) -> FilterDecision:
    values = np.asarray(stat_values, dtype=float)
    order = _rank(values, key, ascending=False)
    part = np.array_split(order, 4)[quartile]
    zero = int(np.sum(values < 1e-12))
    return FilterDecision(
        kept=tuple(int(i) for i in part),
        k_star=len(part),
        num_groups=values.size,
        zero_variance_count=zero,
        statistic_values=tuple(float(v) for v in values),
        rejected=len(part) == 0,
    )


# -- early stopping -------------------------------------------------------------


def early_stop_check(records, eval_history, cfg: TrainConfig) -> str | None:
    """RV floor: mean group RV below ``rv_floor_frac`` of the first-window
    baseline for ``rv_floor_patience`` consecutive iterations.  Success floor:
    eval success below ``success_floor`` at ``success_patience`` consecutive
    eval checkpoints."""
    if not cfg.early_stop:
        return None
    w = cfg.baseline_window
    if len(records) >= w + cfg.rv_floor_patience:
        baseline = float(np.mean([r.rv_mean for r in records[:w]]))
        if baseline > 0:
            tail = records[-cfg.rv_floor_patience:]
            if all(r.rv_mean < cfg.rv_floor_frac * baseline for r in tail):
                return STOP_RV_COLLAPSE
    if len(eval_history) >= cfg.success_patience:
        tail = eval_history[-cfg.success_patience:]
        if all(s < cfg.success_floor for _, s in tail):
            return STOP_SUCCESS_FLOOR
    return None


# -- the loop --------------------------------------------------------------------


def train(cfg: TrainConfig, env, params: PolicyParams, ref: PolicyParams | None = None,
          writer: RunWriter | None = None) -> TrainResult:
    if ref is None:
        ref = PolicyParams(params.spec, params.flat.copy())
    ema = EmaState()
    records: list[MetricsRecord] = []
    eval_history: list[tuple[int, float]] = []
    stop_reason = STOP_COMPLETED
    succ = float("nan")
    n_params = params.spec.num_params

    for it in range(cfg.iterations):
        it_key = root_key(cfg.seed, it)
        batch = collect_batch(params, env, cfg.num_prompts, cfg.group_size, it_key,
                              iteration=it)
        rvs = rv_statistics(batch)

        panel, matched, ema = proxy_panel(params, batch, cfg.score_scope, it_key, ema)

        stat_values = group_statistics(cfg.filter.statistic, batch, matched=matched)
        if cfg.quartile is not None:
            decision = _quartile_decision(batch.rv_values(), cfg.quartile, it_key)
        else:
            decision = select(cfg.filter, stat_values, key=it_key)
        weights, skip = apply_filter_mask(batch, decision)

        g_task_total = np.zeros(n_params)
        g_reg_total = np.zeros(n_params)
        if not skip:
            for i, group in enumerate(batch.groups):
                if weights[i] == 0.0:
                    continue
                g_task_total += weights[i] * _group_gradient(params, group, cfg)
                g_reg_total += weights[i] * reg_gradient(
                    params, ref, group.prompt_id, cfg.lambda_kl, cfg.lambda_ent
                )
        norm_task = float(np.linalg.norm(g_task_total))
        norm_reg = float(np.linalg.norm(g_reg_total))

        if it % cfg.eval_every == 0:
            succ = evaluate(params, env, cfg.eval_prompts, cfg.eval_temperature,
                            it_key.child(streams.EVAL))
            eval_history.append((it, succ))

        rec = MetricsRecord(
            iteration=it,
            ret=batch.mean_return(),
            succ=succ,
            rv_mean=rvs.mean,
            **panel,
            rv_std=rvs.std,
            rv_min=rvs.min,
            rv_max=rvs.max,
            rv_som=float("nan") if rvs.std_over_mean is None else rvs.std_over_mean,
            g_task=norm_task,
            g_reg=norm_reg,
            rho=dominance_ratio(norm_task, norm_reg),
            kept_ratio=decision.effective_keep_ratio,
            zero_var=rvs.zero_variance_count,
            rejected=int(decision.rejected),
        )
        records.append(rec)
        if writer is not None:
            writer.write_record(rec)
            if cfg.log_rollouts:
                writer.write_rollouts(batch)
            if cfg.checkpoint_every > 0 and it % cfg.checkpoint_every == 0:
                # pre-update parameters: pairs with this iteration's rollouts
                writer.write_checkpoint(params, f"iter_{it:05d}")

        scale = 1.0
        if cfg.quartile is None and cfg.filter.strategy != "none" and cfg.scale_loss_by_rho:
            scale = cfg.filter.rho
        update = cfg.learning_rate * scale * (g_task_total + g_reg_total)
        if not np.all(np.isfinite(update)):
            stop_reason = STOP_NAN
            if writer is not None:
                writer.write_summary(_nan_diagnostic(it, update, rec))
            break
        params.flat += update

        reason = early_stop_check(records, eval_history, cfg)
        if reason is not None:
            stop_reason = reason
            break

    result = TrainResult(records, eval_history, params, ref, stop_reason, ema)
    if writer is not None:
        if stop_reason != STOP_NAN:
            writer.write_summary(summarize(result, cfg))
        writer.write_checkpoint(params, "final")
        writer.close()
    return result


def _nan_diagnostic(iteration: int, update, rec: MetricsRecord) -> dict:
    bad = int(np.sum(~np.isfinite(update)))
    return {
        "stop_reason": STOP_NAN,
        "iteration": iteration,
        "non_finite_components": bad,
        "last_metrics": rec.as_dict(),
    }


def summarize(result: TrainResult, cfg: TrainConfig) -> dict:
    final = result.final().as_dict()
    return {
        "iterations_run": len(result.records),
        "stop_reason": result.stop_reason,
        "early_stopped": result.stopped_early,
        "seed": cfg.seed,
        "final": final,
        "peak_success": result.peak_success,
        "peak_mi_est": max(r.mi_est for r in result.records),
        "eval_checkpoints": len(result.eval_history),
    }


# -- reporting harness -----------------------------------------------------------


@dataclass(frozen=True)
class BucketRow:
    bucket: int
    count: int
    mean_rv: float
    mean_norm_task: float
    mean_norm_reg: float


def rv_bucket_report(batches, params: PolicyParams, ref: PolicyParams,
                     lambda_kl: float, lambda_ent: float, num_buckets: int = 6):
    """Bucket all groups from ``batches`` into ``num_buckets`` equal slices by
    ascending RV and report the mean task / regularizer gradient norms per
    bucket, all measured at the same parameter point."""
    entries = []
    for batch in batches:
        for group in batch.groups:
            g_t = task_gradient_mc(params, group)
            g_r = reg_gradient(params, ref, group.prompt_id, lambda_kl, lambda_ent)
            entries.append((group.rv, float(np.linalg.norm(g_t)),
                            float(np.linalg.norm(g_r))))
    if len(entries) < num_buckets:
        raise DomainError(f"{len(entries)} groups cannot fill {num_buckets} buckets")
    entries.sort(key=lambda e: e[0])
    arr = np.array(entries)
    rows = []
    for b, chunk in enumerate(np.array_split(arr, num_buckets)):
        rows.append(BucketRow(
            bucket=b,
            count=chunk.shape[0],
            mean_rv=float(chunk[:, 0].mean()),
            mean_norm_task=float(chunk[:, 1].mean()),
            mean_norm_reg=float(chunk[:, 2].mean()),
        ))
    return rows


def replay_metrics(path) -> list[MetricsRecord]:
    """Parse a metrics.csv back into records (header validated)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path} does not start with the expected metrics header")
    return [MetricsRecord.from_csv(line) for line in lines[1:] if line]


def run_config(exp_cfg, out_dir=None, seed: int | None = None) -> TrainResult:
    """Build env/policy from an ExperimentConfig and train, optionally writing
    run artifacts under ``out_dir``."""
    if seed is not None:
        exp_cfg = exp_cfg.set("run.seed", seed)
    cfg = exp_cfg.train_config()
    env = exp_cfg.build_env()
    params = exp_cfg.initial_params()
    writer = None
    if out_dir is not None:
        writer = RunWriter(out_dir, resolved_cfg_text=exp_cfg.to_ini_text())
    return train(cfg, env, params, writer=writer)
