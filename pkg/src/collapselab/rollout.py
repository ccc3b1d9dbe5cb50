"""Batched rollouts, reward-variance statistics, and the trajectory log format.

A batch holds exactly one group of G trajectories per prompt, groups ordered
by prompt id.  Reward variance (RV) is the unbiased sample variance of the
G episode returns within a group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .errors import DomainError, LogParseError
from .policy import PolicyParams, SamplingTables, Trajectory, Turn, sample_trajectory
from .rng import StreamKey

ZERO_VARIANCE_EPS = 1e-12

LOG_FIELDS = ("iter", "prompt", "k", "tokens", "actions", "rewards", "ret")


def reward_variance(returns) -> float:
    """Unbiased (G-1 denominator) sample variance of episode returns."""
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise DomainError("reward variance needs at least 2 returns")
    return float(np.sum((r - r.mean()) ** 2) / (r.size - 1))


@dataclass
class TrajectoryGroup:
    prompt_id: int
    trajectories: list[Trajectory]
    rv: float
    mean_return: float

    @property
    def returns(self) -> np.ndarray:
        return np.array([t.episode_return for t in self.trajectories])

    @classmethod
    def from_trajectories(cls, prompt_id: int, trajectories) -> "TrajectoryGroup":
        returns = [t.episode_return for t in trajectories]
        return cls(
            prompt_id=prompt_id,
            trajectories=list(trajectories),
            rv=reward_variance(returns),
            mean_return=float(np.mean(returns)),
        )


@dataclass
class RolloutBatch:
    iteration: int
    groups: list[TrajectoryGroup]
    num_prompts: int
    group_size: int
    seed: int | None = None  # root seed, recorded so offline tools can re-derive streams

    def rv_values(self) -> np.ndarray:
        return np.array([g.rv for g in self.groups])

    def mean_return(self) -> float:
        return float(np.mean([g.mean_return for g in self.groups]))


def collect_batch(
    params: PolicyParams,
    env,
    num_prompts: int,
    group_size: int,
    key: StreamKey,
    iteration: int = 0,
) -> RolloutBatch:
    """Sample G trajectories for each of the first P prompts.

    ``key`` should already encode (seed, iteration); each trajectory draws
    from the substream ``key.child(ROLLOUT, prompt, k)``, so results are
    independent of any execution schedule.
    """
    if num_prompts < 2:
        raise DomainError("batches require at least 2 prompts")
    if group_size < 2:
        raise DomainError("group size must be >= 2 (reward variance needs it)")
    if num_prompts > env.num_prompts or num_prompts > params.spec.num_prompts:
        raise DomainError("num_prompts exceeds the environment or policy support")
    tables = SamplingTables(params)
    groups = []
    for x in range(num_prompts):
        trajs = [
            sample_trajectory(params, env, x, key.child(streams.ROLLOUT, x, k), tables)
            for k in range(group_size)
        ]
        groups.append(TrajectoryGroup.from_trajectories(x, trajs))
    return RolloutBatch(
        iteration=iteration,
        groups=groups,
        num_prompts=num_prompts,
        group_size=group_size,
        seed=key.parts[0] if key.parts else None,
    )


@dataclass
class RvStatistics:
    mean: float
    std: float
    var: float
    min: float
    max: float
    std_over_mean: float | None
    zero_variance_count: int


def rv_statistics(batch: RolloutBatch) -> RvStatistics:
    """Across-group summary of the per-group reward variances.

    std/var use the unbiased (n-1) convention; std_over_mean is None when
    the mean RV is zero (dispersion ratio undefined).
    """
    rv = batch.rv_values()
    mean = float(rv.mean())
    var = float(np.sum((rv - mean) ** 2) / (rv.size - 1)) if rv.size > 1 else 0.0
    std = float(np.sqrt(var))
    return RvStatistics(
        mean=mean,
        std=std,
        var=var,
        min=float(rv.min()),
        max=float(rv.max()),
        std_over_mean=(std / mean) if mean > 0 else None,
        zero_variance_count=int(np.sum(rv < ZERO_VARIANCE_EPS)),
    )


def write_rollout_log(batch: RolloutBatch, path):
    """One JSON object per trajectory per line, grouped by prompt then k."""
    with open(path, "w") as f:
        for group in batch.groups:
            for k, traj in enumerate(group.trajectories):
                rec = {
                    "iter": batch.iteration,
                    "prompt": group.prompt_id,
                    "k": k,
                    "tokens": [turn.tokens for turn in traj.turns],
                    "actions": [turn.action for turn in traj.turns],
                    "rewards": [turn.reward for turn in traj.turns],
                    "ret": traj.episode_return,
                }
                if batch.seed is not None:
                    rec["seed"] = batch.seed
                f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_rollout_log(path) -> RolloutBatch:
    """Parse a rollout log back into a batch; raises LogParseError with the
    offending line number on malformed input."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise LogParseError(f"invalid JSON: {e.msg}", line=lineno) from e
            missing = [k for k in LOG_FIELDS if k not in rec]
            if missing:
                raise LogParseError(f"missing fields {missing}", line=lineno)
            if not (len(rec["tokens"]) == len(rec["actions"]) == len(rec["rewards"])):
                raise LogParseError("tokens/actions/rewards turn counts differ", line=lineno)
            if abs(rec["ret"] - sum(rec["rewards"])) > 1e-9:
                raise LogParseError("ret does not equal the sum of rewards", line=lineno)
            rows.append((lineno, rec))
    if not rows:
        raise LogParseError("empty rollout log (batches require P >= 2, G >= 1)")

    iteration = rows[0][1]["iter"]
    seed = rows[0][1].get("seed")
    by_prompt: dict[int, dict[int, Trajectory]] = {}
    for lineno, rec in rows:
        if rec["iter"] != iteration:
            raise LogParseError("mixed iterations in one log", line=lineno)
        turns = [
            Turn(tokens=list(toks), action=int(act), reward=float(rew))
            for toks, act, rew in zip(rec["tokens"], rec["actions"], rec["rewards"])
        ]
        traj = Trajectory(
            prompt_id=int(rec["prompt"]), turns=turns, episode_return=float(rec["ret"])
        )
        by_prompt.setdefault(int(rec["prompt"]), {})[int(rec["k"])] = traj

    prompts = sorted(by_prompt)
    if prompts != list(range(len(prompts))) or len(prompts) < 2:
        raise LogParseError(f"prompt ids {prompts} are not contiguous from 0 (P >= 2)")
    sizes = {len(v) for v in by_prompt.values()}
    if len(sizes) != 1:
        raise LogParseError(f"unequal group sizes {sorted(sizes)}")
    group_size = sizes.pop()
    groups = []
    for x in prompts:
        ks = sorted(by_prompt[x])
        if ks != list(range(group_size)):
            raise LogParseError(f"prompt {x}: sample indices {ks} are not 0..{group_size - 1}")
        groups.append(TrajectoryGroup.from_trajectories(x, [by_prompt[x][k] for k in ks]))
    return RolloutBatch(
        iteration=int(iteration),
        groups=groups,
        num_prompts=len(prompts),
        group_size=group_size,
        seed=seed,
    )
