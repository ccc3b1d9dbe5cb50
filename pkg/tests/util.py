"""Shared test helpers: finite differences, fabricated batches, params factories."""

import numpy as np

from collapselab.policy import PolicyParams, PolicySpec, Trajectory, Turn
from collapselab.rng import root_key
from collapselab.rollout import RolloutBatch, TrajectoryGroup


def fd_gradient(fn, flat, h=1e-5):
    """Central finite differences of a scalar fn over a flat parameter vector."""
    g = np.zeros_like(flat)
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += h
        lo[i] -= h
        g[i] = (fn(hi) - fn(lo)) / (2 * h)
    return g


def rel_err(approx, exact):
    scale = max(np.linalg.norm(exact), 1e-12)
    return float(np.linalg.norm(np.asarray(approx) - np.asarray(exact)) / scale)


def random_params(spec, scale=1.0, seed=0):
    return PolicyParams.random(spec, scale=scale, key=root_key(seed, 7))


def shared_table_params(spec, scale=1.0, seed=0):
    """Every prompt gets a copy of prompt 0's tables."""
    src = PolicyParams.random(spec, scale=scale, key=root_key(seed, 7))
    out = PolicyParams.zeros(spec)
    out.reasoning_logits[:] = src.reasoning_logits[0]
    out.action_logits[:] = src.action_logits[0]
    return out


def fake_trajectory(prompt_id, ret, tokens=(0,), action=0):
    # single-turn stub; reward carries the whole return so logs stay consistent
    return Trajectory(prompt_id=prompt_id, turns=[Turn(tokens=list(tokens), action=action,
                                                       reward=ret)], episode_return=ret)


def fake_group(prompt_id, returns):
    trajs = [fake_trajectory(prompt_id, float(r)) for r in returns]
    return TrajectoryGroup.from_trajectories(prompt_id, trajs)


def fake_batch(returns_per_group, iteration=0, seed=None):
    groups = [fake_group(i, rs) for i, rs in enumerate(returns_per_group)]
    return RolloutBatch(iteration=iteration, groups=groups,
                        num_prompts=len(groups), group_size=len(returns_per_group[0]),
                        seed=seed)


def tiny_spec(P=2, L=1, V=2, A=4, turns=1):
    return PolicySpec(num_prompts=P, reasoning_len=L, vocab_size=V,
                      num_actions=A, num_turns=turns)


def metrics_record(it, **kw):
    """A fully populated CSV record with overridable fields."""
    from collapselab.trainer import MetricsRecord

    base = dict(iteration=it, ret=0.0, succ=1.0, ret_acc=0.5, recall2=0.5,
                recall4=0.5, recall8=0.5, mi_est=0.1, mi_seq=0.1, mi_z=0.0,
                mi_z_ema=0.0, h_cond=0.5, h_marg=0.6, rv_mean=1.0, rv_std=0.0,
                rv_min=1.0, rv_max=1.0, rv_som=0.0, g_task=0.0, g_reg=0.0,
                rho=0.0, kept_ratio=1.0, zero_var=0, rejected=0)
    base.update(kw)
    return MetricsRecord(**base)
