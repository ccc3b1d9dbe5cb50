"""Comparison harnesses and the frozen study scenarios."""

import math

import pytest

from collapselab.config import ExperimentConfig
from collapselab.experiments import (
    SCENARIOS,
    collapse_config,
    filter_compare,
    noise_config,
    noise_sweep,
    quartile_ablation,
    quartile_config,
    run_experiment,
    run_outcome,
    traj_filter_compare,
)
from collapselab.miproxy import EmaState
from collapselab.policy import PolicyParams
from collapselab.trainer import TrainResult
from util import metrics_record, tiny_spec


def micro_config(**train_extra):
    train = {"iterations": 3, "group_size": 4, "learning_rate": 0.5,
             "eval_prompts": 16, "eval_every": 2, "early_stop": "false",
             "log_rollouts": "false"}
    train.update(train_extra)
    return ExperimentConfig.from_mapping({
        "policy": {"num_prompts": 4, "reasoning_len": 1, "vocab_size": 2,
                   "num_actions": 4, "init_scale": 0.5},
        "train": train,
    })


def test_scenario_registry_builds_valid_configs():
    assert set(SCENARIOS) == {"collapse", "quartile", "noise"}
    for factory in SCENARIOS.values():
        cfg = factory()
        cfg.build_env()
        cfg.build_policy_spec()
        cfg.train_config()


def test_collapse_scenario_shares_targets():
    env = collapse_config().build_env()
    assert env.targets[:12] == (0,) * 12
    assert len(env.targets) == 16
    assert len(set(env.targets[12:])) == 4


def test_quartile_scenario_targets_distinct():
    env = quartile_config().build_env()
    assert len(env.targets) == 16
    assert env.targets[:8] == tuple(range(8))


def test_noise_scenario_is_a_small_grid():
    cfg = noise_config()
    env = cfg.build_env()
    assert env.grid_size == 2 and env.slip_prob == 0.0
    assert cfg.build_policy_spec().num_turns == env.max_turns


def test_run_experiment_applies_seed_and_overrides(tmp_path):
    out = tmp_path / "run"
    result = run_experiment(micro_config(), seed=5,
                            train_overrides={"iterations": 2}, out_dir=out)
    assert len(result.records) == 2
    assert (out / "metrics.csv").exists()
    resolved = ExperimentConfig.from_file(out / "resolved.cfg")
    assert resolved.seed() == 5


def fabricated_result(mi_values, evals):
    records = [metrics_record(i, mi_est=float(v)) for i, v in enumerate(mi_values)]
    params = PolicyParams.zeros(tiny_spec())
    return TrainResult(records, evals, params, params, "completed", EmaState())


def test_run_outcome_tail_averaging():
    result = fabricated_result(range(10), [(0, 0.2), (5, 0.9), (9, 0.4)])
    out = run_outcome(result, tail=3)
    assert out["iterations_run"] == 10
    assert out["stop_reason"] == "completed"
    assert out["final_mi_est"] == pytest.approx((7 + 8 + 9) / 3)
    assert out["final_success"] == 0.4
    assert out["peak_success"] == 0.9


def test_run_outcome_without_evals():
    out = run_outcome(fabricated_result([0.1, 0.2], []))
    assert math.isnan(out["final_success"])


def test_quartile_ablation_single_seed_medians(tmp_path):
    comparison = quartile_ablation(micro_config(), seeds=(0,),
                                   out_dir=str(tmp_path / "q"))
    assert set(comparison["arms"]) == {"q1", "q2", "q3", "q4"}
    for name, summary in comparison["arms"].items():
        assert summary["runs"] == 1
        single = run_outcome(comparison["results"][name][0])
        for key in ("final_success", "peak_success", "final_mi_est"):
            assert summary[key] == single[key]
        assert (tmp_path / "q" / name / "metrics.csv").exists()


def test_filter_compare_arms():
    comparison = filter_compare(micro_config(), seeds=(0,))
    assert set(comparison["arms"]) == {"none", "top_p", "top_k", "min_p"}
    assert all(v["runs"] == 1 for v in comparison["arms"].values())


def test_traj_filter_compare_arms():
    comparison = traj_filter_compare(micro_config(), seeds=(0,))
    assert set(comparison["arms"]) == {"none", "top_p", "traj"}
    # the trajectory arm trains with top/bottom keeping, not a prompt filter
    traj_cfgs = comparison["results"]["traj"]
    assert len(traj_cfgs) == 1


def test_noise_sweep_axis_tracks_env_kind(tmp_path):
    flat = noise_sweep(micro_config(), levels=(0.0, 0.3), seeds=(0,))
    assert flat["noise_key"] == "env.reward_noise_sigma"
    assert [e["level"] for e in flat["levels"]] == [0.0, 0.3]
    for entry in flat["levels"]:
        assert set(entry["arms"]) == {"top_p", "none"}

    grid = ExperimentConfig.from_mapping({
        "env": {"kind": "slip_grid", "grid_size": 2, "max_turns": 2,
                "holes": "none"},
        "policy": {"num_prompts": 2, "reasoning_len": 1, "vocab_size": 2,
                   "num_actions": 4, "init_scale": 0.5},
        "train": {"iterations": 2, "group_size": 4, "learning_rate": 0.5,
                  "eval_prompts": 16, "eval_every": 2, "early_stop": "false",
                  "log_rollouts": "false"},
    })
    sweep = noise_sweep(grid, levels=(0.0,), seeds=(0,))
    assert sweep["noise_key"] == "env.slip_prob"
