"""Experiment config files: schema defaults, coercion, canonical echo, builders."""

import numpy as np
import pytest

from collapselab.config import SCHEMA, ExperimentConfig
from collapselab.errors import ConfigError
from collapselab.policy import PolicyParams
from collapselab.rng import INIT, root_key

INI_SAMPLE = """
[run]
seed = 5

[env]
kind = contextual_target
targets = 2,0,1
partial_reward = 0.25

[policy]
num_prompts = 3
num_actions = 4

[train]
learning_rate = 0.5
grpo_norm = yes
log_rollouts = no

[filter]
strategy = top_p
rho = 0.6
"""


def test_default_config_carries_schema_defaults():
    cfg = ExperimentConfig.default()
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            assert cfg.get(section, key) == default
    assert cfg.get("env", "kind") == "contextual_target"
    assert cfg.seed() == 0


def test_ini_parsing_and_bool_spellings():
    cfg = ExperimentConfig.from_text(INI_SAMPLE)
    assert cfg.get("run", "seed") == 5
    assert cfg.get("train", "learning_rate") == 0.5
    assert cfg.get("train", "grpo_norm") is True
    assert cfg.get("train", "log_rollouts") is False
    assert cfg.get("filter", "rho") == 0.6
    # untouched keys fall back to their defaults
    assert cfg.get("train", "eval_prompts") == 512


def test_json_documents_are_accepted():
    cfg = ExperimentConfig.from_text(
        '{"train": {"learning_rate": 0.25, "early_stop": false}, "run": {"seed": 9}}'
    )
    assert cfg.get("train", "learning_rate") == 0.25
    assert cfg.get("train", "early_stop") is False
    assert cfg.get("run", "seed") == 9
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("{broken json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text('{"train": 3}')


def test_from_file_matches_from_text(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(INI_SAMPLE)
    assert ExperimentConfig.from_file(p) == ExperimentConfig.from_text(INI_SAMPLE)


def test_overrides_apply_without_mutating_the_base():
    base = ExperimentConfig.default()
    changed = base.with_overrides(["train.learning_rate=2.0", "filter.strategy=top_k"])
    assert changed.get("train", "learning_rate") == 2.0
    assert changed.get("filter", "strategy") == "top_k"
    assert base.get("train", "learning_rate") == 1e-6
    assert base.set("run.seed", 3).get("run", "seed") == 3


def test_override_forms_are_checked():
    base = ExperimentConfig.default()
    with pytest.raises(ConfigError):
        base.with_overrides(["learning_rate"])
    with pytest.raises(ConfigError):
        base.with_overrides(["learning_rate=2.0"])  # missing section prefix
    with pytest.raises(ConfigError):
        base.with_overrides(["train.bogus=1"])


def test_unknown_sections_and_keys_are_named():
    with pytest.raises(ConfigError, match=r"\[sampler\]"):
        ExperimentConfig.from_mapping({"sampler": {"rho": 0.5}})
    with pytest.raises(ConfigError, match="train.bogus"):
        ExperimentConfig.from_mapping({"train": {"bogus": 1}})
    with pytest.raises(ConfigError, match="train.bogus"):
        ExperimentConfig({("train", "bogus"): 1})


def test_coercion_failures_name_the_field():
    with pytest.raises(ConfigError, match="train.iterations"):
        ExperimentConfig.default().set("train.iterations", "soon")
    with pytest.raises(ConfigError, match="train.early_stop"):
        ExperimentConfig.default().set("train.early_stop", "maybe")
    with pytest.raises(ConfigError, match="train.group_size"):
        ExperimentConfig.from_mapping({"train": {"group_size": 2.5}})
    assert ExperimentConfig.default().set("train.early_stop", "YES").get(
        "train", "early_stop") is True


def test_validation_messages():
    base = ExperimentConfig.default()
    with pytest.raises(ConfigError, match=r"filter.rho must be in \(0, 1\]"):
        base.set("filter.rho", 1.5)
    with pytest.raises(ConfigError, match="env.kind"):
        base.set("env.kind", "atari")
    with pytest.raises(ConfigError, match="num_actions = 4"):
        base.set("env.kind", "slip_grid")
    with pytest.raises(ConfigError, match="env.slip_prob"):
        base.set("env.slip_prob", 1.5)
    with pytest.raises(ConfigError, match="policy.num_prompts"):
        base.set("policy.num_prompts", 1)
    with pytest.raises(ConfigError, match="eval_temperature"):
        base.set("train.eval_temperature", 0)
    with pytest.raises(ConfigError, match="score_scope"):
        base.set("train.score_scope", "everything")


def test_canonical_echo_is_a_fixpoint():
    cfg = ExperimentConfig.from_text(INI_SAMPLE)
    text = cfg.to_ini_text()
    again = ExperimentConfig.from_text(text)
    assert again == cfg
    assert again.to_ini_text() == text


def test_target_patterns():
    base = ExperimentConfig.default().with_overrides(
        ["policy.num_prompts=6", "policy.num_actions=4"]
    )
    assert base.build_env().targets == (0, 1, 2, 3, 0, 1)
    shared = base.set("env.targets", "shared:3")
    assert shared.build_env().targets == (0, 0, 0, 1, 2, 3)
    listed = ExperimentConfig.default().with_overrides(
        ["policy.num_prompts=3", "policy.num_actions=4", "env.targets=2,0,1"]
    )
    assert listed.build_env().targets == (2, 0, 1)
    with pytest.raises(ConfigError, match="env.targets"):
        base.set("env.targets", "1,2")  # wrong length for 6 prompts
    with pytest.raises(ConfigError, match="env.targets"):
        base.set("env.targets", "sometimes")
    with pytest.raises(ConfigError, match="shared count"):
        base.set("env.targets", "shared:99")


def grid_cfg(*extra):
    return ExperimentConfig.default().with_overrides(
        ["env.kind=slip_grid", "policy.num_actions=4", "policy.num_prompts=2",
         *extra]
    )


def test_grid_cell_lists():
    assert grid_cfg("env.holes=none").build_env().holes == frozenset()
    env = grid_cfg("env.holes=1,1;2,2").build_env()
    assert env.holes == frozenset({(1, 1), (2, 2)})
    assert grid_cfg("env.goal=2,2", "env.holes=none").build_env().goal == (2, 2)
    with pytest.raises(ConfigError, match="env.goal"):
        grid_cfg("env.goal=1,1;2,2")
    with pytest.raises(ConfigError, match="env.holes"):
        grid_cfg("env.holes=3")
    with pytest.raises(ConfigError, match="env.start_cells"):
        grid_cfg("env.start_cells=a,b")


def test_policy_spec_turns_follow_env_kind():
    grid = grid_cfg("env.max_turns=6").build_policy_spec()
    assert grid.num_turns == 6
    flat = ExperimentConfig.default().build_policy_spec()
    assert flat.num_turns == 1
    assert flat.num_prompts == 8 and flat.vocab_size == 8


def test_initial_params_derive_from_run_seed():
    cfg = ExperimentConfig.default().set("run.seed", 42)
    params = cfg.initial_params()
    expected = PolicyParams.random(cfg.build_policy_spec(), 1.0, root_key(42, INIT))
    assert np.array_equal(params.flat, expected.flat)
    other = cfg.set("run.seed", 43).initial_params()
    assert not np.array_equal(params.flat, other.flat)
    frozen = cfg.set("policy.init_scale", 0.0).initial_params()
    assert np.all(frozen.flat == 0.0)


def test_train_config_mapping():
    cfg = ExperimentConfig.from_text(INI_SAMPLE)
    tc = cfg.train_config()
    assert tc.learning_rate == 0.5
    assert tc.num_prompts == 3          # drawn from the policy section
    assert tc.seed == 5                 # drawn from the run section
    assert tc.grpo_norm is True
    assert tc.log_rollouts is False
    assert tc.filter.strategy == "top_p"
    assert tc.filter.rho == 0.6
    assert tc.quartile is None


def test_clip_constants_recorded_but_not_trained_with():
    cfg = ExperimentConfig.default()
    assert cfg.get("train", "clip_low") == 0.2
    assert cfg.get("train", "clip_high") == 0.28
    tc = cfg.train_config()
    assert not hasattr(tc, "clip_low") and not hasattr(tc, "clip_high")
