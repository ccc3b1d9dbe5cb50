"""Experiment configuration: flat-sectioned key=value files (JSON accepted).

Every key is declared in SCHEMA with a type and default; unknown sections
or keys are rejected by name, values are coerced with field-level error
messages, and the resolved configuration can be echoed back in a canonical
form that parses to an identical configuration.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field

from .envs import ContextualTargetEnv, SlipGridEnv
from .errors import ConfigError
from .filtering import STATISTICS, STRATEGIES, FilterConfig
from .policy import DEFAULT_ENUMERATION_LIMIT, PolicyParams, PolicySpec
from .rng import INIT, root_key

ENV_KINDS = ("contextual_target", "slip_grid")
SCORE_SCOPES = ("first_turn", "trajectory_uniform")

# section -> key -> (type, default).  bool values accept true/false/1/0/yes/no.
SCHEMA = {
    "run": {
        "out": (str, ""),
        "seed": (int, 0),
    },
    "env": {
        "kind": (str, "contextual_target"),
        "slip_prob": (float, 0.0),
        "reward_noise_sigma": (float, 0.0),
        "partial_reward": (float, 0.1),
        "grid_size": (int, 4),
        "max_turns": (int, 10),
        "goal": (str, ""),  # "row,col"; empty = bottom-right corner
        "holes": (str, ""),  # "r,c;r,c;..."; empty = grid default
        "start_cells": (str, ""),  # "r,c;r,c;..."; empty = safe cells in row order
        "targets": (str, "distinct"),
        "format_penalty": (float, -0.1),
        "invalid_action": (int, -1),  # -1 disables the reserved invalid action
    },
    "policy": {
        "num_prompts": (int, 8),
        "reasoning_len": (int, 2),
        "vocab_size": (int, 8),
        "num_actions": (int, 8),
        "init_scale": (float, 1.0),
        "enumeration_limit": (int, DEFAULT_ENUMERATION_LIMIT),
    },
    "train": {
        "iterations": (int, 400),
        "group_size": (int, 16),
        "learning_rate": (float, 1e-6),
        "lambda_kl": (float, 0.001),
        "lambda_ent": (float, 0.001),
        "grpo_norm": (bool, False),
        # Asymmetric-clip constants recorded for provenance; the update rule
        # itself is unclipped REINFORCE, so these never enter the gradients.
        "clip_low": (float, 0.2),
        "clip_high": (float, 0.28),
        "scale_loss_by_rho": (bool, True),
        "score_scope": (str, "first_turn"),
        "eval_prompts": (int, 512),
        "eval_temperature": (float, 0.5),
        "eval_every": (int, 1),
        "early_stop": (bool, True),
        "rv_floor_frac": (float, 0.1),
        "rv_floor_patience": (int, 5),
        "success_floor": (float, 0.01),
        "success_patience": (int, 5),
        "baseline_window": (int, 10),
        "checkpoint_every": (int, 0),
        "log_rollouts": (bool, True),
        "traj_keep_top": (int, 0),  # trajectory-level baseline; 0 disables
        "traj_keep_bottom": (int, 0),
    },
    "filter": {
        "strategy": (str, "none"),
        "rho": (float, 0.9),
        "min_p": (float, 0.1),
        "include_zero": (bool, False),
        "epsilon": (float, 0.01),
        "statistic": (str, "reward_variance"),
    },
}

_SECTION_ORDER = ("run", "env", "policy", "train", "filter")


def _coerce(section: str, key: str, raw, kind) -> object:
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            if isinstance(raw, bool):
                raise ValueError(raw)
            if isinstance(raw, float) and raw != int(raw):
                raise ValueError(raw)
            return int(raw)
        if kind is float:
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}"
        ) from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment configuration."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        resolved = {}
        for section, keys in SCHEMA.items():
            for key, (kind, default) in keys.items():
                raw = self.values.get((section, key), default)
                resolved[(section, key)] = _coerce(section, key, raw, kind)
        extra = set(self.values) - set(resolved)
        if extra:
            section, key = sorted(extra)[0]
            raise ConfigError(f"unknown key {section}.{key}")
        object.__setattr__(self, "values", resolved)
        self._validate()

    def get(self, section: str, key: str):
        try:
            return self.values[(section, key)]
        except KeyError:
            raise ConfigError(f"unknown key {section}.{key}") from None

    # -- parsing ------------------------------------------------------------

    @classmethod
    def from_mapping(cls, sections) -> "ExperimentConfig":
        values = {}
        for section, keys in sections.items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in keys.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
                values[(section, key)] = raw
        return cls(values)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON config: {e}") from e
            if not isinstance(doc, dict) or not all(
                isinstance(v, dict) for v in doc.values()
            ):
                raise ConfigError("JSON config must map sections to key/value objects")
            return cls.from_mapping(doc)
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"invalid config: {e}") from e
        return cls.from_mapping({s: dict(parser.items(s)) for s in parser.sections()})

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_text(f.read())

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls({})

    def with_overrides(self, assignments) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings on top of this configuration."""
        values = dict(self.values)
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            dotted, raw = item.split("=", 1)
            if "." not in dotted:
                raise ConfigError(f"override key {dotted!r} needs a section prefix")
            section, key = dotted.split(".", 1)
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            values[(section, key)] = raw
        return ExperimentConfig(values)

    # -- validation ----------------------------------------------------------

    def _validate(self):
        g = self.get
        if g("env", "kind") not in ENV_KINDS:
            raise ConfigError(f"env.kind must be one of {ENV_KINDS}")
        if not 0 <= g("env", "slip_prob") <= 1:
            raise ConfigError("env.slip_prob must be in [0, 1]")
        if g("env", "reward_noise_sigma") < 0:
            raise ConfigError("env.reward_noise_sigma must be >= 0")
        for key in ("num_prompts", "reasoning_len", "vocab_size", "num_actions"):
            if g("policy", key) < 1:
                raise ConfigError(f"policy.{key} must be >= 1")
        if g("policy", "num_prompts") < 2:
            raise ConfigError("policy.num_prompts must be >= 2")
        if g("policy", "init_scale") < 0:
            raise ConfigError("policy.init_scale must be >= 0")
        if g("train", "score_scope") not in SCORE_SCOPES:
            raise ConfigError(f"train.score_scope must be one of {SCORE_SCOPES}")
        for key in ("iterations", "group_size", "eval_prompts", "eval_every"):
            if g("train", key) < 1:
                raise ConfigError(f"train.{key} must be >= 1")
        if g("train", "group_size") < 2:
            raise ConfigError("train.group_size must be >= 2")
        if g("train", "eval_temperature") <= 0:
            raise ConfigError("train.eval_temperature must be > 0")
        if g("filter", "strategy") not in STRATEGIES:
            raise ConfigError(f"filter.strategy must be one of {STRATEGIES}")
        if g("filter", "statistic") not in STATISTICS:
            raise ConfigError(f"filter.statistic must be one of {STATISTICS}")
        if g("env", "kind") == "slip_grid" and g("policy", "num_actions") != 4:
            raise ConfigError("slip_grid has 4 actions; set policy.num_actions = 4")
        self.build_env()  # raises on malformed targets or grid cells
        self.filter_config()

    # -- canonical echo -------------------------------------------------------

    def to_ini_text(self) -> str:
        lines = []
        for section in _SECTION_ORDER:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                value = self.values[(section, key)]
                if isinstance(value, bool):
                    text = "true" if value else "false"
                elif isinstance(value, float):
                    text = repr(value)
                else:
                    text = str(value)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    # -- builders -------------------------------------------------------------

    def _parse_targets(self) -> list[int]:
        pattern = self.get("env", "targets")
        P = self.get("policy", "num_prompts")
        A = self.get("policy", "num_actions")
        if pattern == "distinct":
            return [i % A for i in range(P)]
        if pattern.startswith("shared:"):
            try:
                n_shared = int(pattern.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"env.targets: bad shared count in {pattern!r}") from None
            if not 0 <= n_shared <= P:
                raise ConfigError("env.targets: shared count out of range")
            if A < 2:
                raise ConfigError("env.targets=shared needs at least 2 actions")
            return [0] * n_shared + [1 + (i % (A - 1)) for i in range(P - n_shared)]
        try:
            targets = [int(t) for t in pattern.split(",")]
        except ValueError:
            raise ConfigError(
                f"env.targets: expected 'distinct', 'shared:<n>' or a comma list, got {pattern!r}"
            ) from None
        if len(targets) != P:
            raise ConfigError(
                f"env.targets lists {len(targets)} targets for {P} prompts"
            )
        return targets

    def _parse_cells(self, key: str) -> tuple | None:
        """Parse "r,c;r,c;..." cell lists; "" -> None (default), "none" -> ()."""
        text = self.get("env", key)
        if not text:
            return None
        if text.lower() == "none":
            return ()
        cells = []
        for part in text.split(";"):
            fields = part.split(",")
            if len(fields) != 2:
                raise ConfigError(f"env.{key}: expected row,col pairs, got {part!r}")
            try:
                cells.append((int(fields[0]), int(fields[1])))
            except ValueError:
                raise ConfigError(f"env.{key}: non-integer cell {part!r}") from None
        return tuple(cells)

    def build_env(self):
        kind = self.get("env", "kind")
        P = self.get("policy", "num_prompts")
        if kind == "contextual_target":
            invalid = self.get("env", "invalid_action")
            return ContextualTargetEnv(
                targets=self._parse_targets(),
                num_actions=self.get("policy", "num_actions"),
                partial_reward=self.get("env", "partial_reward"),
                reward_noise_sigma=self.get("env", "reward_noise_sigma"),
                format_penalty=self.get("env", "format_penalty"),
                invalid_action=None if invalid < 0 else invalid,
            )
        goal = self._parse_cells("goal")
        if goal is not None and len(goal) != 1:
            raise ConfigError("env.goal must be a single row,col cell")
        return SlipGridEnv(
            grid_size=self.get("env", "grid_size"),
            slip_prob=self.get("env", "slip_prob"),
            max_turns=self.get("env", "max_turns"),
            goal=goal[0] if goal else None,
            holes=self._parse_cells("holes"),
            start_cells=self._parse_cells("start_cells"),
            num_prompts=P,
        )

    def build_policy_spec(self) -> PolicySpec:
        kind = self.get("env", "kind")
        return PolicySpec(
            num_prompts=self.get("policy", "num_prompts"),
            reasoning_len=self.get("policy", "reasoning_len"),
            vocab_size=self.get("policy", "vocab_size"),
            num_actions=self.get("policy", "num_actions"),
            num_turns=self.get("env", "max_turns") if kind == "slip_grid" else 1,
            enumeration_limit=self.get("policy", "enumeration_limit"),
        )

    def initial_params(self) -> PolicyParams:
        return PolicyParams.random(
            self.build_policy_spec(),
            self.get("policy", "init_scale"),
            root_key(self.get("run", "seed"), INIT),
        )

    def filter_config(self) -> FilterConfig:
        return FilterConfig(
            strategy=self.get("filter", "strategy"),
            rho=self.get("filter", "rho"),
            min_p=self.get("filter", "min_p"),
            include_zero=self.get("filter", "include_zero"),
            epsilon=self.get("filter", "epsilon"),
            statistic=self.get("filter", "statistic"),
        )

    def train_config(self):
        from .trainer import TrainConfig

        t = lambda key: self.get("train", key)  # noqa: E731
        return TrainConfig(
            iterations=t("iterations"),
            num_prompts=self.get("policy", "num_prompts"),
            group_size=t("group_size"),
            learning_rate=t("learning_rate"),
            lambda_kl=t("lambda_kl"),
            lambda_ent=t("lambda_ent"),
            grpo_norm=t("grpo_norm"),
            scale_loss_by_rho=t("scale_loss_by_rho"),
            score_scope=t("score_scope"),
            filter=self.filter_config(),
            eval_prompts=t("eval_prompts"),
            eval_temperature=t("eval_temperature"),
            eval_every=t("eval_every"),
            early_stop=t("early_stop"),
            rv_floor_frac=t("rv_floor_frac"),
            rv_floor_patience=t("rv_floor_patience"),
            success_floor=t("success_floor"),
            success_patience=t("success_patience"),
            baseline_window=t("baseline_window"),
            checkpoint_every=t("checkpoint_every"),
            log_rollouts=t("log_rollouts"),
            traj_keep_top=t("traj_keep_top"),
            traj_keep_bottom=t("traj_keep_bottom"),
            seed=self.get("run", "seed"),
        )

    def seed(self) -> int:
        return self.get("run", "seed")

    def set(self, dotted: str, value) -> "ExperimentConfig":
        return self.with_overrides([f"{dotted}={value}"])
