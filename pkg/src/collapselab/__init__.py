"""collapselab: a desk-scale laboratory for template collapse in
policy-gradient fine-tuning.

Exactly enumerable tabular policies and tiny synthetic environments make
every quantity of interest — mutual information, gradient norms, reward
variance — computable in closed form, so the collapse phenomenology and the
variance-filtering mitigations can be audited rather than eyeballed.
"""

from .config import ExperimentConfig
from .envs import ContextualTargetEnv, SlipGridEnv
from .errors import (
    CapacityError,
    CollapseLabError,
    ConfigError,
    DomainError,
    LogParseError,
    ProtocolError,
)
from .filtering import FilterConfig, FilterDecision, select
from .infotheory import DiscreteJoint, exact_entropies, exact_mi, joint_from_policy
from .miproxy import EmaState, ScoreMatrix, cross_score, matched_marginal, mi_est
from .policy import PolicyParams, PolicySpec, Trajectory, Turn, load_checkpoint, save_checkpoint
from .rng import StreamKey, root_key
from .rollout import RolloutBatch, TrajectoryGroup, collect_batch, reward_variance
from .trainer import CSV_HEADER, MetricsRecord, TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "CSV_HEADER",
    "CapacityError",
    "CollapseLabError",
    "ConfigError",
    "ContextualTargetEnv",
    "DiscreteJoint",
    "DomainError",
    "EmaState",
    "ExperimentConfig",
    "FilterConfig",
    "FilterDecision",
    "LogParseError",
    "MetricsRecord",
    "PolicyParams",
    "PolicySpec",
    "ProtocolError",
    "RolloutBatch",
    "ScoreMatrix",
    "SlipGridEnv",
    "StreamKey",
    "TrainConfig",
    "TrainResult",
    "Trajectory",
    "TrajectoryGroup",
    "Turn",
    "collect_batch",
    "cross_score",
    "exact_entropies",
    "exact_mi",
    "joint_from_policy",
    "load_checkpoint",
    "matched_marginal",
    "mi_est",
    "reward_variance",
    "root_key",
    "save_checkpoint",
    "select",
    "train",
]
