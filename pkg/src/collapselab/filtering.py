"""SNR-aware group filtering.

Each prompt group carries one scalar statistic (reward variance by
default).  A selection strategy chooses which groups enter the update;
masked groups contribute nothing -- not even regulariser gradients.  All
strategies break statistic ties by a seeded random permutation so reruns
are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .errors import ConfigError, DomainError
from .rng import StreamKey
from .rollout import ZERO_VARIANCE_EPS, RolloutBatch

STRATEGIES = ("none", "top_p", "top_k", "min_p", "reverse_top_p")

# Group statistics the operator can rank by.  reward_variance is the
# canonical SNR proxy; the others exist to show the operator is agnostic
# to the choice.
STATISTICS = ("reward_variance", "reward_sum", "entropy", "entropy_variance", "length")


@dataclass(frozen=True)
class FilterConfig:
    strategy: str = "none"
    rho: float = 0.9
    min_p: float = 0.1
    include_zero: bool = False
    epsilon: float = 0.01
    statistic: str = "reward_variance"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown filter strategy {self.strategy!r}")
        if self.statistic not in STATISTICS:
            raise ConfigError(f"unknown filter statistic {self.statistic!r}")
        if not 0 < self.rho <= 1:
            raise ConfigError("filter.rho must be in (0, 1]")
        if not 0 < self.min_p <= 1:
            raise ConfigError("filter.min_p must be in (0, 1]")
        if not 0 <= self.epsilon < 1:
            raise ConfigError("filter.epsilon must be in [0, 1)")


@dataclass(frozen=True)
class FilterDecision:
    """Outcome of one selection: which groups update this iteration.

    ``kept`` holds original group indices in rank order.  ``tau`` is the
    cumulative-mass threshold where one applies (computed after
    zero-variance removal).  A rejected batch keeps nothing and signals the
    trainer to skip the step entirely.
    """

    kept: tuple[int, ...]
    k_star: int
    num_groups: int
    zero_variance_count: int
    statistic_values: tuple[float, ...]
    rejected: bool = False
    tau: float | None = None

    @property
    def effective_keep_ratio(self) -> float:
        return self.k_star / self.num_groups


def _check_values(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("need a non-empty 1-D statistic vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("statistics must be finite")
    return v


def _rejected(values: np.ndarray, zero_count: int, tau=None) -> FilterDecision:
    return FilterDecision(
        kept=(),
        k_star=0,
        num_groups=values.size,
        zero_variance_count=zero_count,
        statistic_values=tuple(values),
        rejected=True,
        tau=tau,
    )


def _tie_order(n: int, key: StreamKey | None) -> np.ndarray:
    if key is None:
        return np.arange(n)
    return key.child(streams.FILTER_TIES).generator().permutation(n)


def _rank(values: np.ndarray, key: StreamKey | None, ascending: bool) -> np.ndarray:
    """Indices sorted by value with seeded random tie order."""
    perm = _tie_order(values.size, key)
    sort_vals = values[perm] if ascending else -values[perm]
    return perm[np.argsort(sort_vals, kind="stable")]


def select_top_p(
    values,
    rho: float,
    include_zero: bool = False,
    epsilon: float = 0.01,
    key: StreamKey | None = None,
) -> FilterDecision:
    """Keep the highest-statistic groups covering a rho fraction of total mass.

    Groups below ZERO_VARIANCE_EPS are dropped before ranking unless
    ``include_zero``; tau = rho * (remaining total) either way, so the two
    settings differ only when zero groups would be needed to reach tau.
    k* is the smallest prefix whose cumulative mass reaches tau*(1-epsilon)
    (relative comparison slack).
    """
    if not 0 < rho <= 1:
        raise DomainError("rho must be in (0, 1]")
    v = _check_values(values)
    if np.any(v < 0):
        raise DomainError("top_p needs non-negative statistics")
    zero_count = int(np.sum(v < ZERO_VARIANCE_EPS))
    candidates = np.arange(v.size)
    if not include_zero:
        candidates = candidates[v[candidates] >= ZERO_VARIANCE_EPS]
    total = float(v[candidates].sum()) if candidates.size else 0.0
    tau = rho * total
    if candidates.size == 0 or total <= 0.0:
        return _rejected(v, zero_count, tau=tau)
    order = candidates[_rank(v[candidates], key, ascending=False)]
    cum = np.cumsum(v[order])
    k_star = int(np.searchsorted(cum, tau * (1.0 - epsilon), side="left")) + 1
    k_star = min(k_star, order.size)
    return FilterDecision(
        kept=tuple(int(i) for i in order[:k_star]),
        k_star=k_star,
        num_groups=v.size,
        zero_variance_count=zero_count,
        statistic_values=tuple(v),
        tau=tau,
    )


def select_top_k(values, rho: float, key: StreamKey | None = None) -> FilterDecision:
    """Keep a fixed count k = max(1, floor(rho * N)) of the highest groups."""
    if not 0 < rho <= 1:
        raise DomainError("rho must be in (0, 1]")
    v = _check_values(values)
    zero_count = int(np.sum(np.abs(v) < ZERO_VARIANCE_EPS))
    k = max(1, int(np.floor(rho * v.size)))
    order = _rank(v, key, ascending=False)
    return FilterDecision(
        kept=tuple(int(i) for i in order[:k]),
        k_star=k,
        num_groups=v.size,
        zero_variance_count=zero_count,
        statistic_values=tuple(v),
    )


def select_min_p(values, min_p: float, key: StreamKey | None = None) -> FilterDecision:
    """Keep groups whose statistic reaches min_p * max(statistic)."""
    if not 0 < min_p <= 1:
        raise DomainError("min_p must be in (0, 1]")
    v = _check_values(values)
    if np.any(v < 0):
        raise DomainError("min_p needs non-negative statistics")
    zero_count = int(np.sum(v < ZERO_VARIANCE_EPS))
    top = float(v.max())
    if top <= 0.0:
        return _rejected(v, zero_count)
    threshold = min_p * top
    order = _rank(v, key, ascending=False)
    kept = [int(i) for i in order if v[i] >= threshold]
    return FilterDecision(
        kept=tuple(kept),
        k_star=len(kept),
        num_groups=v.size,
        zero_variance_count=zero_count,
        statistic_values=tuple(v),
        tau=threshold,
    )


def select_reverse_top_p(
    values,
    rho: float,
    include_zero: bool = False,
    epsilon: float = 0.01,
    key: StreamKey | None = None,
) -> FilterDecision:
    """Mirror of select_top_p that accumulates from the lowest statistic up.

    A diagnostic control: if high-variance groups carry the signal, keeping
    the low end instead should hurt.
    """
    if not 0 < rho <= 1:
        raise DomainError("rho must be in (0, 1]")
    v = _check_values(values)
    if np.any(v < 0):
        raise DomainError("reverse_top_p needs non-negative statistics")
    zero_count = int(np.sum(v < ZERO_VARIANCE_EPS))
    candidates = np.arange(v.size)
    if not include_zero:
        candidates = candidates[v[candidates] >= ZERO_VARIANCE_EPS]
    total = float(v[candidates].sum()) if candidates.size else 0.0
    tau = rho * total
    if candidates.size == 0 or total <= 0.0:
        return _rejected(v, zero_count, tau=tau)
    order = candidates[_rank(v[candidates], key, ascending=True)]
    cum = np.cumsum(v[order])
    k_star = int(np.searchsorted(cum, tau * (1.0 - epsilon), side="left")) + 1
    k_star = min(k_star, order.size)
    return FilterDecision(
        kept=tuple(int(i) for i in order[:k_star]),
        k_star=k_star,
        num_groups=v.size,
        zero_variance_count=zero_count,
        statistic_values=tuple(v),
        tau=tau,
    )


def select(config: FilterConfig, values, key: StreamKey | None = None) -> FilterDecision:
    """Dispatch on the configured strategy; ``none`` keeps every group."""
    v = _check_values(values)
    if config.strategy == "none":
        return FilterDecision(
            kept=tuple(range(v.size)),
            k_star=v.size,
            num_groups=v.size,
            zero_variance_count=int(np.sum(np.abs(v) < ZERO_VARIANCE_EPS)),
            statistic_values=tuple(v),
        )
    if config.strategy == "top_p":
        return select_top_p(v, config.rho, config.include_zero, config.epsilon, key)
    if config.strategy == "top_k":
        return select_top_k(v, config.rho, key)
    if config.strategy == "min_p":
        return select_min_p(v, config.min_p, key)
    return select_reverse_top_p(v, config.rho, config.include_zero, config.epsilon, key)


def apply_filter_mask(
    batch: RolloutBatch, decision: FilterDecision
) -> tuple[np.ndarray, bool]:
    """Per-group loss weights: 1/k* on kept groups, 0 elsewhere.

    Returns (weights, skip); a rejected batch yields all zeros and
    skip=True.  Masking never mutates the batch itself.
    """
    if decision.num_groups != batch.num_prompts:
        raise ConfigError(
            f"decision covers {decision.num_groups} groups, batch has {batch.num_prompts}"
        )
    weights = np.zeros(batch.num_prompts)
    if decision.rejected:
        return weights, True
    weights[list(decision.kept)] = 1.0 / decision.k_star
    return weights, False


def group_statistics(name: str, batch: RolloutBatch, matched: np.ndarray | None = None):
    """Per-group scalar statistics for ranking.

    ``matched`` -- the (P, G) matched-score matrix -- is required for the
    entropy-based statistics; it prices each sample's own tokens under the
    current policy.
    """
    if name not in STATISTICS:
        raise ConfigError(f"unknown filter statistic {name!r}")
    if name == "reward_variance":
        return batch.rv_values()
    if name == "reward_sum":
        return np.array([float(np.sum(g.returns)) for g in batch.groups])
    if name == "length":
        return np.array(
            [
                float(np.mean([sum(len(t.tokens) for t in traj.turns) for traj in g.trajectories]))
                for g in batch.groups
            ]
        )
    if matched is None:
        raise DomainError(f"statistic {name!r} needs matched scores")
    if name == "entropy":
        return -matched.mean(axis=1)
    # entropy_variance
    return matched.var(axis=1, ddof=1)
