"""Input-dependence proxies from in-batch cross-scoring.

Every trajectory's reasoning tokens Z_{i,k} (sampled under prompt i) are
scored under every prompt j's tables, giving the matrix
L[i, k, j] = log p(Z_{i,k} | X_j).  The matched score compares a sample
against its own prompt, the marginal against the uniform in-batch mixture;
their gap estimates I(X; Z) per token.  Plain sequence entropy cannot see
the difference between "diverse because input-dependent" and "diverse but
input-agnostic"; these proxies can.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_softmax, logsumexp

from . import rng as streams
from .errors import DomainError
from .policy import LOG_ZERO, PolicyParams
from .rollout import RolloutBatch
from .rng import StreamKey

TURN_SCOPES = ("first_turn", "trajectory_uniform")


@dataclass
class ScoreMatrix:
    """Cross-score tensor (P, G, P) plus per-sample token counts (P, G)."""

    scores: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 3 or self.scores.shape[0] != self.scores.shape[2]:
            raise DomainError(f"score matrix must be (P, G, P), got {self.scores.shape}")
        if self.lengths.shape != self.scores.shape[:2]:
            raise DomainError("lengths must be (P, G)")
        if np.any(self.scores > 0) or not np.all(np.isfinite(self.scores)):
            raise DomainError("scores must be finite log-probabilities (<= 0)")
        if np.any(self.lengths < 1):
            raise DomainError("token counts must be >= 1")

    @property
    def num_prompts(self) -> int:
        return self.scores.shape[0]

    @property
    def group_size(self) -> int:
        return self.scores.shape[1]


def cross_score(
    params: PolicyParams,
    batch: RolloutBatch,
    turn_scope: str = "first_turn",
    key: StreamKey | None = None,
) -> ScoreMatrix:
    """Score every sample's reasoning tokens under every prompt's tables.

    ``first_turn`` scores turn 0; ``trajectory_uniform`` scores one
    uniformly random turn per sample, drawn from ``key`` (required for that
    scope so offline recomputation can reproduce the choice).
    """
    if turn_scope not in TURN_SCOPES:
        raise DomainError(f"unknown turn scope {turn_scope!r}")
    P, G = batch.num_prompts, batch.group_size
    spec = params.spec
    if P > spec.num_prompts:
        raise DomainError("batch has more prompts than the policy supports")
    L = spec.reasoning_len

    turn_idx = np.zeros((P, G), dtype=int)
    if turn_scope == "trajectory_uniform":
        if key is None:
            raise DomainError("trajectory_uniform scope needs a stream key")
        n_turns = np.array(
            [[t.num_turns for t in g.trajectories] for g in batch.groups]
        )
        u = key.child(streams.SCORE_TURNS).generator().random((P, G))
        turn_idx = np.minimum((u * n_turns).astype(int), n_turns - 1)

    tokens = np.empty((P, G, L), dtype=int)
    for i, group in enumerate(batch.groups):
        for k, traj in enumerate(group.trajectories):
            tokens[i, k] = traj.turns[turn_idx[i, k]].tokens

    ls = log_softmax(params.reasoning_logits, axis=-1)  # (P', L, V)
    pos = np.arange(L)
    scores = np.empty((P, G, P))
    for j in range(P):
        per_token = ls[j][pos, tokens]  # (P, G, L)
        # any zero-probability token makes the whole pair impossible
        per_token = np.where(np.exp(per_token) == 0.0, LOG_ZERO, per_token)
        scores[:, :, j] = per_token.sum(axis=-1)
    scores = np.maximum(scores, LOG_ZERO)
    lengths = np.full((P, G), L, dtype=int)
    return ScoreMatrix(scores=scores, lengths=lengths)


def matched_marginal(m: ScoreMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-token matched score and in-batch marginal score, both (P, G).

    matched[i,k]  = L[i,k,i] / |Z|
    marginal[i,k] = log( (1/P) sum_j exp L[i,k,j] ) / |Z|   (max-shifted)
    """
    P = m.num_prompts
    own = m.scores[np.arange(P)[:, None], np.arange(m.group_size)[None, :], np.arange(P)[:, None]]
    matched = own / m.lengths
    marginal = (logsumexp(m.scores, axis=2) - np.log(P)) / m.lengths
    return matched, marginal


def _tie_noise(m: ScoreMatrix, key: StreamKey) -> np.ndarray:
    # One uniform per entry; the same key yields the same tie ordering, so
    # retrieval_acc and recall_at_k at several k stay mutually consistent.
    return key.child(streams.TIE_BREAK).generator().random(m.scores.shape)


def retrieval_acc(m: ScoreMatrix, key: StreamKey) -> float:
    """Fraction of samples whose own prompt wins argmax_j L[i,k,j].

    Exact ties are broken uniformly at random from the keyed stream; under
    a fully input-agnostic policy every row ties and accuracy sits at 1/P.
    """
    u = _tie_noise(m, key)
    best = m.scores.max(axis=2, keepdims=True)
    pick = np.where(m.scores == best, u, -1.0).argmax(axis=2)
    own = np.arange(m.num_prompts)[:, None]
    return float(np.mean(pick == own))


def recall_at_k(m: ScoreMatrix, k: int, key: StreamKey) -> float:
    """Fraction of samples whose own prompt ranks in the top-k of its row."""
    if not 1 <= k <= m.num_prompts:
        raise DomainError(f"k={k} must be in [1, P={m.num_prompts}]")
    u = _tie_noise(m, key)
    P, G = m.num_prompts, m.group_size
    own_idx = np.arange(P)[:, None]
    own_score = m.scores[own_idx, np.arange(G)[None, :], own_idx][:, :, None]
    own_u = u[own_idx, np.arange(G)[None, :], own_idx][:, :, None]
    better = (m.scores > own_score) | ((m.scores == own_score) & (u > own_u))
    rank = better.sum(axis=2)  # own entry never beats itself
    return float(np.mean(rank < k))


def mi_est(matched: np.ndarray, marginal: np.ndarray) -> float:
    """Mean per-token gap between matched and marginal scores."""
    return float(np.mean(matched - marginal))


def mi_seq_est(m: ScoreMatrix) -> float:
    """Sequence-level variant: no length normalization."""
    P = m.num_prompts
    own = m.scores[np.arange(P)[:, None], np.arange(m.group_size)[None, :], np.arange(P)[:, None]]
    return float(np.mean(own - (logsumexp(m.scores, axis=2) - np.log(P))))


def mi_zscore(matched: np.ndarray, marginal: np.ndarray, epsilon: float = 1e-3) -> float:
    """Gap normalised by the current batch's marginal-score std."""
    sigma = float(np.std(marginal))
    return float(np.mean((matched - marginal) / (sigma + epsilon)))


@dataclass(frozen=True)
class EmaState:
    """Running scale for the EMA-normalised z-score."""

    alpha: float = 0.9
    epsilon: float = 1e-3
    sigma_ema: float = 0.0
    initialized: bool = False


def mi_zscore_ema(
    matched: np.ndarray, marginal: np.ndarray, state: EmaState
) -> tuple[float, EmaState]:
    """Like mi_zscore but with an exponential moving average of the scale.

    The first call initialises sigma_ema to the batch value; later calls
    apply sigma <- alpha*sigma + (1-alpha)*sigma_batch before normalising.
    """
    sigma_batch = float(np.std(marginal))
    if state.initialized:
        sigma = state.alpha * state.sigma_ema + (1 - state.alpha) * sigma_batch
    else:
        sigma = sigma_batch
    value = float(np.mean((matched - marginal) / (sigma + state.epsilon)))
    return value, replace(state, sigma_ema=sigma, initialized=True)


def proxy_entropies(matched: np.ndarray, marginal: np.ndarray) -> tuple[float, float]:
    """(h_cond, h_marg): conditional and marginal per-token entropy proxies.

    h_marg - h_cond recovers mi_est up to float rounding.
    """
    return float(-np.mean(matched)), float(-np.mean(marginal))
