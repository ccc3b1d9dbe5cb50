"""Tabular softmax policies with enumerable reasoning and action heads.

A policy holds one logit table per prompt: ``reasoning_logits[x, t, v]``
parameterises position ``t`` of the reasoning sequence (positions are
conditionally independent given the prompt) and ``action_logits[x, a]``
parameterises the action head.  The action head conditions on the prompt
only, not on the sampled reasoning, which keeps exact gradients and exact
information quantities enumerable.  Multi-turn episodes reuse the same
per-prompt tables on every turn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import CapacityError, ConfigError, DomainError
from .rng import StreamKey

# Stand-in for log(0).  Keeps log-sum-exp, argmax and serialization finite;
# exp(LOG_ZERO) underflows to exactly 0.0.
LOG_ZERO = -1e9

# Hard cap on V**L for exact enumeration unless a spec raises it.
DEFAULT_ENUMERATION_LIMIT = 65536

CHECKPOINT_FORMAT = "collapselab-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicySpec:
    """Shape of a tabular policy: prompts, reasoning positions, vocab, actions."""

    num_prompts: int
    reasoning_len: int
    vocab_size: int
    num_actions: int
    num_turns: int = 1
    enumeration_limit: int = DEFAULT_ENUMERATION_LIMIT

    def __post_init__(self):
        if self.num_prompts < 2:
            raise ConfigError("need at least 2 prompts")
        for name in ("reasoning_len", "vocab_size", "num_actions", "num_turns"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def num_sequences(self) -> int:
        return self.vocab_size**self.reasoning_len

    @property
    def num_reasoning_params(self) -> int:
        return self.num_prompts * self.reasoning_len * self.vocab_size

    @property
    def num_params(self) -> int:
        return self.num_reasoning_params + self.num_prompts * self.num_actions

    def require_enumerable(self):
        if self.num_sequences > self.enumeration_limit:
            raise CapacityError(
                f"V**L = {self.num_sequences} exceeds enumeration limit "
                f"{self.enumeration_limit}"
            )


class PolicyParams:
    """Logit tables backed by one flat parameter vector.

    ``flat`` is the canonical view used by gradient updates and finite
    differencing; ``reasoning_logits`` (P, L, V) and ``action_logits``
    (P, A) are reshaped views of the same memory.
    """

    def __init__(self, spec: PolicySpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.num_params)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (spec.num_params,):
            raise ConfigError(
                f"parameter vector has shape {flat.shape}, expected ({spec.num_params},)"
            )
        if not np.all(np.isfinite(flat)):
            raise DomainError("logits must be finite")
        self.flat = flat
        n_r = spec.num_reasoning_params
        self.reasoning_logits = self.flat[:n_r].reshape(
            spec.num_prompts, spec.reasoning_len, spec.vocab_size
        )
        self.action_logits = self.flat[n_r:].reshape(spec.num_prompts, spec.num_actions)

    @classmethod
    def zeros(cls, spec: PolicySpec) -> "PolicyParams":
        """Uniform policy: all logits zero."""
        return cls(spec)

    @classmethod
    def random(cls, spec: PolicySpec, scale: float, key: StreamKey) -> "PolicyParams":
        if scale < 0:
            raise DomainError("init scale must be >= 0")
        rng = key.generator()
        return cls(spec, scale * rng.standard_normal(spec.num_params))

    @classmethod
    def one_hot(
        cls,
        spec: PolicySpec,
        tokens,
        actions,
        logit: float = 1e6,
    ) -> "PolicyParams":
        """Near-deterministic policy: per prompt, `tokens[x]` (length L) and
        `actions[x]` get logit `logit`, everything else 0."""
        params = cls(spec)
        for x in range(spec.num_prompts):
            for t in range(spec.reasoning_len):
                params.reasoning_logits[x, t, tokens[x][t]] = logit
            params.action_logits[x, actions[x]] = logit
        return params

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.spec, self.flat.copy())

    def reasoning_probs(self, prompt_id: int) -> np.ndarray:
        """(L, V) categorical tables for one prompt."""
        return softmax(self.reasoning_logits[self._check_prompt(prompt_id)], axis=-1)

    def action_probs(self, prompt_id: int) -> np.ndarray:
        return softmax(self.action_logits[self._check_prompt(prompt_id)])

    def _check_prompt(self, prompt_id: int) -> int:
        if not 0 <= prompt_id < self.spec.num_prompts:
            raise IndexError(f"prompt {prompt_id} out of range [0, {self.spec.num_prompts})")
        return prompt_id


@dataclass
class Turn:
    tokens: list[int]
    action: int
    reward: float


@dataclass
class Trajectory:
    prompt_id: int
    turns: list[Turn] = field(default_factory=list)
    episode_return: float = 0.0

    @property
    def num_turns(self) -> int:
        return len(self.turns)

    def reasoning_tokens(self, turn: int = 0) -> list[int]:
        return self.turns[turn].tokens


def _sample_categorical(cumprobs: np.ndarray, rng: np.random.Generator) -> int:
    # cumprobs[-1] == 1 up to rounding; clip the index for u ~ 1.0 edge cases
    idx = int(np.searchsorted(cumprobs, rng.random(), side="right"))
    return min(idx, len(cumprobs) - 1)


class SamplingTables:
    """Per-prompt cumulative-probability tables, precomputed once per batch."""

    def __init__(self, params: PolicyParams, temperature: float = 1.0):
        if temperature <= 0:
            raise DomainError("temperature must be > 0")
        self.spec = params.spec
        r = softmax(params.reasoning_logits / temperature, axis=-1)
        a = softmax(params.action_logits / temperature, axis=-1)
        self.reasoning_cum = np.cumsum(r, axis=-1)
        self.action_cum = np.cumsum(a, axis=-1)


def sample_trajectory(
    params: PolicyParams,
    env,
    prompt_id: int,
    key: StreamKey,
    tables: SamplingTables | None = None,
) -> Trajectory:
    """Roll out one episode for ``prompt_id``.

    All randomness (token draws, action draws, environment transitions)
    comes from the stream addressed by ``key``, in a fixed order: for each
    turn, L token draws, one action draw, then the environment's draws.
    """
    params._check_prompt(prompt_id)
    if tables is None:
        tables = SamplingTables(params)
    rng = key.generator()
    state = env.reset(prompt_id)
    spec = params.spec
    traj = Trajectory(prompt_id=prompt_id)
    ret = 0.0
    for _turn in range(env.max_turns):
        tokens = [
            _sample_categorical(tables.reasoning_cum[prompt_id, t], rng)
            for t in range(spec.reasoning_len)
        ]
        action = _sample_categorical(tables.action_cum[prompt_id], rng)
        state, reward, done = env.step(state, action, rng)
        traj.turns.append(Turn(tokens=tokens, action=action, reward=reward))
        ret += reward
        if done:
            break
    traj.episode_return = ret
    return traj


def logprob_reasoning(
    params: PolicyParams, prompt_id: int, tokens
) -> tuple[np.ndarray, float]:
    """Per-token and total log-probability of a reasoning token sequence.

    ``tokens`` may span several turns (length must be a multiple of L);
    position ``i`` is scored by the table for position ``i % L`` since the
    tables are reused across turns.  Tokens whose probability underflows to
    exactly zero get the LOG_ZERO sentinel (never -inf) so downstream
    mixtures and argmaxes stay NaN-free.
    """
    params._check_prompt(prompt_id)
    spec = params.spec
    tokens = np.asarray(tokens, dtype=int)
    if tokens.ndim != 1 or tokens.size == 0 or tokens.size % spec.reasoning_len != 0:
        raise DomainError(
            f"token sequence length {tokens.size} is not a positive multiple of "
            f"L={spec.reasoning_len}"
        )
    if np.any(tokens < 0) or np.any(tokens >= spec.vocab_size):
        raise DomainError("token id out of vocabulary range")
    ls = log_softmax(params.reasoning_logits[prompt_id], axis=-1)  # (L, V)
    pos = np.arange(tokens.size) % spec.reasoning_len
    per_token = ls[pos, tokens]
    # zero-probability tokens (exp underflow) are impossible, not merely rare
    per_token = np.where(np.exp(per_token) == 0.0, LOG_ZERO, per_token)
    return per_token, float(max(per_token.sum(), LOG_ZERO))


def score_function(params: PolicyParams, traj: Trajectory) -> np.ndarray:
    """Gradient of log pi(trajectory | prompt) w.r.t. the flat parameters.

    Each categorical factor contributes onehot(chosen) - softmax(logits);
    turns accumulate into the same per-prompt tables.
    """
    params._check_prompt(traj.prompt_id)
    spec = params.spec
    x = traj.prompt_id
    g = np.zeros(spec.num_params)
    n_r = spec.num_reasoning_params
    g_r = g[:n_r].reshape(spec.num_prompts, spec.reasoning_len, spec.vocab_size)
    g_a = g[n_r:].reshape(spec.num_prompts, spec.num_actions)
    p_r = params.reasoning_probs(x)
    p_a = params.action_probs(x)
    for turn in traj.turns:
        for t, tok in enumerate(turn.tokens):
            g_r[x, t, tok] += 1.0
        g_r[x] -= p_r
        g_a[x, turn.action] += 1.0
        g_a[x] -= p_a
    return g


def enumerate_sequences(spec: PolicySpec) -> np.ndarray:
    """(V**L, L) array of all reasoning sequences, position 0 most significant."""
    spec.require_enumerable()
    n, L, V = spec.num_sequences, spec.reasoning_len, spec.vocab_size
    idx = np.arange(n)
    out = np.empty((n, L), dtype=int)
    for t in range(L):
        out[:, t] = (idx // V ** (L - 1 - t)) % V
    return out


def conditional_distribution(params: PolicyParams, prompt_id: int) -> np.ndarray:
    """Exact probability of every reasoning sequence given the prompt.

    Indexing matches :func:`enumerate_sequences`.
    """
    params._check_prompt(prompt_id)
    params.spec.require_enumerable()
    table = np.ones(1)
    for p_pos in params.reasoning_probs(prompt_id):
        table = np.multiply.outer(table, p_pos).ravel()
    return table


def _categorical_kl(lp: np.ndarray, lq: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(p||q) and its gradient w.r.t. the logits of p, for one factor."""
    p = np.exp(lp)
    diff = lp - lq
    kl = float(np.where(p > 0, p * diff, 0.0).sum())
    grad = p * (diff - kl)
    return kl, grad


def kl_to_reference(
    params: PolicyParams, ref: PolicyParams, prompt_id: int
) -> tuple[float, np.ndarray]:
    """Factorised KL(pi_theta(.|x) || pi_ref(.|x)) and its parameter gradient.

    The factorised form sums one KL per reasoning position plus one for the
    action head, which equals the sequence-level KL because positions are
    conditionally independent.
    """
    if ref.spec != params.spec:
        raise ConfigError("reference policy spec does not match")
    params._check_prompt(prompt_id)
    x = prompt_id
    spec = params.spec
    g = np.zeros(spec.num_params)
    n_r = spec.num_reasoning_params
    g_r = g[:n_r].reshape(spec.num_prompts, spec.reasoning_len, spec.vocab_size)
    g_a = g[n_r:].reshape(spec.num_prompts, spec.num_actions)
    lp_r = log_softmax(params.reasoning_logits[x], axis=-1)
    lq_r = log_softmax(ref.reasoning_logits[x], axis=-1)
    total = 0.0
    for t in range(spec.reasoning_len):
        kl, grad = _categorical_kl(lp_r[t], lq_r[t])
        total += kl
        g_r[x, t] = grad
    kl, grad = _categorical_kl(
        log_softmax(params.action_logits[x]), log_softmax(ref.action_logits[x])
    )
    total += kl
    g_a[x] = grad
    return total, g


def _categorical_entropy(lp: np.ndarray) -> tuple[float, np.ndarray]:
    p = np.exp(lp)
    h = float(-np.where(p > 0, p * lp, 0.0).sum())
    grad = -p * (lp + h)
    return h, grad


def policy_entropy(params: PolicyParams, prompt_id: int) -> tuple[float, np.ndarray]:
    """Entropy of the per-prompt policy (reasoning positions + action head)
    and its parameter gradient.  Bounded by L*ln(V) + ln(A)."""
    params._check_prompt(prompt_id)
    x = prompt_id
    spec = params.spec
    g = np.zeros(spec.num_params)
    n_r = spec.num_reasoning_params
    g_r = g[:n_r].reshape(spec.num_prompts, spec.reasoning_len, spec.vocab_size)
    g_a = g[n_r:].reshape(spec.num_prompts, spec.num_actions)
    lp_r = log_softmax(params.reasoning_logits[x], axis=-1)
    total = 0.0
    for t in range(spec.reasoning_len):
        h, grad = _categorical_entropy(lp_r[t])
        total += h
        g_r[x, t] = grad
    h, grad = _categorical_entropy(log_softmax(params.action_logits[x]))
    total += h
    g_a[x] = grad
    return total, g


def save_checkpoint(params: PolicyParams, path):
    """Write a versioned JSON checkpoint; floats round-trip bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": {
            "num_prompts": params.spec.num_prompts,
            "reasoning_len": params.spec.reasoning_len,
            "vocab_size": params.spec.vocab_size,
            "num_actions": params.spec.num_actions,
            "num_turns": params.spec.num_turns,
            "enumeration_limit": params.spec.enumeration_limit,
        },
        "reasoning_logits": params.reasoning_logits.tolist(),
        "action_logits": params.action_logits.tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> PolicyParams:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a policy checkpoint: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
    spec = PolicySpec(**doc["spec"])
    params = PolicyParams(spec)
    params.reasoning_logits[:] = doc["reasoning_logits"]
    params.action_logits[:] = doc["action_logits"]
    return params
