"""Policy-gradient estimators, exact oracles, and numerical bound checks.

The Monte-Carlo estimators mirror what the trainer actually uses; the exact
variants enumerate the policy and a single-turn reward table so that the
variance/SNR/MSE statements can be audited without sampling error on at
least one side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError
from .policy import PolicyParams, Trajectory, kl_to_reference, policy_entropy, score_function
from .rng import StreamKey
from .rollout import ZERO_VARIANCE_EPS, TrajectoryGroup


def advantages(returns) -> np.ndarray:
    """Returns centred by the group mean."""
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise DomainError("advantages need at least 2 returns")
    return r - r.mean()


def grpo_normalize(adv: np.ndarray, rv: float) -> tuple[np.ndarray, bool]:
    """Scale advantages by 1/sqrt(rv); a (near-)zero-variance group is
    skipped: all-zero advantages and a flag instead of a blow-up."""
    if rv < 0:
        raise DomainError("reward variance must be >= 0")
    adv = np.asarray(adv, dtype=float)
    if rv < ZERO_VARIANCE_EPS:
        return np.zeros_like(adv), True
    return adv / np.sqrt(rv), False


def task_gradient_mc(params: PolicyParams, group: TrajectoryGroup) -> np.ndarray:
    """(1/G) sum_g A_g * grad log pi(traj_g | x) with the group-mean baseline.

    Note the group-mean baseline makes this a (G-1)/G-scaled estimate of the
    true-baseline gradient; the trainer uses it as-is.
    """
    adv = advantages(group.returns)
    g = np.zeros(params.spec.num_params)
    for a, traj in zip(adv, group.trajectories):
        if a != 0.0:
            g += a * score_function(params, traj)
    return g / len(group.trajectories)


def _reward_table(env, prompt_id: int) -> np.ndarray:
    if getattr(env, "reward_table", None) is None or env.max_turns != 1:
        raise CapacityError(
            "exact gradient oracles need a single-turn environment exposing reward_table()"
        )
    return np.asarray(env.reward_table(prompt_id), dtype=float)


def task_gradient_exact(params: PolicyParams, env, prompt_id: int) -> np.ndarray:
    """Exact E[(R - E[R]) * score] by enumeration (noiseless reward).

    Because the reward depends on the action only, the reasoning components
    vanish exactly; they are still part of the returned full-size vector.
    """
    mu = _reward_table(env, prompt_id)
    p_a = params.action_probs(prompt_id)
    g = np.zeros(params.spec.num_params)
    g_a = g[params.spec.num_reasoning_params:].reshape(
        params.spec.num_prompts, params.spec.num_actions
    )
    g_a[prompt_id] = p_a * (mu - p_a @ mu)
    return g


def expected_return(params: PolicyParams, env, prompt_id: int) -> float:
    """Exact noiseless E[R | x]; the finite-difference anchor for the task gradient."""
    mu = _reward_table(env, prompt_id)
    return float(params.action_probs(prompt_id) @ mu)


def exact_reward_variance(params: PolicyParams, env, prompt_id: int) -> float:
    """Var(R | x) including any additive reward noise the env carries."""
    mu = _reward_table(env, prompt_id)
    p_a = params.action_probs(prompt_id)
    mean = p_a @ mu
    sigma = float(getattr(env, "reward_noise_sigma", 0.0))
    return float(p_a @ (mu - mean) ** 2 + sigma**2)


def score_second_moment(params: PolicyParams, prompt_id: int) -> float:
    """Exact E[ ||grad log pi||^2 | x ] for one single-turn trajectory.

    Independent factors contribute 1 - ||p||^2 each; cross terms vanish
    because every factor's score has zero mean.
    """
    p_r = params.reasoning_probs(prompt_id)
    p_a = params.action_probs(prompt_id)
    return float(np.sum(1.0 - np.sum(p_r**2, axis=1)) + (1.0 - np.sum(p_a**2)))


def reg_gradient(
    params: PolicyParams,
    ref: PolicyParams,
    prompt_id: int,
    lambda_kl: float,
    lambda_ent: float,
) -> np.ndarray:
    """Ascent contribution of the regularisers: -lambda_kl * grad KL + lambda_ent * grad H."""
    g = np.zeros(params.spec.num_params)
    if lambda_kl != 0.0:
        _, g_kl = kl_to_reference(params, ref, prompt_id)
        g -= lambda_kl * g_kl
    if lambda_ent != 0.0:
        _, g_ent = policy_entropy(params, prompt_id)
        g += lambda_ent * g_ent
    return g


def dominance_ratio(norm_task: float, norm_reg: float) -> float:
    """rho = ||g_reg|| / (||g_task|| + ||g_reg||); 0 when both vanish."""
    total = norm_task + norm_reg
    return norm_reg / total if total > 0 else 0.0


@dataclass
class GradientDecomposition:
    """Task and regulariser gradients for one prompt group, ascent convention.

    g_reg_kl is the ascent direction of the -KL term (i.e. minus the KL
    gradient); the combined regulariser is lambda_kl*g_reg_kl +
    lambda_ent*g_reg_ent.
    """

    g_task: np.ndarray
    g_reg_kl: np.ndarray
    g_reg_ent: np.ndarray
    lambda_kl: float
    lambda_ent: float

    @property
    def g_reg(self) -> np.ndarray:
        return self.lambda_kl * self.g_reg_kl + self.lambda_ent * self.g_reg_ent

    @property
    def norm_task(self) -> float:
        return float(np.linalg.norm(self.g_task))

    @property
    def norm_reg(self) -> float:
        return float(np.linalg.norm(self.g_reg))

    @property
    def rho(self) -> float:
        return dominance_ratio(self.norm_task, self.norm_reg)


def decompose(
    params: PolicyParams,
    ref: PolicyParams,
    group: TrajectoryGroup,
    lambda_kl: float,
    lambda_ent: float,
) -> GradientDecomposition:
    _, g_kl = kl_to_reference(params, ref, group.prompt_id)
    _, g_ent = policy_entropy(params, group.prompt_id)
    return GradientDecomposition(
        g_task=task_gradient_mc(params, group),
        g_reg_kl=-g_kl,
        g_reg_ent=g_ent,
        lambda_kl=lambda_kl,
        lambda_ent=lambda_ent,
    )


# ---------------------------------------------------------------------------
# numerical certificates


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    vacuous: bool = False

    @property
    def gap(self) -> float:
        """lhs - rhs; positive means the bound is violated."""
        return self.lhs - self.rhs


def rv_gradient_bound_check(
    params: PolicyParams, env, prompt_id: int, tol: float = 1e-9
) -> BoundCheck:
    """Cauchy-Schwarz variance bound:
    ||g_task(x)|| <= sqrt(Var(R|x)) * sqrt(E[||score||^2 | x]), all exact."""
    lhs = float(np.linalg.norm(task_gradient_exact(params, env, prompt_id)))
    rv = exact_reward_variance(params, env, prompt_id)
    rhs = float(np.sqrt(rv) * np.sqrt(score_second_moment(params, prompt_id)))
    return BoundCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + tol)


def _sample_scores(
    params: PolicyParams, prompt_id: int, n: int, group: int, rng
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised draws of (score-vector slice, action) for one prompt.

    The slice covers the prompt's own L*V + A coordinates; all other
    coordinates of the score are identically zero.
    """
    spec = params.spec
    p_r = params.reasoning_probs(prompt_id)  # (L, V)
    p_a = params.action_probs(prompt_id)
    V, L, A = spec.vocab_size, spec.reasoning_len, spec.num_actions
    tokens = np.empty((n, group, L), dtype=int)
    for t in range(L):
        cum = np.cumsum(p_r[t])
        tokens[:, :, t] = np.minimum(
            np.searchsorted(cum, rng.random((n, group)), side="right"), V - 1
        )
    cum_a = np.cumsum(p_a)
    actions = np.minimum(
        np.searchsorted(cum_a, rng.random((n, group)), side="right"), A - 1
    )
    s_tok = np.eye(V)[tokens] - p_r[None, None]  # (n, group, L, V)
    s_act = np.eye(A)[actions] - p_a[None, None]  # (n, group, A)
    scores = np.concatenate([s_tok.reshape(n, group, L * V), s_act], axis=2)
    return scores, actions


def _exact_slice_gradient(params: PolicyParams, mu: np.ndarray, prompt_id: int) -> np.ndarray:
    spec = params.spec
    p_a = params.action_probs(prompt_id)
    g = np.zeros(spec.reasoning_len * spec.vocab_size + spec.num_actions)
    g[spec.reasoning_len * spec.vocab_size:] = p_a * (mu - p_a @ mu)
    return g


def snr_estimate(
    params: PolicyParams,
    env,
    prompt_id: int,
    group_size: int,
    num_trials: int,
    key: StreamKey,
) -> BoundCheck:
    """Empirical SNR of the K-sample true-baseline estimator against the
    sqrt(G)*sqrt(RV)/sigma ceiling.  sigma=0 makes the ceiling infinite
    (vacuous but flagged)."""
    mu = _reward_table(env, prompt_id)
    sigma = float(getattr(env, "reward_noise_sigma", 0.0))
    p_a = params.action_probs(prompt_id)
    baseline = float(p_a @ mu)
    g_true = _exact_slice_gradient(params, mu, prompt_id)
    rng = key.generator()
    scores, actions = _sample_scores(params, prompt_id, num_trials, group_size, rng)
    rewards = mu[actions]
    if sigma > 0:
        rewards = rewards + sigma * rng.standard_normal(actions.shape)
    adv = rewards - baseline
    g_hat = np.mean(adv[..., None] * scores, axis=1)
    mse = float(np.mean(np.sum((g_hat - g_true[None]) ** 2, axis=1)))
    snr = float(np.linalg.norm(g_true) / np.sqrt(mse)) if mse > 0 else np.inf
    if sigma == 0:
        return BoundCheck(lhs=snr, rhs=np.inf, holds=True, vacuous=True)
    rv = exact_reward_variance(params, env, prompt_id)
    bound = float(np.sqrt(group_size) * np.sqrt(rv) / sigma)
    band = 1.0 + 3.0 / np.sqrt(num_trials)
    return BoundCheck(lhs=snr, rhs=bound * band, holds=snr <= bound * band)


def _safe_ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return float("inf") if num > 0 else 0.0


def snr_report(
    params: PolicyParams,
    env,
    group: TrajectoryGroup,
    ref: PolicyParams,
    lambda_kl: float,
    lambda_ent: float,
) -> dict:
    """Both signal-to-noise readings for one sampled group, side by side.

    The signal is the exact enumerated task gradient; the task noise is the
    group's MC estimate minus that signal.  The descriptive form prices the
    regularizer into the denominator, the theorem form compares against the
    estimator error alone.  The two are not asserted to coincide -- with a
    dominating regularizer they deliberately diverge.
    """
    x = group.prompt_id
    g_signal = task_gradient_exact(params, env, x)
    g_noise = task_gradient_mc(params, group) - g_signal
    g_reg = reg_gradient(params, ref, x, lambda_kl, lambda_ent)
    norm_signal = float(np.linalg.norm(g_signal))
    norm_noise = float(np.linalg.norm(g_noise))
    norm_reg = float(np.linalg.norm(g_reg))
    return {
        "norm_signal": norm_signal,
        "norm_task_noise": norm_noise,
        "norm_reg": norm_reg,
        "snr_paper_form": _safe_ratio(norm_signal, norm_noise + norm_reg),
        "snr_thm_form": _safe_ratio(norm_signal, norm_noise),
    }


def grpo_floor_check(
    params: PolicyParams,
    env,
    prompt_id: int,
    group_size: int,
    num_trials: int,
    key: StreamKey,
) -> BoundCheck:
    """Noise floor of the RV-normalised estimator:
    E||g_hat - g||^2 >= (sigma^2 / (K * RV)) * E||score||^2.

    sigma=0 (or a zero-RV group) makes the floor 0: trivially true, flagged
    vacuous rather than raised, mirroring snr_estimate.
    """
    mu = _reward_table(env, prompt_id)
    sigma = float(getattr(env, "reward_noise_sigma", 0.0))
    if sigma < 0:
        raise DomainError("reward noise sigma must be >= 0")
    rv = exact_reward_variance(params, env, prompt_id)
    if sigma == 0 or rv < ZERO_VARIANCE_EPS:
        return BoundCheck(lhs=np.inf, rhs=0.0, holds=True, vacuous=True)
    p_a = params.action_probs(prompt_id)
    baseline = float(p_a @ mu)
    g_norm = _exact_slice_gradient(params, mu, prompt_id) / np.sqrt(rv)
    rng = key.generator()
    scores, actions = _sample_scores(params, prompt_id, num_trials, group_size, rng)
    rewards = mu[actions] + sigma * rng.standard_normal(actions.shape)
    adv_norm = (rewards - baseline) / np.sqrt(rv)
    g_hat = np.mean(adv_norm[..., None] * scores, axis=1)
    mse = float(np.mean(np.sum((g_hat - g_norm[None]) ** 2, axis=1)))
    floor = sigma**2 / (group_size * rv) * score_second_moment(params, prompt_id)
    band = 1.0 - 3.0 / np.sqrt(num_trials)
    return BoundCheck(lhs=mse, rhs=floor * band, holds=mse >= floor * band)


def drift_experiment(
    eta: float, num_steps: int, noise_power: float, num_seeds: int, key: StreamKey, dim: int = 4
) -> tuple[float, float]:
    """Mean squared displacement of theta_(t+1) = theta_t + eta*xi_t against
    the closed form eta^2 * T * v."""
    if eta < 0 or noise_power < 0:
        raise DomainError("eta and noise power must be >= 0")
    rng = key.generator()
    xi = np.sqrt(noise_power / dim) * rng.standard_normal((num_seeds, num_steps, dim))
    disp = eta * xi.sum(axis=1)
    empirical = float(np.mean(np.sum(disp**2, axis=1)))
    return empirical, eta**2 * num_steps * noise_power


def filtered_mse_experiment(
    group_sigmas, num_trials: int, key: StreamKey, dim: int = 8
) -> tuple[float, float]:
    """MSE of the mean of independent per-group estimates with heterogeneous
    noise; closed form (1/n^2) * sum_i sigma_i^2."""
    sig = np.asarray(group_sigmas, dtype=float)
    if sig.ndim != 1 or sig.size == 0 or np.any(sig < 0):
        raise DomainError("need a vector of non-negative group noise scales")
    n = sig.size
    rng = key.generator()
    eps = rng.standard_normal((num_trials, n, dim)) * (sig[None, :, None] / np.sqrt(dim))
    mean_err = eps.mean(axis=1)
    empirical = float(np.mean(np.sum(mean_err**2, axis=1)))
    return empirical, float(np.sum(sig**2)) / n**2
