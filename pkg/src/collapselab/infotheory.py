"""Exact information quantities on finite (prompt, sequence) joints.

These are the ground-truth oracles the sampled proxies are judged against.
All logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import ConfigError, DomainError

ATOL = 1e-12


@dataclass(frozen=True)
class DiscreteJoint:
    """P(X) together with a row-stochastic conditional P(Z|X)."""

    prompt_marginal: np.ndarray
    conditional: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.prompt_marginal, dtype=float)
        pzx = np.asarray(self.conditional, dtype=float)
        object.__setattr__(self, "prompt_marginal", px)
        object.__setattr__(self, "conditional", pzx)
        if px.ndim != 1 or pzx.ndim != 2 or pzx.shape[0] != px.size:
            raise ConfigError(
                f"shape mismatch: marginal {px.shape} vs conditional {pzx.shape}"
            )
        if np.any(px < 0) or np.any(pzx < 0):
            raise DomainError("probabilities must be >= 0")
        if abs(px.sum() - 1.0) > ATOL:
            raise DomainError(f"prompt marginal sums to {px.sum()!r}, not 1")
        bad = np.abs(pzx.sum(axis=1) - 1.0) > ATOL
        if np.any(bad):
            raise DomainError(f"conditional rows {np.flatnonzero(bad).tolist()} do not sum to 1")

    @property
    def num_prompts(self) -> int:
        return self.prompt_marginal.size

    @property
    def num_outcomes(self) -> int:
        return self.conditional.shape[1]

    def joint(self) -> np.ndarray:
        return self.prompt_marginal[:, None] * self.conditional

    def z_marginal(self) -> np.ndarray:
        return self.prompt_marginal @ self.conditional

    @classmethod
    def uniform_prompts(cls, conditional) -> "DiscreteJoint":
        conditional = np.asarray(conditional, dtype=float)
        n = conditional.shape[0]
        return cls(np.full(n, 1.0 / n), conditional)


def exact_mi(j: DiscreteJoint) -> float:
    """I(X;Z) = sum_{x,z} P(x,z) log( P(z|x) / P(z) ), with 0 log 0 = 0."""
    pxz = j.joint()
    pz = j.z_marginal()
    ratio = np.ones_like(pxz)
    mask = pxz > 0
    ratio[mask] = j.conditional[mask] / np.broadcast_to(pz, pxz.shape)[mask]
    return float(np.sum(pxz[mask] * np.log(ratio[mask])))


def _entropy(p: np.ndarray) -> float:
    return float(-xlogy(p, p).sum())


def exact_entropies(j: DiscreteJoint) -> dict:
    """H(X), H(Z), H(Z|X) and H(X,Z); H(Z) = H(Z|X) + I holds exactly."""
    pxz = j.joint()
    h_cond = float(-np.sum(xlogy(pxz, j.conditional)))
    return {
        "h_x": _entropy(j.prompt_marginal),
        "h_z": _entropy(j.z_marginal()),
        "h_z_given_x": h_cond,
        "h_joint": _entropy(pxz.ravel()),
    }


def template_mix(j: DiscreteJoint, template: np.ndarray, alpha: float) -> DiscreteJoint:
    """Blend every conditional row toward one shared template distribution.

    p_alpha(z|x) = (1-alpha) p(z|x) + alpha q(z).  At alpha=1 the policy is
    input-agnostic and carries zero mutual information.
    """
    if not 0 <= alpha <= 1:
        raise DomainError("alpha must be in [0, 1]")
    q = np.asarray(template, dtype=float)
    if q.shape != (j.num_outcomes,):
        raise ConfigError(f"template shape {q.shape} != ({j.num_outcomes},)")
    if np.any(q < 0) or abs(q.sum() - 1.0) > ATOL:
        raise DomainError("template must be a probability vector")
    return DiscreteJoint(j.prompt_marginal, (1 - alpha) * j.conditional + alpha * q[None, :])


def binary_entropy(delta: float) -> float:
    if not 0 <= delta <= 1:
        raise DomainError("binary entropy argument must be in [0, 1]")
    return float(-xlogy(delta, delta) - xlogy(1 - delta, 1 - delta))


def fannes_mi_bound(epsilon: float, num_prompts: int, num_outcomes: int) -> float:
    """Continuity bound: a parameter change whose per-prompt KL stays below
    epsilon moves I(X;Z) by at most 2*(delta*log(|X||Z|-1) + h2(delta)) with
    delta = sqrt(epsilon/2)."""
    if epsilon < 0:
        raise DomainError("epsilon must be >= 0")
    if num_prompts < 2 or num_outcomes < 2:
        raise DomainError("alphabets must have at least 2 symbols")
    delta = float(np.sqrt(epsilon / 2))
    if delta > 1:
        raise DomainError(
            f"epsilon={epsilon} gives total-variation bound {delta} > 1; "
            "the continuity bound only applies for epsilon <= 2"
        )
    return 2 * (delta * np.log(num_prompts * num_outcomes - 1) + binary_entropy(delta))


def mi_change_decomposition(
    j_theta: DiscreteJoint, j_0: DiscreteJoint
) -> tuple[float, float, float]:
    """(delta_in, delta_marg, delta_i) between two joints sharing P(X).

    delta_in   = H(Z|X)_theta - H(Z|X)_0
    delta_marg = H(Z)_theta   - H(Z)_0
    delta_i    = I_theta - I_0  ( = delta_marg - delta_in )

    A collapse that leaves H(Z|X) flat while H(Z) falls shows up entirely
    in delta_i.
    """
    if j_theta.conditional.shape != j_0.conditional.shape:
        raise ConfigError("joints have different shapes")
    if not np.allclose(j_theta.prompt_marginal, j_0.prompt_marginal, rtol=0, atol=ATOL):
        raise ConfigError("decomposition requires identical prompt marginals")
    e_t = exact_entropies(j_theta)
    e_0 = exact_entropies(j_0)
    delta_in = e_t["h_z_given_x"] - e_0["h_z_given_x"]
    delta_marg = e_t["h_z"] - e_0["h_z"]
    delta_i = exact_mi(j_theta) - exact_mi(j_0)
    return delta_in, delta_marg, delta_i


def joint_from_policy(params, num_prompts: int | None = None) -> DiscreteJoint:
    """Uniform-prompt joint over the policy's exact reasoning distribution."""
    from .policy import conditional_distribution

    P = params.spec.num_prompts if num_prompts is None else num_prompts
    rows = np.stack([conditional_distribution(params, x) for x in range(P)])
    return DiscreteJoint.uniform_prompts(rows)
