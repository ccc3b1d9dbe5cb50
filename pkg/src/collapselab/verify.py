"""Randomized audits of the analytic results the trainer relies on.

Each audit hammers one inequality or identity with freshly drawn policies,
environments, or joint distributions and counts violations beyond the stated
tolerance.  Inequalities audited exactly (enumeration on both sides) must
show zero violations; Monte-Carlo audits allow a standard-error band that is
part of the check itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng as streams
from .envs import ContextualTargetEnv
from .errors import ConfigError
from .gradients import (
    drift_experiment,
    filtered_mse_experiment,
    grpo_floor_check,
    rv_gradient_bound_check,
    snr_estimate,
)
from .infotheory import (
    DiscreteJoint,
    exact_mi,
    fannes_mi_bound,
    mi_change_decomposition,
    template_mix,
)
from .policy import PolicyParams, PolicySpec
from .rng import StreamKey, root_key

EXACT_TOL = 1e-12
RV_BOUND_TOL = 1e-9


@dataclass(frozen=True)
class AuditResult:
    name: str
    trials: int
    violations: int
    max_gap: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "violations": self.violations,
            "max_gap": self.max_gap,
            "pass": self.passed,
        }


def _random_policy_env(gen, key: StreamKey, sigma: float):
    P = int(gen.integers(2, 5))
    L = int(gen.integers(1, 3))
    V = int(gen.integers(2, 6))
    A = int(gen.integers(2, 8))
    spec = PolicySpec(P, L, V, A)
    params = PolicyParams.random(spec, float(gen.uniform(0.3, 3.0)), key)
    env = ContextualTargetEnv(
        targets=[int(gen.integers(A)) for _ in range(P)],
        num_actions=A,
        partial_reward=float(gen.uniform(0.0, 0.9)),
        reward_noise_sigma=sigma,
        format_penalty=float(gen.uniform(-0.5, 0.0)),
    )
    return params, env, int(gen.integers(P))


def audit_rv_bound(key: StreamKey, trials: int = 1000) -> AuditResult:
    """||g_task|| <= sqrt(RV) * sqrt(E||score||^2), enumerated exactly."""
    gen = key.generator()
    violations, max_gap = 0, -np.inf
    for t in range(trials):
        sigma = float(gen.choice([0.0, 0.3]))
        params, env, pid = _random_policy_env(gen, key.child(1, t), sigma)
        chk = rv_gradient_bound_check(params, env, pid, tol=RV_BOUND_TOL)
        violations += int(not chk.holds)
        max_gap = max(max_gap, chk.gap)
    return AuditResult("g3", trials, violations, float(max_gap), violations == 0)


def audit_snr(key: StreamKey, trials: int = 200, inner: int = 400) -> AuditResult:
    """Empirical SNR of the true-baseline estimator stays under
    sqrt(G)*sqrt(RV)/sigma (3-SE band folded into the check)."""
    gen = key.generator()
    violations, max_gap = 0, -np.inf
    for t in range(trials):
        sigma = float(gen.choice([0.1, 0.5, 1.0]))
        G = int(gen.choice([4, 16]))
        params, env, pid = _random_policy_env(gen, key.child(2, t), sigma)
        chk = snr_estimate(params, env, pid, G, inner, key.child(3, t))
        violations += int(not chk.holds)
        max_gap = max(max_gap, chk.gap)
    return AuditResult("g4_snr", trials, violations, float(max_gap), violations == 0)


def audit_drift(key: StreamKey, trials: int = 10000) -> AuditResult:
    """Random-walk mean squared displacement matches eta^2 * T * v within 5%."""
    emp, theory = drift_experiment(0.1, 100, 1.0, trials, key.child(4))
    rel = abs(emp - theory) / theory
    ok = rel <= 0.05
    return AuditResult("g5_drift", trials, int(not ok), float(rel), ok)


def audit_mixing(key: StreamKey, trials: int = 10000) -> AuditResult:
    """Template mixing contracts MI at least linearly: I_alpha <= (1-alpha) I."""
    gen = key.generator()
    violations, max_gap = 0, -np.inf
    for _ in range(trials):
        nx = int(gen.integers(2, 6))
        nz = int(gen.integers(2, 6))
        cond = gen.random((nx, nz)) + 1e-3
        cond /= cond.sum(axis=1, keepdims=True)
        px = gen.random(nx) + 1e-3
        px /= px.sum()
        joint = DiscreteJoint(px, cond)
        q = gen.random(nz) + 1e-3
        q /= q.sum()
        alpha = float(gen.random())
        gap = exact_mi(template_mix(joint, q, alpha)) - (1 - alpha) * exact_mi(joint)
        violations += int(gap > EXACT_TOL)
        max_gap = max(max_gap, gap)
    return AuditResult("h1_mixing", trials, violations, float(max_gap), violations == 0)


def audit_filtered_mse(key: StreamKey, trials: int = 100000) -> AuditResult:
    """MSE of a mean of independent per-group estimates is (1/n^2) sum sigma_i^2."""
    gen = key.generator()
    sigmas = gen.uniform(0.0, 2.0, size=8)
    emp, theory = filtered_mse_experiment(sigmas, trials, key.child(5))
    rel = abs(emp - theory) / theory
    ok = rel <= 0.03
    return AuditResult("i1_mse", trials, int(not ok), float(rel), ok)


def _row_kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)))


def audit_continuity(key: StreamKey, trials: int = 500) -> AuditResult:
    """|I(theta) - I(0)| <= 2 (delta ln(|X||Z|-1) + h2(delta)), delta = sqrt(eps/2),
    eps = max per-prompt KL(pi_theta || pi_0)."""
    gen = key.generator()
    violations, max_gap = 0, -np.inf
    for _ in range(trials):
        nx = int(gen.integers(2, 6))
        nz = int(gen.integers(2, 7))
        base = gen.random((nx, nz)) + 0.05
        base /= base.sum(axis=1, keepdims=True)
        toward = gen.random((nx, nz)) + 0.05
        toward /= toward.sum(axis=1, keepdims=True)
        a = float(gen.uniform(0.0, 0.3))
        for _ in range(60):
            perturbed = (1 - a) * base + a * toward
            eps = max(_row_kl(perturbed[i], base[i]) for i in range(nx))
            if np.sqrt(eps / 2.0) < 0.999:
                break
            a /= 2.0
        j0 = DiscreteJoint.uniform_prompts(base)
        jt = DiscreteJoint.uniform_prompts(perturbed)
        bound = fannes_mi_bound(eps, nx, nz)
        gap = abs(exact_mi(jt) - exact_mi(j0)) - bound
        violations += int(gap > EXACT_TOL)
        max_gap = max(max_gap, gap)
    return AuditResult("k1_continuity", trials, violations, float(max_gap), violations == 0)


def audit_decomposition(key: StreamKey, trials: int = 1000) -> AuditResult:
    """delta I = delta(marginal surprisal) - delta(conditional surprisal), exactly."""
    gen = key.generator()
    violations, max_gap = 0, -np.inf
    for _ in range(trials):
        nx = int(gen.integers(2, 6))
        nz = int(gen.integers(2, 7))
        px = gen.random(nx) + 1e-3
        px /= px.sum()
        conds = []
        for _ in range(2):
            c = gen.random((nx, nz)) + 1e-3
            conds.append(c / c.sum(axis=1, keepdims=True))
        j0 = DiscreteJoint(px, conds[0])
        jt = DiscreteJoint(px, conds[1])
        d_in, d_marg, d_i = mi_change_decomposition(jt, j0)
        resid = abs(d_i - (d_marg - d_in))
        violations += int(resid > EXACT_TOL)
        max_gap = max(max_gap, resid)
    return AuditResult("l1_decomp", trials, violations, float(max_gap), violations == 0)


def audit_grpo_floor(key: StreamKey, trials: int = 100, inner: int = 10000) -> AuditResult:
    """RV-normalised estimator MSE respects the sigma^2/(K RV) E||s||^2 floor."""
    gen = key.generator()
    violations, max_gap = 0, -np.inf
    for t in range(trials):
        sigma = float(gen.uniform(0.2, 1.0))
        K = int(gen.choice([4, 8, 16]))
        params, env, pid = _random_policy_env(gen, key.child(6, t), sigma)
        chk = grpo_floor_check(params, env, pid, K, inner, key.child(7, t))
        violations += int(not chk.holds)
        # floor check: violation means lhs fell below rhs
        max_gap = max(max_gap, chk.rhs - chk.lhs)
    return AuditResult("m1_floor", trials, violations, float(max_gap), violations == 0)


AUDITS = {
    "g3": audit_rv_bound,
    "g4_snr": audit_snr,
    "g5_drift": audit_drift,
    "h1_mixing": audit_mixing,
    "i1_mse": audit_filtered_mse,
    "k1_continuity": audit_continuity,
    "l1_decomp": audit_decomposition,
    "m1_floor": audit_grpo_floor,
}


def run_suite(names=None, seed: int = 0, trials: int | None = None) -> list[AuditResult]:
    if names is None:
        names = list(AUDITS)
    results = []
    for i, name in enumerate(names):
        if name not in AUDITS:
            raise ConfigError(f"unknown audit {name!r}; choose from {sorted(AUDITS)}")
        key = root_key(seed, streams.AUDIT, i)
        fn = AUDITS[name]
        results.append(fn(key, trials) if trials is not None else fn(key))
    return results


def report(results, seed: int) -> dict:
    return {
        "seed": seed,
        "results": [r.as_dict() for r in results],
        "passed": all(r.passed for r in results),
    }


def report_text(results, seed: int) -> str:
    return json.dumps(report(results, seed), indent=2, sort_keys=True) + "\n"
