import numpy as np
import pytest

from collapselab.errors import ConfigError, DomainError
from collapselab.infotheory import (
    DiscreteJoint,
    binary_entropy,
    exact_entropies,
    exact_mi,
    fannes_mi_bound,
    joint_from_policy,
    mi_change_decomposition,
    template_mix,
)
from collapselab.policy import PolicyParams, PolicySpec

from util import random_params, shared_table_params


def _random_joint(rng, nx=None, nz=None):
    nx = nx or int(rng.integers(2, 6))
    nz = nz or int(rng.integers(2, 6))
    cond = rng.dirichlet(np.ones(nz), size=nx)
    return DiscreteJoint.uniform_prompts(cond)


# -- exact MI ----------------------------------------------------------------------


def test_mi_independent_is_zero():
    cond = np.tile(np.array([0.3, 0.2, 0.5]), (4, 1))
    assert exact_mi(DiscreteJoint.uniform_prompts(cond)) == 0.0


def test_mi_diagonal_is_ln_n():
    assert abs(exact_mi(DiscreteJoint.uniform_prompts(np.eye(4))) - np.log(4)) < 1e-12


def test_mi_hand_checked_two_by_two():
    # joint [[.4,.1],[.1,.4]]: px uniform, rows (0.8, 0.2)
    j = DiscreteJoint(prompt_marginal=np.array([0.5, 0.5]),
                      conditional=np.array([[0.8, 0.2], [0.2, 0.8]]))
    hand = sum(p * np.log(p / (px * pz))
               for p, px, pz in [(0.4, 0.5, 0.5), (0.1, 0.5, 0.5),
                                 (0.1, 0.5, 0.5), (0.4, 0.5, 0.5)])
    val = exact_mi(j)
    assert abs(val - hand) < 1e-12
    assert abs(val - 0.1927) < 5e-5


def test_entropies_and_chain_rule():
    j = DiscreteJoint(prompt_marginal=np.array([0.5, 0.5]),
                      conditional=np.array([[0.8, 0.2], [0.2, 0.8]]))
    h = exact_entropies(j)
    assert abs(h["h_z"] - np.log(2)) < 1e-12
    assert abs(h["h_z_given_x"] - 0.5004) < 5e-5
    assert abs(h["h_z"] - (h["h_z_given_x"] + exact_mi(j))) < 1e-12


def test_dual_route_mi_identity():
    rng = np.random.default_rng(17)
    for _ in range(200):
        j = _random_joint(rng)
        h = exact_entropies(j)
        via_entropies = h["h_x"] + h["h_z"] - h["h_joint"]
        assert abs(exact_mi(j) - via_entropies) < 1e-12


def test_zero_cells_are_safe():
    cond = np.array([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]])
    j = DiscreteJoint.uniform_prompts(cond)
    assert np.isfinite(exact_mi(j))
    assert np.isfinite(exact_entropies(j)["h_joint"])


def test_joint_validation():
    with pytest.raises(DomainError):
        DiscreteJoint(prompt_marginal=np.array([0.6, 0.6]),
                      conditional=np.eye(2))
    with pytest.raises(DomainError):
        DiscreteJoint(prompt_marginal=np.array([0.5, 0.5]),
                      conditional=np.array([[0.9, 0.2], [0.5, 0.5]]))
    with pytest.raises(DomainError):
        DiscreteJoint(prompt_marginal=np.array([0.5, 0.5]),
                      conditional=np.array([[-0.1, 1.1], [0.5, 0.5]]))
    with pytest.raises(ConfigError):
        DiscreteJoint(prompt_marginal=np.array([0.5, 0.5]),
                      conditional=np.array([0.5, 0.5]))  # not a matrix


# -- template mixing ---------------------------------------------------------------


def test_template_mix_endpoints():
    rng = np.random.default_rng(18)
    j = _random_joint(rng, nx=3, nz=4)
    q = rng.dirichlet(np.ones(4))
    same = template_mix(j, q, 0.0)
    assert np.array_equal(same.conditional, j.conditional)
    collapsed = template_mix(j, q, 1.0)
    assert np.allclose(collapsed.conditional, q[None, :], atol=1e-15)
    assert exact_mi(collapsed) < 1e-15


def test_template_mix_half_hand_value():
    j = DiscreteJoint.uniform_prompts(np.array([[0.8, 0.2], [0.2, 0.8]]))
    mixed = template_mix(j, np.array([0.5, 0.5]), 0.5)
    val = exact_mi(mixed)
    # rows become (0.65, 0.35) / (0.35, 0.65)
    hand = sum(0.5 * p * np.log(p / 0.5) for p in (0.65, 0.35, 0.35, 0.65))
    assert abs(val - hand) < 1e-12
    assert abs(val - 0.0457) < 5e-5
    assert val <= 0.5 * exact_mi(j) + 1e-12


def test_template_mix_contraction_property():
    # I(alpha) <= (1 - alpha) * I for random joints and templates
    rng = np.random.default_rng(19)
    for _ in range(200):
        j = _random_joint(rng)
        q = rng.dirichlet(np.ones(j.conditional.shape[1]))
        alpha = float(rng.uniform())
        assert exact_mi(template_mix(j, q, alpha)) <= (1 - alpha) * exact_mi(j) + 1e-12


def test_template_mix_validation():
    j = DiscreteJoint.uniform_prompts(np.eye(2))
    with pytest.raises(DomainError):
        template_mix(j, np.array([0.5, 0.5]), 1.5)
    with pytest.raises(DomainError):
        template_mix(j, np.array([0.7, 0.7]), 0.5)
    with pytest.raises(ConfigError):
        template_mix(j, np.array([0.5, 0.25, 0.25]), 0.5)


# -- continuity bound --------------------------------------------------------------


def test_fannes_bound_values():
    assert fannes_mi_bound(0.0, 4, 4) == 0.0
    # epsilon=0.02, |X||Z|=16: delta=0.1, bound = 2*(0.1*ln 15 + h2(0.1))
    val = fannes_mi_bound(0.02, 4, 4)
    h2 = binary_entropy(0.1)
    hand = 2 * (0.1 * np.log(15) + h2)
    assert abs(val - hand) < 1e-12
    assert abs(val - 1.1918) < 5e-5
    assert abs(h2 - 0.3251) < 5e-5


def test_fannes_bound_monotone_in_epsilon():
    vals = [fannes_mi_bound(e, 4, 8) for e in np.linspace(0.001, 1.9, 25)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_fannes_bound_validation():
    with pytest.raises(DomainError):
        fannes_mi_bound(2.5, 4, 4)  # delta > 1
    with pytest.raises(DomainError):
        fannes_mi_bound(-0.1, 4, 4)
    with pytest.raises(DomainError):
        fannes_mi_bound(0.1, 1, 4)
    assert binary_entropy(0.0) == 0.0 and binary_entropy(1.0) == 0.0


# -- decomposition -----------------------------------------------------------------


def test_decomposition_equal_joints():
    j = DiscreteJoint.uniform_prompts(np.array([[0.7, 0.3], [0.4, 0.6]]))
    d_in, d_marg, d_i = mi_change_decomposition(j, j)
    assert d_in == 0.0 and d_marg == 0.0 and d_i == 0.0


def test_decomposition_diagonal_to_uniform():
    j0 = DiscreteJoint.uniform_prompts(np.eye(4))
    j1 = DiscreteJoint.uniform_prompts(np.full((4, 4), 0.25))
    d_in, d_marg, d_i = mi_change_decomposition(j1, j0)
    assert abs(d_in - np.log(4)) < 1e-12   # conditional entropy grew by ln|Z|
    assert abs(d_marg) < 1e-12             # marginal stayed uniform
    assert abs(d_i + np.log(4)) < 1e-12    # MI fell by ln|Z|


def test_decomposition_identity_random_pairs():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        nx, nz = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        ja = _random_joint(rng, nx=nx, nz=nz)
        jb = _random_joint(rng, nx=nx, nz=nz)
        d_in, d_marg, d_i = mi_change_decomposition(ja, jb)
        assert abs(d_i - (d_marg - d_in)) < 1e-12
        assert abs(d_i - (exact_mi(ja) - exact_mi(jb))) < 1e-12


def test_decomposition_rejects_mismatched_marginals():
    ja = DiscreteJoint(prompt_marginal=np.array([0.5, 0.5]), conditional=np.eye(2))
    jb = DiscreteJoint(prompt_marginal=np.array([0.3, 0.7]), conditional=np.eye(2))
    with pytest.raises(ConfigError):
        mi_change_decomposition(ja, jb)


# -- policy bridge -----------------------------------------------------------------


def test_joint_from_policy():
    spec = PolicySpec(num_prompts=3, reasoning_len=1, vocab_size=4, num_actions=2)
    assert exact_mi(joint_from_policy(PolicyParams.zeros(spec))) == 0.0
    shared = shared_table_params(spec, scale=1.5, seed=2)
    assert exact_mi(joint_from_policy(shared)) < 1e-12

    onehot_spec = PolicySpec(num_prompts=4, reasoning_len=1, vocab_size=4,
                             num_actions=2)
    params = PolicyParams.one_hot(onehot_spec, tokens=[[i] for i in range(4)],
                                  actions=[0] * 4)
    assert abs(exact_mi(joint_from_policy(params)) - np.log(4)) < 1e-9

    rnd = random_params(spec, scale=1.0, seed=3)
    j = joint_from_policy(rnd)
    assert j.conditional.shape == (3, 4)
    assert np.allclose(j.prompt_marginal, 1 / 3)
