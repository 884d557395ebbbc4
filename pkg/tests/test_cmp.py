import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycomp.cmp import (
    ConfigurationError,
    DimensionError,
    Occupancy,
    PolicyParams,
    TabularCmp,
    cover_value,
    cover_value_occ,
    flow_residual,
    occupancy,
    policy_probs,
    random_cmp,
    random_policy,
    renyi2,
    renyi2_arrays,
    sample_discounted,
    sample_trajectories,
)

from conftest import absorbing_chain, one_state


def test_rejects_bad_rows():
    P = np.ones((2, 1, 2)) * 0.5
    P[1, 0] = [0.6, 0.3]
    with pytest.raises(ValueError, match=r"s=1, a=0"):
        TabularCmp(P, np.array([0.5, 0.5]), 0.9)


def test_rejects_discount_one_and_bad_shapes():
    with pytest.raises(ConfigurationError):
        TabularCmp(np.ones((1, 1, 1)), np.ones(1), 1.0)
    with pytest.raises(DimensionError):
        TabularCmp(np.ones((2, 1, 1)), np.ones(2), 0.5)
    with pytest.raises(DimensionError):
        TabularCmp(np.ones((1, 1, 1)), np.ones(2) / 2, 0.5)


def test_policy_params_pinning():
    with pytest.raises(ValueError):
        PolicyParams(np.array([[0.0, 1.0]]))
    with pytest.raises(ValueError):
        PolicyParams(np.array([[np.nan, 0.0]]))
    p = PolicyParams.from_free(np.array([1.0, 2.0]), 2, 2)
    assert p.logits.tolist() == [[1.0, 0.0], [2.0, 0.0]]
    assert np.array_equal(p.free, [1.0, 2.0])


def test_shape_mismatch(coin):
    with pytest.raises(DimensionError):
        policy_probs(coin, PolicyParams.zeros(2, 2))


def test_softmax_examples(coin):
    assert np.allclose(policy_probs(coin, PolicyParams.zeros(1, 2)), 0.5)
    pi = policy_probs(coin, PolicyParams.from_free(np.array([math.log(3)]), 1, 2))
    assert np.allclose(pi, [[0.75, 0.25]], atol=1e-15)
    pi = policy_probs(coin, PolicyParams.from_free(np.array([50.0]), 1, 2))
    assert pi[0, 0] >= 1 - 1e-20 and abs(pi.sum() - 1) <= 1e-12 and pi[0, 1] > 0


def test_softmax_matches_naive(rng):
    cmp = random_cmp(rng, 4, 3)
    p = random_policy(rng, 4, 3, 2.0)
    naive = np.exp(p.logits) / np.exp(p.logits).sum(axis=1, keepdims=True)
    assert np.max(np.abs(policy_probs(cmp, p) - naive)) <= 1e-12


def test_occupancy_examples(chain):
    d = occupancy(chain, PolicyParams.zeros(2, 1))
    assert np.allclose(d.d_s, [0.1, 0.9], atol=1e-14)
    pt = one_state(1)
    assert np.allclose(occupancy(pt, PolicyParams.zeros(1, 1)).d_sa, [[1.0]])
    loops = TabularCmp(np.eye(2)[:, None, :], np.array([0.3, 0.7]), 0.8)
    assert np.allclose(occupancy(loops, PolicyParams.zeros(2, 1)).d_s, [0.3, 0.7], atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), S=st.integers(1, 7), A=st.integers(1, 4),
       gamma=st.floats(0.0, 0.99))
def test_occupancy_invariants(seed, S, A, gamma):
    rng = np.random.default_rng(seed)
    cmp = random_cmp(rng, S, A, gamma)
    p = random_policy(rng, S, A, 2.0)
    occ = occupancy(cmp, p)
    pi = policy_probs(cmp, p)
    assert occ.d_sa.min() >= 0
    assert abs(occ.d_s.sum() - 1) <= 1e-10 and abs(occ.d_sa.sum() - 1) <= 1e-10
    assert np.max(np.abs(occ.d_sa - pi * occ.d_s[:, None])) <= 1e-12
    assert np.max(np.abs(flow_residual(cmp, occ.d_sa))) <= 1e-10
    assert abs(renyi2(occ, occ) - 1.0) <= 1e-12


def test_renyi_examples():
    assert renyi2_arrays(np.array([0.5, 0.5]), np.array([0.25, 0.75])) == pytest.approx(4 / 3, abs=1e-15)
    assert renyi2_arrays(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(2.0, abs=1e-15)
    assert renyi2_arrays(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == math.inf


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_renyi_at_least_one(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    assert renyi2_arrays(a, b) >= 1 - 1e-10


def test_cover_value_examples(coin):
    f = PolicyParams.from_probs(np.array([[0.25, 0.75]]))
    other = PolicyParams.zeros(1, 2)
    assert cover_value(coin, [f], f) == (pytest.approx(1.0), 0)
    assert cover_value(coin, [other, f], f)[1] == 1
    v, k = cover_value(coin, [other], f)
    assert v == pytest.approx(1.25, abs=1e-14) and k == 0


def test_cover_value_ties_and_all_infinite():
    d = Occupancy(np.ones(1), np.array([[0.5, 0.5]]))
    assert cover_value_occ([d, d], d) == (pytest.approx(1.0), 0)
    z = Occupancy(np.ones(1), np.array([[1.0, 0.0]]))
    assert cover_value_occ([z, z], d) == (math.inf, 0)


def test_sampler_single_pair_and_determinism(rng):
    pt = one_state(1)
    b = sample_discounted(pt, PolicyParams.zeros(1, 1), 3, 100)
    assert set(b.pairs) == {(0, 0)}
    cmp = random_cmp(rng, 4, 2)
    p = random_policy(rng, 4, 2)
    b1, b2 = sample_discounted(cmp, p, 9, 500), sample_discounted(cmp, p, 9, 500)
    assert np.array_equal(b1.states, b2.states) and np.array_equal(b1.actions, b2.actions)
    with pytest.raises(ValueError):
        sample_discounted(cmp, p, 0, 0)


def test_sampler_matches_chain_occupancy(chain):
    b = sample_discounted(chain, PolicyParams.zeros(2, 1), 0, 200_000)
    emp = np.bincount(b.states, minlength=2) / len(b)
    assert 0.5 * np.abs(emp - [0.1, 0.9]).sum() <= 0.01


def test_sampler_tv_shrinks(rng):
    cmp = random_cmp(rng, 5, 3)
    p = random_policy(rng, 5, 3)
    d = occupancy(cmp, p).d_sa
    tv = []
    for n in (2000, 8000, 32000):
        vals = [0.5 * np.abs(sample_discounted(cmp, p, s, n).counts(5, 3) / n - d).sum() for s in range(8)]
        tv.append(np.mean(vals))
    assert tv[0] > tv[1] > tv[2]


def test_trajectories(chain, rng):
    b = sample_trajectories(chain, PolicyParams.zeros(2, 1), 1, 50, 20)
    assert len(b) == 1000 and b.mode == "fixed-horizon"
    s = b.states.reshape(20, 50)
    assert np.all(s[0] == 0) and np.all(s[1:] == 1)
    cmp = random_cmp(rng, 3, 2)
    b1 = sample_trajectories(cmp, PolicyParams.zeros(3, 2), 5, 20000, 1)
    emp = np.bincount(b1.states, minlength=3) / len(b1)
    assert np.abs(emp - cmp.init_dist).max() < 0.02
    b2 = sample_trajectories(cmp, PolicyParams.zeros(3, 2), 5, 20000, 1)
    assert np.array_equal(b1.states, b2.states)
