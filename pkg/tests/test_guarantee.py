import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycomp.cmp import PolicyParams, flow_residual, occupancy, occupancy_from_probs, random_cmp, random_policy
from polycomp.envs import gridworld, single_state
from polycomp.game import GdaConfig
from polycomp.guarantee import (
    bound_floor,
    brute_force_cover,
    build_guarantee_lp,
    cover_guarantee,
    estimate_global_z,
    flow_constraints,
    is_sigma_compression,
    policy_from_occupancy,
    solve_lp,
)
from polycomp.simplex import solve_general

from conftest import one_state


def test_lp_shape(rng):
    cmp = random_cmp(rng, 3, 2)
    prob = build_guarantee_lp(cmp, [random_policy(rng, 3, 2) for _ in range(2)])
    assert prob.A_eq.shape == (3, 7) and prob.A_ub.shape == (2, 7) and prob.n_vars == 7
    assert prob.free.tolist() == [False] * 6 + [True]
    text = prob.to_text()
    assert text.startswith("# vars 7 eq 3 ub 2") and text.count("\nE ") == 3


def test_flow_polytope_has_unit_mass(rng):
    cmp = random_cmp(rng, 4, 3)
    A_eq, b_eq = flow_constraints(cmp)
    opt, x, _ = solve_general(np.ones(12), A_eq, b_eq, maximize=True)
    assert opt == pytest.approx(1.0, abs=1e-12)


def test_coin_example():
    cmp = one_state(2)
    u = PolicyParams.zeros(1, 2)
    g = cover_guarantee(cmp, [u], z_restarts=4)
    assert g.lp_root_value == pytest.approx(math.sqrt(2), abs=1e-12)
    assert g.cover_bound == pytest.approx(2.0, abs=1e-12)
    assert g.z_estimate == pytest.approx(2.0, abs=1e-12)  # attained at the vertex omega = (1, 0)
    dup = cover_guarantee(cmp, [u, u], z_restarts=0)
    assert dup.lp_root_value == g.lp_root_value


def test_one_action_cmp():
    rng = np.random.default_rng(2)
    cmp = random_cmp(rng, 3, 1)
    p = PolicyParams.zeros(3, 1)
    g = cover_guarantee(cmp, [p], z_restarts=2)
    assert g.cover_bound >= 1 - 1e-12 and g.z_estimate == pytest.approx(1.0)
    # with a single state the policy space is one point and B = Z = 1
    pt = one_state(1)
    q = PolicyParams.zeros(1, 1)
    assert cover_guarantee(pt, [q], z_restarts=1).cover_bound == pytest.approx(1.0)
    assert is_sigma_compression(pt, [q], 2.0)[0]
    assert not is_sigma_compression(pt, [q], 1 - 1e-6)[0]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), S=st.integers(1, 5), A=st.integers(2, 3), K=st.integers(1, 3))
def test_witness_is_an_occupancy(seed, S, A, K):
    rng = np.random.default_rng(seed)
    cmp = random_cmp(rng, S, A)
    leader = [random_policy(rng, S, A) for _ in range(K)]
    sol = solve_lp(build_guarantee_lp(cmp, leader))
    assert sol.max_residual <= 1e-9
    omega = sol.witness[:-1].reshape(S, A)
    assert np.abs(flow_residual(cmp, omega)).max() <= 1e-8
    back = occupancy_from_probs(cmp, policy_from_occupancy(omega)).d_sa
    mass = omega.sum(axis=1) > 1e-8
    assert np.abs(back - omega)[mass].max() <= 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_monotone_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    cmp = random_cmp(rng, 4, 2)
    leader = [random_policy(rng, 4, 2) for _ in range(3)]
    v = [cover_guarantee(cmp, leader[:k], z_restarts=0).lp_root_value for k in (1, 2, 3)]
    assert v[0] >= v[1] - 1e-9 >= v[2] - 2e-9
    perm = cover_guarantee(cmp, leader[::-1], z_restarts=0).lp_root_value
    assert perm == pytest.approx(v[2], rel=1e-10)


def test_estimate_is_monotone_in_restarts(rng):
    cmp = random_cmp(rng, 3, 2)
    leader = [random_policy(rng, 3, 2)]
    vals = [estimate_global_z(cmp, leader, restarts=r, seed=4) for r in (1, 3, 6)]
    assert vals[0] <= vals[1] <= vals[2]


def test_estimate_against_grid_search():
    rng = np.random.default_rng(8)
    cmp = random_cmp(rng, 2, 2, 0.9)
    leader = [random_policy(rng, 2, 2)]
    d_l = occupancy(cmp, leader[0]).d_sa
    grid = np.linspace(1e-4, 1 - 1e-4, 200)
    best = 0.0
    for p in grid:
        for q in grid:
            d = occupancy_from_probs(cmp, np.array([[p, 1 - p], [q, 1 - q]])).d_sa
            best = max(best, float((d * d / d_l).sum()))
    est = estimate_global_z(cmp, leader, restarts=8, seed=0, cfg=GdaConfig())
    assert abs(est - best) <= 0.02 * best


def test_bound_floor_values():
    assert bound_floor(single_state(3))[0] == pytest.approx(3.0, rel=1e-9)
    assert bound_floor(gridworld())[0] == pytest.approx(36.0, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bound_floor_is_below_every_leader(seed):
    rng = np.random.default_rng(seed)
    cmp = random_cmp(rng, 3, 2)
    floor, omega = bound_floor(cmp, iters=50)
    assert np.abs(flow_residual(cmp, omega)).max() <= 1e-9
    leader = [random_policy(rng, 3, 2, 2.0) for _ in range(4)]
    assert cover_guarantee(cmp, leader, z_restarts=0).cover_bound >= floor - 1e-9


def test_brute_force_cover():
    cmp = one_state(2)
    same = [PolicyParams.zeros(1, 2)] * 4
    assert brute_force_cover(cmp, same, 1.5) == 1
    a = [PolicyParams.from_probs(np.array([[p, 1 - p]])) for p in (0.9, 0.88, 0.1, 0.12)]
    assert brute_force_cover(cmp, a, 1.1) == 2
    assert brute_force_cover(cmp, a, 0.5) is None
    with pytest.raises(ValueError):
        brute_force_cover(cmp, same * 6, 2.0)
