import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycomp.cmp import Occupancy, PolicyParams, occupancy, policy_probs, random_cmp, random_policy, renyi2_arrays
from polycomp.grad import (
    NoAscentDirectionError,
    divergence_grad_behavior,
    follower_gradient,
    leader_gradient,
    linear_functional_grad,
    numeric_grad,
    occupancy_grad,
)

from conftest import one_state, rel_err


def _instance(seed, S=4, A=3):
    rng = np.random.default_rng(seed)
    cmp = random_cmp(rng, S, A, 0.9)
    return cmp, random_policy(rng, S, A), random_policy(rng, S, A)


def test_one_state_closed_form():
    cmp = one_state(2)
    p = PolicyParams.from_free(np.array([0.7]), 1, 2)
    pi0 = policy_probs(cmp, p)[0, 0]
    G = occupancy_grad(cmp, p).grad_log_dsa
    assert G[0, 0, 0] == pytest.approx(1 - pi0, abs=1e-14)
    assert G[0, 1, 0] == pytest.approx(-pi0, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_normalization_identity(seed):
    cmp, p, _ = _instance(seed)
    jac = occupancy_grad(cmp, p)
    assert np.abs(np.einsum("sa,sap->p", jac.occ.d_sa, jac.grad_log_dsa)).max() <= 1e-8


def test_jacobian_matches_finite_differences():
    cmp, p, _ = _instance(3)
    S, A = 4, 3
    jac = occupancy_grad(cmp, p)
    for q in range(p.free.size):
        e = np.zeros(p.free.size)
        e[q] = 1e-5
        hi = occupancy(cmp, PolicyParams.from_free(p.free + e, S, A)).d_sa
        lo = occupancy(cmp, PolicyParams.from_free(p.free - e, S, A)).d_sa
        fd = (np.log(hi) - np.log(lo)) / 2e-5
        assert rel_err(jac.grad_log_dsa[..., q], fd, floor=1e-6) <= 1e-4


def test_batched_and_columnwise_agree():
    cmp, p, _ = _instance(5, 6, 3)
    a, b = occupancy_grad(cmp, p, batched=True), occupancy_grad(cmp, p, batched=False)
    assert np.abs(a.grad_dsa - b.grad_dsa).max() <= 1e-12


def test_adjoint_matches_jacobian(rng):
    cmp, p, _ = _instance(11, 5, 3)
    coef = rng.normal(size=(5, 3))
    _, g = linear_functional_grad(cmp, policy_probs(cmp, p), coef)
    jac = occupancy_grad(cmp, p)
    assert np.abs(g - np.einsum("sa,sap->p", coef, jac.grad_dsa)).max() <= 1e-12


def _div_fd(cmp, leader_occ, x, S, A, wrt):
    def f(z):
        d = occupancy(cmp, PolicyParams.from_free(z, S, A)).d_sa
        return renyi2_arrays(d, leader_occ) if wrt == "follower" else renyi2_arrays(leader_occ, d)
    return numeric_grad(f, x)


@pytest.mark.parametrize("seed", range(6))
def test_follower_and_leader_gradients(seed):
    cmp, lead, foll = _instance(100 + seed)
    S, A = 4, 3
    g_f = follower_gradient(cmp, [lead], foll)
    assert rel_err(g_f, _div_fd(cmp, occupancy(cmp, lead).d_sa, foll.free, S, A, "follower"), 1e-6) <= 1e-4
    g_l = leader_gradient(cmp, [lead], foll, 0)
    assert rel_err(g_l, _div_fd(cmp, occupancy(cmp, foll).d_sa, lead.free, S, A, "leader"), 1e-6) <= 1e-4


def test_gradients_vanish_at_identity():
    cmp, p, _ = _instance(7)
    assert np.abs(follower_gradient(cmp, [p], p)).max() <= 1e-9
    assert np.abs(leader_gradient(cmp, [p], p, 0)).max() <= 1e-9


def test_symmetric_point_is_stationary():
    cmp = one_state(2)
    u = PolicyParams.zeros(1, 2)
    assert np.abs(follower_gradient(cmp, [u], u)).max() <= 1e-10


def test_small_steps_move_the_objective():
    cmp, lead, foll = _instance(21)
    S, A = 4, 3
    d_l = occupancy(cmp, lead).d_sa
    d_f = occupancy(cmp, foll).d_sa
    g = follower_gradient(cmp, [lead], foll)
    up = occupancy(cmp, PolicyParams.from_free(foll.free + 1e-3 * g, S, A)).d_sa
    assert renyi2_arrays(up, d_l) > renyi2_arrays(d_f, d_l)
    h = leader_gradient(cmp, [lead], foll, 0)
    down = occupancy(cmp, PolicyParams.from_free(lead.free - 1e-3 * h, S, A)).d_sa
    assert renyi2_arrays(d_f, down) < renyi2_arrays(d_f, d_l)


def test_infinite_divergence_raises():
    target = Occupancy(np.ones(1), np.array([[0.5, 0.5]]))
    cmp = one_state(2)
    jac = occupancy_grad(cmp, PolicyParams.zeros(1, 2))
    bad = type(jac)(Occupancy(np.ones(1), np.array([[1.0, 0.0]])), jac.grad_ds, jac.grad_dsa)
    with pytest.raises(NoAscentDirectionError):
        divergence_grad_behavior(target, bad)
