"""Exact occupancy Jacobians and the cover-game gradients.

The state occupancy solves ``(I - gamma P_pi^T) d_s = (1 - gamma) mu``.
Differentiating both sides w.r.t. a logit ``theta_p`` gives
``(I - gamma P_pi^T) dd_s/dtheta_p = gamma (dP_pi^T/dtheta_p) d_s``, so every
parameter costs one extra triangular solve against the same LU factors.

Free parameter ``p`` indexes logit ``(s, a)`` with ``p = s * (A - 1) + a``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cmp import (
    DIVERGENCE_FLOOR,
    ConfigurationError,
    Occupancy,
    PolicyParams,
    TabularCmp,
    cover_value_occ,
    lu_flow,
    occupancy,
    policy_probs,
    state_transition,
)


class NoAscentDirectionError(RuntimeError):
    """Every leader component has infinite divergence to the follower."""


@dataclass(frozen=True)
class OccupancyJacobian:
    """Derivatives of the occupancy w.r.t. the free logits.

    ``grad_dsa[s, a, p]`` is the plain derivative, ``grad_log_dsa`` the
    logarithmic one (zero where the state mass is below the floor).
    """

    occ: Occupancy
    grad_ds: np.ndarray  # (S, P)
    grad_dsa: np.ndarray  # (S, A, P)

    @property
    def grad_log_dsa(self) -> np.ndarray:
        d = self.occ.d_sa[..., None]
        out = np.zeros_like(self.grad_dsa)
        np.divide(self.grad_dsa, d, out=out, where=d > DIVERGENCE_FLOOR)
        return out


def _rhs_and_dpi(cmp: TabularCmp, pi: np.ndarray, d_s: np.ndarray):
    S, A = pi.shape
    P_pi = state_transition(cmp, pi)
    free_pi = pi[:, :-1]  # (S, A-1)
    # gamma * d_s[s] * pi[s, a] * (P[s, a, :] - P_pi[s, :]) for each free (s, a)
    diff = cmp.transition[:, :-1, :] - P_pi[:, None, :]  # (S, A-1, S')
    rhs = cmp.discount * (d_s[:, None] * free_pi)[..., None] * diff
    rhs = rhs.reshape(S * (A - 1), S).T  # (S', P)

    # dpi[s, a, p] is nonzero only for p belonging to state s
    dpi = np.zeros((S, A, S * (A - 1)))
    for s in range(S):
        cols = slice(s * (A - 1), (s + 1) * (A - 1))
        block = -np.outer(pi[s], free_pi[s])
        block[np.arange(A - 1), np.arange(A - 1)] += free_pi[s]
        dpi[s, :, cols] = block
    return rhs, dpi


def occupancy_grad(cmp: TabularCmp, params: PolicyParams, batched: bool = True) -> OccupancyJacobian:
    """Jacobian of the occupancy by implicit differentiation.

    ``batched=False`` solves column by column against the same factorization;
    both paths give the same numbers.
    """
    pi = policy_probs(cmp, params)
    lu = lu_flow(cmp, pi)
    d_s = scipy.linalg.lu_solve(lu, (1.0 - cmp.discount) * cmp.init_dist, check_finite=False)
    d_s = np.clip(d_s, 0.0, None)
    rhs, dpi = _rhs_and_dpi(cmp, pi, d_s)
    if batched:
        grad_ds = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    else:
        grad_ds = np.column_stack(
            [scipy.linalg.lu_solve(lu, rhs[:, p], check_finite=False) for p in range(rhs.shape[1])]
        ) if rhs.shape[1] else np.zeros((cmp.n_states, 0))
    grad_dsa = pi[:, :, None] * grad_ds[:, None, :] + d_s[:, None, None] * dpi
    return OccupancyJacobian(Occupancy(d_s, pi * d_s[:, None]), grad_ds, grad_dsa)


def divergence_grad_target(jac_target: OccupancyJacobian, behavior: Occupancy) -> np.ndarray:
    """Gradient of ``D2(d_target || behavior)`` w.r.t. the target's logits.

    Equal to ``2 E_behavior[w^2 grad log d_target]`` written as
    ``2 sum w * grad d_target`` so that tiny target masses do not divide.
    """
    b = behavior.d_sa
    if np.any((b < DIVERGENCE_FLOOR) & (jac_target.occ.d_sa > 0)):
        raise NoAscentDirectionError("infinite divergence to the active component")
    w = np.where(b >= DIVERGENCE_FLOOR, jac_target.occ.d_sa / np.maximum(b, DIVERGENCE_FLOOR), 0.0)
    return 2.0 * np.einsum("sa,sap->p", w, jac_target.grad_dsa)


def divergence_grad_behavior(target: Occupancy, jac_behavior: OccupancyJacobian) -> np.ndarray:
    """Gradient of ``D2(target || d_behavior)`` w.r.t. the behavior's logits.

    ``-E_behavior[w^2 grad log d_behavior] = -sum w^2 grad d_behavior``.
    """
    b = jac_behavior.occ.d_sa
    if np.any((b < DIVERGENCE_FLOOR) & (target.d_sa > 0)):
        raise NoAscentDirectionError("infinite divergence to the active component")
    w = np.where(b >= DIVERGENCE_FLOOR, target.d_sa / np.maximum(b, DIVERGENCE_FLOOR), 0.0)
    return -np.einsum("sa,sap->p", w * w, jac_behavior.grad_dsa)


def linear_functional_grad(cmp: TabularCmp, pi: np.ndarray, coef: np.ndarray):
    """Occupancy and gradient of ``sum_sa coef[s, a] * d_sa(s, a)`` w.r.t. free logits.

    Adjoint form: a single transposed solve replaces the per-parameter
    solves of :func:`occupancy_grad`.
    """
    S, A = pi.shape
    gamma = cmp.discount
    P_pi = np.einsum("sa,sat->st", pi, cmp.transition)
    M = np.eye(S) - gamma * P_pi.T
    d_s = np.clip(np.linalg.solve(M, (1.0 - gamma) * cmp.init_dist), 0.0, None)
    cpi = (coef * pi).sum(axis=1)
    lam = np.linalg.solve(M.T, cpi)
    P_lam = cmp.transition[:, :-1, :] @ lam  # (S, A-1)
    base = d_s[:, None] * pi[:, :-1]
    g = base * (coef[:, :-1] - cpi[:, None]) + gamma * base * (P_lam - (P_pi @ lam)[:, None])
    return Occupancy(d_s, pi * d_s[:, None]), g.ravel()


def _leader_occ(cmp, leader):
    comps = leader.components if hasattr(leader, "components") else leader
    return comps, [occupancy(cmp, c) for c in comps]


def follower_gradient(cmp: TabularCmp, leader, follower: PolicyParams) -> np.ndarray:
    """Ascent direction for the follower against its active leader component."""
    comps, occs = _leader_occ(cmp, leader)
    jac = occupancy_grad(cmp, follower)
    value, k = cover_value_occ(occs, jac.occ)
    if not np.isfinite(value):
        raise NoAscentDirectionError("all leader components have infinite divergence")
    return divergence_grad_target(jac, occs[k])


def leader_gradient(cmp: TabularCmp, leader, follower: PolicyParams, active_index: int) -> np.ndarray:
    """Gradient of the cover objective w.r.t. the active component's logits."""
    comps = leader.components if hasattr(leader, "components") else leader
    jac = occupancy_grad(cmp, comps[active_index])
    return divergence_grad_behavior(occupancy(cmp, follower), jac)


def numeric_grad(fun, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences; used as an oracle and for Hessian blocks."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


__all__ = [
    "ConfigurationError",
    "NoAscentDirectionError",
    "OccupancyJacobian",
    "divergence_grad_behavior",
    "divergence_grad_target",
    "follower_gradient",
    "leader_gradient",
    "linear_functional_grad",
    "numeric_grad",
    "occupancy_grad",
]
