"""Certification of a cover: the Bellman-flow linear program and friends.

For a leader with occupancies ``d_k`` the LP

    maximise z  s.t.  z <= sum_sa omega(s, a) / sqrt(d_k(s, a))   for every k
                      omega in the Bellman-flow polytope

has optimum ``V``; the certified bound is ``B = V**2``.  Because
``(sum g)^2 >= sum g^2`` for ``g = omega / sqrt(d_k) >= 0``, ``B`` upper-bounds
the worst divergence ``max_omega min_k sum omega^2 / d_k`` of any policy.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .cmp import (
    DIVERGENCE_FLOOR,
    Occupancy,
    PolicyParams,
    TabularCmp,
    flow_residual,
    occupancy,
    occupancy_from_probs,
    renyi2_arrays,
)
from .simplex import LpStructureError, solve_general


@dataclass
class LpProblem:
    """``maximise objective @ x`` with ``x = (omega.ravel(), z)``."""

    objective: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    free: np.ndarray
    n_states: int
    n_actions: int
    floored: list[tuple[int, int, int]] = field(default_factory=list)  # (k, s, a)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def to_text(self) -> str:
        """Plain-text standard-form dump, one row per line."""
        fmt = lambda v: format(float(v), ".17g")  # noqa: E731
        lines = [f"# vars {self.n_vars} eq {self.A_eq.shape[0]} ub {self.A_ub.shape[0]}",
                 "maximize " + " ".join(map(fmt, self.objective))]
        for row, rhs in zip(self.A_eq, self.b_eq):
            lines.append("E " + " ".join(map(fmt, row)) + " = " + fmt(rhs))
        for row, rhs in zip(self.A_ub, self.b_ub):
            lines.append("L " + " ".join(map(fmt, row)) + " <= " + fmt(rhs))
        lines.append("free " + " ".join(str(i) for i in np.flatnonzero(self.free)))
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    optimum: float
    witness: np.ndarray
    status: str
    max_residual: float
    min_reduced_cost: float


@dataclass
class GuaranteeResult:
    lp_root_value: float  # V
    cover_bound: float  # B = V**2
    witness: np.ndarray  # omega*, shape (S, A)
    z_estimate: float
    floored: list = field(default_factory=list)


def flow_constraints(cmp: TabularCmp) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``sum_a w(s,a) - gamma sum_{s',a'} w(s',a') P(s|s',a') = (1-gamma) mu(s)``."""
    S, A = cmp.n_states, cmp.n_actions
    A_eq = np.zeros((S, S * A))
    for s in range(S):
        A_eq[s, s * A:(s + 1) * A] = 1.0
    A_eq -= cmp.discount * cmp.transition.reshape(S * A, S).T
    return A_eq, (1.0 - cmp.discount) * cmp.init_dist


def build_guarantee_lp(cmp: TabularCmp, leader, leader_occ: list[Occupancy] | None = None) -> LpProblem:
    comps = leader.components if hasattr(leader, "components") else leader
    if leader_occ is None:
        leader_occ = [occupancy(cmp, c) for c in comps]
    S, A = cmp.n_states, cmp.n_actions
    n = S * A
    A_flow, b_flow = flow_constraints(cmp)
    A_eq = np.hstack([A_flow, np.zeros((S, 1))])
    A_ub = np.zeros((len(leader_occ), n + 1))
    floored = []
    for k, occ in enumerate(leader_occ):
        d = occ.d_sa
        low = d < DIVERGENCE_FLOOR
        for s, a in np.argwhere(low):
            floored.append((k, int(s), int(a)))
        A_ub[k, :n] = -1.0 / np.sqrt(np.maximum(d, DIVERGENCE_FLOOR)).ravel()
        A_ub[k, n] = 1.0
    objective = np.zeros(n + 1)
    objective[n] = 1.0
    free = np.zeros(n + 1, dtype=bool)
    free[n] = True
    return LpProblem(objective, A_eq, b_flow, A_ub, np.zeros(len(leader_occ)), free, S, A, floored)


def solve_lp(problem: LpProblem) -> LpSolution:
    """Solve with the in-house simplex and check feasibility of the witness."""
    opt, x, res = solve_general(
        problem.objective, problem.A_eq, problem.b_eq, problem.A_ub, problem.b_ub,
        free=problem.free, maximize=True,
    )
    resid = np.abs(problem.A_eq @ x - problem.b_eq).max(initial=0.0)
    viol = np.maximum(problem.A_ub @ x - problem.b_ub, 0.0).max(initial=0.0)
    nonneg = np.maximum(-x[~problem.free], 0.0).max(initial=0.0)
    return LpSolution(
        optimum=opt, witness=x, status=res.status,
        max_residual=float(max(resid, viol, nonneg)),
        min_reduced_cost=float(res.reduced_costs.min(initial=0.0)),
    )


MAX_ENUMERATED = 1 << 14


def deterministic_values(cmp: TabularCmp, leader_dsa: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Cover values of deterministic policies, one row of ``actions`` (R, S) each."""
    S = cmp.n_states
    gamma = cmp.discount
    P_pi = cmp.transition[np.arange(S), actions]  # (R, S, S')
    M = np.eye(S) - gamma * np.swapaxes(P_pi, 1, 2)
    rhs = np.broadcast_to((1.0 - gamma) * cmp.init_dist, (actions.shape[0], S))[..., None]
    d_s = np.clip(np.linalg.solve(M, rhs)[..., 0], 0.0, None)
    d_sa = np.zeros((actions.shape[0], S, cmp.n_actions))
    np.put_along_axis(d_sa, actions[..., None], d_s[..., None], axis=2)
    low = leader_dsa < DIVERGENCE_FLOOR
    inv = np.where(low, 0.0, 1.0 / np.maximum(leader_dsa, DIVERGENCE_FLOOR))
    D = np.einsum("rsa,ksa->rk", d_sa * d_sa, inv)
    D[np.einsum("rsa,ksa->rk", (d_sa > 0).astype(float), low.astype(float)) > 0] = np.inf
    return D.min(axis=1)


def estimate_global_z(cmp: TabularCmp, leader, restarts: int = 8, seed: int = 0, cfg=None) -> float:
    """Multi-start lower estimate of the worst-case cover divergence.

    The true maximum is NP-hard; this is only used for reporting and for
    checking that the LP bound dominates it.  Candidates are follower ascents
    from the uniform policy and ``restarts - 1`` random draws, the
    deterministic policies obtained by rounding each ascent end point, and
    every deterministic policy when there are at most ``MAX_ENUMERATED`` of
    them.  Deterministic policies are limits of softmax policies, so each
    candidate value is attained or approached inside the family.  Restart
    ``r`` always uses the same draw for a given seed, so larger restart
    counts search supersets.
    """
    from .game import GdaConfig, best_response_candidates

    cfg = cfg or GdaConfig()
    comps = leader.components if hasattr(leader, "components") else leader
    S, A = cmp.n_states, cmp.n_actions
    rng = np.random.default_rng(seed)
    inits = [PolicyParams.zeros(S, A)]
    for _ in range(restarts - 1):
        inits.append(PolicyParams.from_free(rng.normal(0.0, cfg.restart_scale, S * (A - 1)), S, A))
    cands = best_response_candidates(cmp, list(comps), inits, cfg, cfg.follower_max_steps)
    best = max(c.value for c in cands)
    leader_dsa = np.stack([occupancy(cmp, c).d_sa for c in comps])
    rounded = np.stack([c.follower.logits.argmax(axis=1) for c in cands])
    best = max(best, float(deterministic_values(cmp, leader_dsa, rounded).max()))
    if A ** S <= MAX_ENUMERATED:
        grid = np.array(list(itertools.product(range(A), repeat=S)), dtype=int).reshape(-1, S)
        for chunk in np.array_split(grid, max(1, grid.shape[0] // 1024)):
            best = max(best, float(deterministic_values(cmp, leader_dsa, chunk).max()))
    return best


def cover_guarantee(cmp: TabularCmp, leader, z_restarts: int = 8, seed: int = 0, cfg=None) -> GuaranteeResult:
    comps = leader.components if hasattr(leader, "components") else leader
    problem = build_guarantee_lp(cmp, comps)
    sol = solve_lp(problem)
    V = sol.optimum
    omega = sol.witness[:-1].reshape(cmp.n_states, cmp.n_actions)
    z = estimate_global_z(cmp, comps, restarts=z_restarts, seed=seed, cfg=cfg) if z_restarts > 0 else float("nan")
    return GuaranteeResult(V, V * V, omega, z, problem.floored)


def policy_from_occupancy(omega: np.ndarray, min_mass: float = 1e-300) -> np.ndarray:
    """``pi(a|s) = omega(s,a) / sum_a omega(s,a)``, uniform where the state has no mass."""
    tot = omega.sum(axis=1, keepdims=True)
    pi = np.full_like(omega, 1.0 / omega.shape[1])
    rows = tot[:, 0] > min_mass
    pi[rows] = omega[rows] / tot[rows]
    return pi


@dataclass
class CompressionEvidence:
    certified: bool
    cover_bound: float
    z_estimate: float
    witness: np.ndarray


def is_sigma_compression(cmp: TabularCmp, candidate_set, sigma: float, z_restarts: int = 4,
                         seed: int = 0) -> tuple[bool, CompressionEvidence]:
    """Sufficient check: ``B <= sigma``.

    ``False`` means the set could not be certified, not that it fails to be a
    compression.
    """
    g = cover_guarantee(cmp, candidate_set, z_restarts=z_restarts, seed=seed)
    ok = bool(g.cover_bound <= sigma)
    return ok, CompressionEvidence(ok, g.cover_bound, g.z_estimate, g.witness)


def bound_floor(cmp: TabularCmp, iters: int = 200, tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """Leader-independent lower bound on the certified bound ``B``.

    For a fixed ``omega`` the best single behavior ``d`` (any distribution)
    minimises ``sum omega / sqrt(d)`` at ``d ~ omega^(2/3)``, with value
    ``(sum omega^(2/3))^(3/2)``.  Hence every leader, of any size, has
    ``B >= (sum omega^(2/3))^3`` for every feasible ``omega``.  Frank-Wolfe
    ascent on this concave objective returns a feasible ``omega`` and the
    bound it certifies.
    """
    S, A = cmp.n_states, cmp.n_actions
    A_eq, b_eq = flow_constraints(cmp)
    omega = occupancy_from_probs(cmp, np.full((S, A), 1.0 / A)).d_sa.ravel()

    def phi(w):
        return float(np.sum(np.clip(w, 0.0, None) ** (2.0 / 3.0)))

    for _ in range(iters):
        grad = (2.0 / 3.0) * np.maximum(omega, 1e-12) ** (-1.0 / 3.0)
        _, vertex, _ = solve_general(grad, A_eq, b_eq, maximize=True)
        direction = vertex - omega
        if float(grad @ direction) <= tol * max(1.0, phi(omega)):
            break
        # golden-section search on the segment
        lo, hi = 0.0, 1.0
        g = (math.sqrt(5.0) - 1.0) / 2.0
        for _ in range(60):
            a, b = hi - g * (hi - lo), lo + g * (hi - lo)
            if phi(omega + a * direction) < phi(omega + b * direction):
                lo = a
            else:
                hi = b
        omega = omega + 0.5 * (lo + hi) * direction
    return phi(omega) ** 3, omega.reshape(S, A)


MAX_GRID = 20


def brute_force_cover(cmp: TabularCmp, policy_grid, sigma: float) -> int | None:
    """Exact minimum number of grid policies covering every grid policy.

    Member ``j`` covers member ``i`` when ``D2(d_i || d_j) <= sigma``.
    Returns ``None`` when no cover exists (always the case for ``sigma < 1``).
    """
    grid = list(policy_grid)
    if len(grid) > MAX_GRID:
        raise ValueError(f"brute-force cover is limited to {MAX_GRID} policies, got {len(grid)}")
    if not grid:
        return 0
    occ = [occupancy(cmp, p) if isinstance(p, PolicyParams) else p for p in grid]
    n = len(occ)
    covers = np.array([[renyi2_arrays(occ[i].d_sa, occ[j].d_sa) <= sigma for i in range(n)]
                       for j in range(n)])  # covers[j, i]
    masks = [int(sum(1 << i for i in range(n) if covers[j, i])) for j in range(n)]
    full = (1 << n) - 1
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            acc = 0
            for j in subset:
                acc |= masks[j]
            if acc == full:
                return size
    return None


__all__ = [
    "CompressionEvidence",
    "GuaranteeResult",
    "LpProblem",
    "LpSolution",
    "LpStructureError",
    "bound_floor",
    "brute_force_cover",
    "build_guarantee_lp",
    "cover_guarantee",
    "deterministic_values",
    "estimate_global_z",
    "flow_constraints",
    "flow_residual",
    "is_sigma_compression",
    "policy_from_occupancy",
    "solve_lp",
]
