"""Downstream RL tasks on a (compressed) policy space.

Returns are normalised as ``J = sum_sa d_sa R / (1 - gamma)``, i.e. the
expected discounted sum of rewards from the initial distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cmp import (
    DIVERGENCE_FLOOR,
    Occupancy,
    PolicyParams,
    SampleBatch,
    TabularCmp,
    occupancy,
    occupancy_from_probs,
    policy_probs,
    renyi2_arrays,
    sample_discounted,
    sample_trajectories,
)
from .grad import linear_functional_grad


class InfiniteDivergenceError(ValueError):
    """Some pair has target mass but no behavior mass; the estimator is undefined."""


@dataclass(frozen=True, eq=False)
class RewardFn:
    table: np.ndarray
    rmax: float

    def __post_init__(self):
        R = np.array(self.table, dtype=float)
        if R.ndim != 2:
            raise ValueError("reward table must be 2-D (states x actions)")
        if self.rmax <= 0:
            raise ValueError("rmax must be positive")
        if np.any(np.abs(R) > self.rmax):
            raise ValueError("reward entries exceed rmax in absolute value")
        R.setflags(write=False)
        object.__setattr__(self, "table", R)
        object.__setattr__(self, "rmax", float(self.rmax))

    def shifted(self, c: float) -> "RewardFn":
        return RewardFn(self.table + c, self.rmax + abs(c))

    def scaled(self, c: float) -> "RewardFn":
        return RewardFn(self.table * c, self.rmax * abs(c))


@dataclass(frozen=True)
class EvalResult:
    estimate: float
    bound_radius: float
    delta: float
    n_samples: int
    kind: str  # "IS", "MIS" or "on-policy"
    divergence: float  # the D2 used in the bound (sigma when certified)


def _probs(cmp: TabularCmp, policy) -> np.ndarray:
    if isinstance(policy, PolicyParams):
        return policy_probs(cmp, policy)
    return np.asarray(policy, dtype=float)


def _occ(cmp: TabularCmp, policy) -> Occupancy:
    if isinstance(policy, Occupancy):
        return policy
    if isinstance(policy, PolicyParams):
        return occupancy(cmp, policy)
    return occupancy_from_probs(cmp, np.asarray(policy, dtype=float))


def exact_return(cmp: TabularCmp, reward: RewardFn, policy) -> float:
    """``J`` from the exact occupancy; ``policy`` is params, probabilities or an occupancy."""
    d = _occ(cmp, policy).d_sa
    return float((d * reward.table).sum() / (1.0 - cmp.discount))


def _weights(target: np.ndarray, behavior: np.ndarray) -> np.ndarray:
    if np.any((behavior < DIVERGENCE_FLOOR) & (target > 0)):
        raise InfiniteDivergenceError("target puts mass where the behavior has none")
    return np.where(behavior >= DIVERGENCE_FLOOR, target / np.maximum(behavior, DIVERGENCE_FLOOR), 0.0)


def chebyshev_radius(rmax: float, gamma: float, divergence: float, delta: float, n: int) -> float:
    return rmax / (1.0 - gamma) * math.sqrt(divergence / (delta * n))


def is_estimate(cmp: TabularCmp, reward: RewardFn, target, behavior, batch: SampleBatch,
                delta: float = 0.1, sigma: float | None = None) -> EvalResult:
    """Importance-sampling estimate of ``J(target)`` from pairs drawn under ``behavior``.

    The radius uses the exact divergence (hindsight) unless ``sigma`` is
    given, in which case the certified ``sigma`` replaces it.
    """
    dt, db = _occ(cmp, target).d_sa, _occ(cmp, behavior).d_sa
    w = _weights(dt, db)
    N = len(batch)
    est = float((w * reward.table)[batch.states, batch.actions].sum() / ((1.0 - cmp.discount) * N))
    rho = renyi2_arrays(dt, db) if sigma is None else float(sigma)
    kind = "on-policy" if np.array_equal(dt, db) else "IS"
    return EvalResult(est, chebyshev_radius(reward.rmax, cmp.discount, rho, delta, N), delta, N, kind, rho)


def mixture_occupancy(occs: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    return np.einsum("k,ksa->sa", sizes / sizes.sum(), np.stack(occs))


def mis_estimate(cmp: TabularCmp, reward: RewardFn, target, behaviors, batches: Sequence[SampleBatch],
                 delta: float = 0.1, sigma: float | None = None) -> EvalResult:
    """Balance-heuristic multiple importance sampling; batch ``k`` comes from ``behaviors[k]``."""
    comps = behaviors.components if hasattr(behaviors, "components") else list(behaviors)
    if len(comps) != len(batches):
        raise ValueError("need one batch per behavior policy")
    dt = _occ(cmp, target).d_sa
    sizes = [len(b) for b in batches]
    N = sum(sizes)
    mix = mixture_occupancy([_occ(cmp, c).d_sa for c in comps], sizes)
    # d_t / sum_j N_j d_j = w_mix / N
    w = _weights(dt, mix)
    total = sum(float((w * reward.table)[b.states, b.actions].sum()) for b in batches)
    est = total / ((1.0 - cmp.discount) * N)
    rho = renyi2_arrays(dt, mix) if sigma is None else float(sigma)
    return EvalResult(est, chebyshev_radius(reward.rmax, cmp.discount, rho, delta, N), delta, N, "MIS", rho)


# ---------------------------------------------------------------- optimisation


def policy_iteration(cmp: TabularCmp, reward: RewardFn, max_iter: int = 1000) -> tuple[np.ndarray, float]:
    """Optimal deterministic policy (as probabilities) and its return ``J*``.

    ``J*`` is the supremum of ``J`` over every stationary policy, so it also
    bounds the softmax family from above.
    """
    S, A = cmp.n_states, cmp.n_actions
    gamma = cmp.discount
    R = reward.table
    act = np.zeros(S, dtype=int)
    for _ in range(max_iter):
        P_pi = cmp.transition[np.arange(S), act]
        V = np.linalg.solve(np.eye(S) - gamma * P_pi, R[np.arange(S), act])
        Q = R + gamma * cmp.transition @ V
        best = Q.max(axis=1)
        # switch only on strict improvement to avoid flip-flopping on ties
        improve = best > Q[np.arange(S), act] + 1e-12 * max(1.0, np.abs(best).max())
        if not improve.any():
            break
        act = np.where(improve, Q.argmax(axis=1), act)
    pi = np.zeros((S, A))
    pi[np.arange(S), act] = 1.0
    return pi, float(cmp.init_dist @ V)


def epsilon_greedy(pi: np.ndarray, eps: float = 0.1) -> np.ndarray:
    A = pi.shape[1]
    return (1.0 - eps) * pi + eps / A


def shared_probability_grid(n_states: int, n_actions: int, n: int, action: int = 1) -> list[PolicyParams]:
    """``n`` policies taking ``action`` with the same probability ``(i + 0.5) / n`` in every state.

    The remaining mass is split evenly across the other actions.
    """
    out = []
    for i in range(n):
        p = (i + 0.5) / n
        probs = np.full((n_states, n_actions), (1.0 - p) / (n_actions - 1))
        probs[:, action] = p
        out.append(PolicyParams.from_probs(probs))
    return out


@dataclass(frozen=True)
class BestInSet:
    index: int
    J: float
    suboptimality_bound: float
    optimum: float  # max J over all policies (policy-iteration oracle)
    bound_holds: bool

    @property
    def gap(self) -> float:
        return self.optimum - self.J


def best_in_set(cmp: TabularCmp, reward: RewardFn, cover, sigma: float) -> BestInSet:
    comps = cover.components if hasattr(cover, "components") else list(cover)
    Js = np.array([exact_return(cmp, reward, c) for c in comps])
    k = int(np.flatnonzero(Js == Js.max())[0])
    bound = reward.rmax / (1.0 - cmp.discount) * math.sqrt(math.log(sigma))
    _, J_star = policy_iteration(cmp, reward)
    return BestInSet(k, float(Js[k]), bound, J_star, bool(J_star - Js[k] <= bound + 1e-9))


@dataclass
class OffPolicyResult:
    params: PolicyParams
    anchor: int
    J_is: float
    epsilon_bound: float
    divergence: float  # D2(d_theta || d_anchor)
    fallback: bool


def _is_coef(cmp: TabularCmp, reward: RewardFn, d_anchor: np.ndarray, batch: SampleBatch) -> np.ndarray:
    """``J_IS(theta) = sum coef * d_theta``: the IS objective is linear in the occupancy."""
    freq = batch.counts(cmp.n_states, cmp.n_actions) / len(batch)
    inv = np.where(d_anchor >= DIVERGENCE_FLOOR, 1.0 / np.maximum(d_anchor, DIVERGENCE_FLOOR), 0.0)
    return freq * inv * reward.table / (1.0 - cmp.discount)


def _project_to_ball(cmp, theta: np.ndarray, anchor: np.ndarray, d_anchor: np.ndarray, sigma: float):
    """Bisection on the segment from ``anchor`` to ``theta`` for the farthest feasible point."""
    S, A = d_anchor.shape

    def div(x):
        return renyi2_arrays(occupancy(cmp, PolicyParams.from_free(x, S, A)).d_sa, d_anchor)

    if div(theta) <= sigma:
        return theta
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if div(anchor + mid * (theta - anchor)) <= sigma:
            lo = mid
        else:
            hi = mid
    return anchor + lo * (theta - anchor)


def offpolicy_optimize(cmp: TabularCmp, reward: RewardFn, cover, batches: Sequence[SampleBatch],
                       sigma: float, delta: float = 0.1, starts: int = 10, steps: int = 300,
                       rate: float = 0.05, penalty: float = 100.0, seed: int = 0) -> OffPolicyResult:
    """Maximise the IS objective of each component inside its divergence ball.

    Penalised ascent (Adam steps on ``J_IS - penalty * max(0, D2 - sigma)^2``,
    with ``J_IS`` rescaled to unit range) from ``starts`` initial points per
    component; the end point is pulled back onto the ball along the segment
    to the component, so every candidate is feasible.
    """
    comps = cover.components if hasattr(cover, "components") else list(cover)
    S, A = cmp.n_states, cmp.n_actions
    rng = np.random.default_rng(seed)
    scale = reward.rmax / (1.0 - cmp.discount)
    best: OffPolicyResult | None = None
    for k, (comp, batch) in enumerate(zip(comps, batches)):
        d_k = occupancy(cmp, comp).d_sa
        coef = _is_coef(cmp, reward, d_k, batch)
        inv = np.where(d_k >= DIVERGENCE_FLOOR, 1.0 / np.maximum(d_k, DIVERGENCE_FLOOR), 0.0)
        anchor = comp.free
        base_value = float((coef * d_k).sum())
        inits = [anchor] + [anchor + rng.normal(0.0, 0.5, anchor.size) for _ in range(starts - 1)]
        for x0 in inits:
            x = _project_to_ball(cmp, x0.copy(), anchor, d_k, sigma)
            m = np.zeros_like(x)
            v = np.zeros_like(x)
            for t in range(1, steps + 1):
                pi = policy_probs(cmp, PolicyParams.from_free(x, S, A))
                occ = occupancy_from_probs(cmp, pi)
                viol = max(0.0, float((occ.d_sa ** 2 * inv).sum()) - sigma)
                c = coef / scale - penalty * 2.0 * viol * 2.0 * occ.d_sa * inv
                _, g = linear_functional_grad(cmp, pi, c)
                m = 0.9 * m + 0.1 * g
                v = 0.999 * v + 0.001 * g * g
                x = x + rate * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            x = _project_to_ball(cmp, x, anchor, d_k, sigma)
            d = occupancy(cmp, PolicyParams.from_free(x, S, A)).d_sa
            val = float((coef * d).sum())
            cand = OffPolicyResult(PolicyParams.from_free(x, S, A), k, val, 0.0,
                                   renyi2_arrays(d, d_k), fallback=False)
            if best is None or val > best.J_is:
                best = cand
        if best is None or base_value > best.J_is:
            best = OffPolicyResult(comp, k, base_value, 0.0, 1.0, fallback=True)
    n_min = min(len(b) for b in batches)
    best.epsilon_bound = reward.rmax / (1.0 - cmp.discount) * math.sqrt(2.0 * sigma / (n_min * delta))
    return best


# ---------------------------------------------------------------- optimistic selection


def default_truncation(n: int) -> float:
    return math.sqrt(n / math.log(n)) if n > 1 else 1.0


@dataclass
class OptimistTrace:
    chosen: list[int] = field(default_factory=list)
    J: list[float] = field(default_factory=list)
    estimates: list[np.ndarray] = field(default_factory=list)
    bonuses: list[np.ndarray] = field(default_factory=list)

    def crossing(self, level: float, tol: float = 1e-9) -> int | None:
        """First (1-based) iteration whose chosen policy reaches ``level``."""
        for t, j in enumerate(self.J, start=1):
            if j >= level - tol:
                return t
        return None


def optimistic_select(cmp: TabularCmp, reward: RewardFn, candidates, iterations: int = 100,
                      per_iter_samples: int = 1000, delta: float = 0.1, seed: int = 0,
                      truncation: Callable[[int], float] = default_truncation,
                      delta_schedule: Callable[[int, int], float] | None = None,
                      horizon: int | None = None) -> OptimistTrace:
    """Optimistic finite-set policy selection with truncated MIS estimates.

    Iteration ``t`` samples ``per_iter_samples`` pairs with the current
    choice (the first candidate at ``t = 1``), then every candidate gets the
    truncated balance-heuristic estimate on all data collected so far plus
    the bonus ``Rmax/(1-gamma) * sqrt(D2(d_i || Phi_t) log(1/delta_t) / N_t)``.
    With ``horizon`` set, each iteration rolls out
    ``per_iter_samples // horizon`` fixed-horizon trajectories instead of
    drawing from the discounted occupancy.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    comps = candidates.components if hasattr(candidates, "components") else list(candidates)
    K = len(comps)
    S, A = cmp.n_states, cmp.n_actions
    delta_schedule = delta_schedule or (lambda t, k: delta / (t * t * k))
    occs = np.stack([occupancy(cmp, c).d_sa for c in comps])
    Js = np.array([exact_return(cmp, reward, c) for c in comps])
    counts = np.zeros((S, A))
    n_per = np.zeros(K)
    scale = reward.rmax / (1.0 - cmp.discount)
    trace = OptimistTrace()
    choice = 0
    ss = np.random.SeedSequence(seed)
    for t, child in enumerate(ss.spawn(iterations), start=1):
        s = int(child.generate_state(1)[0])
        if horizon:
            batch = sample_trajectories(cmp, comps[choice], s, max(1, per_iter_samples // horizon), horizon)
        else:
            batch = sample_discounted(cmp, comps[choice], s, per_iter_samples)
        trace.chosen.append(choice)
        trace.J.append(float(Js[choice]))
        counts += batch.counts(S, A)
        n_per[choice] += len(batch)
        N = n_per.sum()
        mix = np.einsum("k,ksa->sa", n_per / N, occs)
        inv = np.where(mix >= DIVERGENCE_FLOOR, 1.0 / np.maximum(mix, DIVERGENCE_FLOOR), 0.0)
        w = np.minimum(occs * inv, truncation(int(N)))  # (K, S, A)
        est = np.einsum("ksa,sa->k", w, counts * reward.table) / ((1.0 - cmp.discount) * N)
        div = np.array([renyi2_arrays(o, mix) for o in occs])
        bonus = scale * np.sqrt(div * math.log(1.0 / delta_schedule(t, K)) / N)
        trace.estimates.append(est)
        trace.bonuses.append(bonus)
        ucb = est + bonus
        finite = np.isfinite(ucb)
        ucb = np.where(finite, ucb, np.inf)
        choice = int(np.flatnonzero(ucb == ucb.max())[0])
    return trace


__all__ = [
    "BestInSet",
    "EvalResult",
    "InfiniteDivergenceError",
    "OffPolicyResult",
    "OptimistTrace",
    "RewardFn",
    "best_in_set",
    "chebyshev_radius",
    "default_truncation",
    "epsilon_greedy",
    "exact_return",
    "is_estimate",
    "mis_estimate",
    "mixture_occupancy",
    "offpolicy_optimize",
    "optimistic_select",
    "policy_iteration",
    "shared_probability_grid",
]
