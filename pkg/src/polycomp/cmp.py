"""Tabular controlled Markov processes, softmax policies and occupancy measures.

Everything here is exact linear algebra on dense arrays: the discounted
state-action distribution of a policy is obtained from one linear solve, and
the exponentiated 2-Renyi divergence is a plain sum over state-action pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

DIST_TOL = 1e-12
# Behavior masses below this floor (with positive target mass) make D2 infinite.
DIVERGENCE_FLOOR = 1e-12


class DimensionError(ValueError):
    """Array shapes do not agree with the CMP."""


class ConfigurationError(ValueError):
    """The model cannot be used as configured (e.g. a singular flow system)."""


@dataclass(frozen=True, eq=False)
class TabularCmp:
    """A finite CMP: ``transition[s, a, s']``, ``init_dist[s]`` and ``discount``."""

    transition: np.ndarray
    init_dist: np.ndarray
    discount: float
    tol: float = field(default=DIST_TOL, repr=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        mu = np.array(self.init_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError(f"transition must have shape (S, A, S), got {P.shape}")
        if mu.shape != (P.shape[0],):
            raise DimensionError(f"init_dist must have shape ({P.shape[0]},), got {mu.shape}")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1), got {self.discount}")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            s, a, _ = np.argwhere(~(P >= 0))[0]
            raise ValueError(f"transition row (s={s}, a={a}) has a negative or non-finite entry")
        row_err = np.abs(P.sum(axis=2) - 1.0)
        if np.any(row_err > self.tol):
            s, a = np.argwhere(row_err > self.tol)[0]
            raise ValueError(
                f"transition row (s={s}, a={a}) sums to {P[s, a].sum():.17g}, not 1"
            )
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > self.tol:
            raise ValueError(f"init_dist must be a probability vector (sum={mu.sum():.17g})")
        P.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "init_dist", mu)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_free(self) -> int:
        """Number of free softmax logits (last action pinned to zero)."""
        return self.n_states * (self.n_actions - 1)

    def __eq__(self, other):
        if not isinstance(other, TabularCmp):
            return NotImplemented
        return (
            np.array_equal(self.transition, other.transition)
            and np.array_equal(self.init_dist, other.init_dist)
            and self.discount == other.discount
        )


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Softmax logits ``logits[s, a]``; the last column is pinned at 0."""

    logits: np.ndarray

    def __post_init__(self):
        th = np.array(self.logits, dtype=float)
        if th.ndim != 2:
            raise DimensionError(f"logits must be 2-D, got shape {th.shape}")
        if np.any(th[:, -1] != 0.0):
            raise ValueError("the last action's logit must be pinned at 0")
        if not np.all(np.isfinite(th)):
            raise ValueError("logits must be finite")
        th.setflags(write=False)
        object.__setattr__(self, "logits", th)

    @classmethod
    def from_free(cls, free: np.ndarray, n_states: int, n_actions: int) -> "PolicyParams":
        th = np.zeros((n_states, n_actions))
        th[:, :-1] = np.asarray(free, dtype=float).reshape(n_states, n_actions - 1)
        return cls(th)

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "PolicyParams":
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "PolicyParams":
        """Logits reproducing a strictly positive stochastic matrix."""
        lp = np.log(np.asarray(probs, dtype=float))
        return cls(lp - lp[:, -1:])

    @property
    def free(self) -> np.ndarray:
        return self.logits[:, :-1].ravel().copy()

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return np.array_equal(self.logits, other.logits)


@dataclass(frozen=True)
class Occupancy:
    """Discounted state and state-action distributions of one policy."""

    d_s: np.ndarray
    d_sa: np.ndarray  # shape (S, A)


@dataclass(frozen=True)
class SampleBatch:
    states: np.ndarray
    actions: np.ndarray
    source: str
    seed: int
    mode: str  # "discounted" or "fixed-horizon"
    horizon: int | None = None
    n_traj: int | None = None

    def __post_init__(self):
        if len(self.states) == 0 or len(self.states) != len(self.actions):
            raise ValueError("a sample batch needs matching, non-empty state/action arrays")

    def __len__(self):
        return len(self.states)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.states.tolist(), self.actions.tolist()))

    def counts(self, n_states: int, n_actions: int) -> np.ndarray:
        """Visit counts per state-action pair."""
        flat = np.bincount(self.states * n_actions + self.actions, minlength=n_states * n_actions)
        return flat.reshape(n_states, n_actions).astype(float)


def _check_policy(cmp: TabularCmp, params: PolicyParams):
    if params.logits.shape != (cmp.n_states, cmp.n_actions):
        raise DimensionError(
            f"policy logits have shape {params.logits.shape}, "
            f"CMP expects {(cmp.n_states, cmp.n_actions)}"
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_probs(cmp: TabularCmp, params: PolicyParams) -> np.ndarray:
    """Action probabilities ``pi[s, a]`` of a softmax policy."""
    _check_policy(cmp, params)
    return softmax(params.logits)


def state_transition(cmp: TabularCmp, pi: np.ndarray) -> np.ndarray:
    """Markov chain ``P_pi[s, s']`` induced by ``pi``."""
    return np.einsum("sa,sat->st", pi, cmp.transition)


def flow_matrix(cmp: TabularCmp, pi: np.ndarray) -> np.ndarray:
    """``I - gamma * P_pi^T``, the left-hand side of the state flow equation."""
    return np.eye(cmp.n_states) - cmp.discount * state_transition(cmp, pi).T


def lu_flow(cmp: TabularCmp, pi: np.ndarray):
    A = flow_matrix(cmp, pi)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    if np.any(np.abs(np.diag(lu)) < 1e-14):
        raise ConfigurationError("flow system is singular")
    return lu, piv


def occupancy_from_probs(cmp: TabularCmp, pi: np.ndarray) -> Occupancy:
    lu = lu_flow(cmp, pi)
    d_s = scipy.linalg.lu_solve(lu, (1.0 - cmp.discount) * cmp.init_dist, check_finite=False)
    d_s = np.clip(d_s, 0.0, None)
    return Occupancy(d_s=d_s, d_sa=pi * d_s[:, None])


def occupancy(cmp: TabularCmp, params: PolicyParams) -> Occupancy:
    """Exact discounted occupancy, counting the t=0 term so that it sums to 1."""
    return occupancy_from_probs(cmp, policy_probs(cmp, params))


def flow_residual(cmp: TabularCmp, d_sa: np.ndarray) -> np.ndarray:
    """Per-state Bellman-flow violation of a state-action vector."""
    inflow = np.einsum("sa,sat->t", d_sa, cmp.transition)
    return d_sa.sum(axis=1) - (1.0 - cmp.discount) * cmp.init_dist - cmp.discount * inflow


def renyi2_arrays(target: np.ndarray, behavior: np.ndarray, floor: float = DIVERGENCE_FLOOR) -> float:
    """Exponentiated 2-Renyi divergence ``sum target^2 / behavior``.

    Returns ``inf`` when target mass sits where the behavior mass is below
    ``floor``.
    """
    t = np.ravel(target)
    b = np.ravel(behavior)
    if t.shape != b.shape:
        raise DimensionError(f"distribution shapes differ: {t.shape} vs {b.shape}")
    low = b < floor
    if np.any(low & (t > 0)):
        return float("inf")
    keep = ~low
    return float(np.sum(t[keep] ** 2 / b[keep]))


def renyi2(target: Occupancy, behavior: Occupancy) -> float:
    return renyi2_arrays(target.d_sa, behavior.d_sa)


def cover_value_occ(leader_occ: Sequence[Occupancy], follower_occ: Occupancy) -> tuple[float, int]:
    """``min_k D2(follower || leader_k)`` and the lowest index attaining it."""
    values = [renyi2(follower_occ, occ) for occ in leader_occ]
    k = int(np.argmin(values))  # first minimum; all-inf gives index 0
    return values[k], k


def cover_value(cmp: TabularCmp, leader, follower: PolicyParams) -> tuple[float, int]:
    comps = leader.components if hasattr(leader, "components") else leader
    if len(comps) == 0:
        raise ValueError("leader must contain at least one policy")
    return cover_value_occ([occupancy(cmp, c) for c in comps], occupancy(cmp, follower))


def _next_states(rng: np.random.Generator, cum: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw; ``cum`` holds one cumulative row per sample."""
    u = rng.random(cum.shape[0])
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def sample_discounted(
    cmp: TabularCmp, params: PolicyParams, seed: int, n: int, source: str = "policy"
) -> SampleBatch:
    """Draw ``n`` i.i.d. pairs from the discounted occupancy.

    Each draw restarts from the initial distribution and follows the policy;
    the rollout continues with probability gamma after each step and the pair
    at which it stops is the sample.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pi = policy_probs(cmp, params)
    rng = np.random.default_rng(seed)
    cum_pi = np.cumsum(pi, axis=1)
    cum_P = np.cumsum(cmp.transition, axis=2)
    cum_mu = np.cumsum(cmp.init_dist)

    states = _next_states(rng, np.broadcast_to(cum_mu, (n, cmp.n_states)))
    out_s = np.empty(n, dtype=np.int64)
    out_a = np.empty(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        actions = _next_states(rng, cum_pi[states])
        stop = rng.random(active.size) >= cmp.discount
        out_s[active[stop]] = states[stop]
        out_a[active[stop]] = actions[stop]
        go = ~stop
        active = active[go]
        states = _next_states(rng, cum_P[states[go], actions[go]])
    return SampleBatch(out_s, out_a, source=source, seed=seed, mode="discounted")


def sample_trajectories(
    cmp: TabularCmp, params: PolicyParams, seed: int, n_traj: int, horizon: int,
    source: str = "policy",
) -> SampleBatch:
    """Roll out ``n_traj`` fixed-horizon trajectories; pairs are stored time-major."""
    if n_traj < 1 or horizon < 1:
        raise ValueError("n_traj and horizon must be >= 1")
    pi = policy_probs(cmp, params)
    rng = np.random.default_rng(seed)
    cum_pi = np.cumsum(pi, axis=1)
    cum_P = np.cumsum(cmp.transition, axis=2)
    states = _next_states(rng, np.broadcast_to(np.cumsum(cmp.init_dist), (n_traj, cmp.n_states)))
    out_s = np.empty((horizon, n_traj), dtype=np.int64)
    out_a = np.empty((horizon, n_traj), dtype=np.int64)
    for t in range(horizon):
        actions = _next_states(rng, cum_pi[states])
        out_s[t], out_a[t] = states, actions
        states = _next_states(rng, cum_P[states, actions])
    return SampleBatch(
        out_s.ravel(), out_a.ravel(), source=source, seed=seed,
        mode="fixed-horizon", horizon=horizon, n_traj=n_traj,
    )


def random_cmp(rng: np.random.Generator, n_states: int, n_actions: int,
               discount: float = 0.9, concentration: float = 1.0) -> TabularCmp:
    """Dirichlet-random CMP, handy for property tests and experiments."""
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_states))
    return TabularCmp(P, mu, discount)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int,
                  scale: float = 1.0) -> PolicyParams:
    return PolicyParams.from_free(
        rng.normal(0.0, scale, size=n_states * (n_actions - 1)), n_states, n_actions
    )
