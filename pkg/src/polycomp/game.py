"""Leader-follower dynamics of the cover game.

The follower maximises ``f(leader, mu) = min_k D2(d_mu || d_k)`` by gradient
ascent; the leader moves only the active component (the minimiser of that
min) one descent step per epoch.  The follower is run to (approximate)
stationarity before every leader step, i.e. the time-scale separation is
infinite.

All follower candidates (warm starts plus random restarts) are advanced in
lockstep as one stacked batch, which keeps the per-step numpy overhead
independent of the number of restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cmp import DIVERGENCE_FLOOR, Occupancy, PolicyParams, TabularCmp, occupancy, policy_probs, softmax
from .grad import linear_functional_grad, numeric_grad


@dataclass(frozen=True)
class GdaConfig:
    leader_rate: float = 0.005  # alpha
    follower_rate: float = 0.1  # beta
    follower_tol: float = 0.05  # inf-norm of the follower gradient
    follower_max_steps: int = 200  # cap for a fresh random restart
    warm_steps: int = 25  # cap for followers carried over from the last epoch
    leader_convergence_tol: float = 1e-3  # relative change of the windowed mean of f
    window: int = 10
    max_epochs: int = 1000
    min_epochs: int = 50
    restarts: int = 5  # random follower restarts per best-response call
    restart_every: int = 10  # epochs between fresh restarts inside a GDA round
    restart_scale: float = 2.0  # std of random restart logits
    init_scale: float = 0.1  # std of the first leader's logits

    def __post_init__(self):
        if self.leader_rate <= 0 or self.follower_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.follower_tol <= 0 or self.leader_convergence_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 0 or self.window < 1 or self.max_epochs < 1:
            raise ValueError("restarts >= 0, window >= 1 and max_epochs >= 1 required")

    @property
    def time_scale(self) -> float:
        return self.follower_rate / self.leader_rate


@dataclass
class CoverSet:
    components: list[PolicyParams]
    epochs: int = 0

    def __post_init__(self):
        if not self.components:
            raise ValueError("a cover set needs at least one policy")
        shape = self.components[0].logits.shape
        if any(c.logits.shape != shape for c in self.components):
            raise ValueError("cover components must share one shape")

    @property
    def K(self) -> int:
        return len(self.components)

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]


@dataclass
class BestResponse:
    follower: PolicyParams
    value: float
    active_index: int
    grad_norm: float
    converged: bool
    steps: int = 0


@dataclass
class RoundTrace:
    values: list[float] = field(default_factory=list)
    active: list[int] = field(default_factory=list)
    followers: list[np.ndarray] = field(default_factory=list)  # free logits of each epoch's best response
    converged: bool = False
    best_response: BestResponse | None = None
    follower_pool: np.ndarray | None = None

    @property
    def epochs(self) -> int:
        return len(self.values)


@dataclass
class DseReport:
    leader_grad_norm: float
    follower_grad_norm: float
    leader_hessian_min_eig: float
    follower_hessian_max_eig: float
    active_index: int
    is_dse: bool


def _components(leader) -> list[PolicyParams]:
    return list(leader.components) if hasattr(leader, "components") else list(leader)


def _stack_occ(occs: list[Occupancy]) -> np.ndarray:
    return np.stack([o.d_sa for o in occs])


def _batch_value_grad(cmp: TabularCmp, leader_dsa: np.ndarray, X: np.ndarray):
    """Values, active indices and follower gradients for a stack of followers.

    ``X`` has shape (R, S, A-1) of free logits; ``leader_dsa`` (K, S, A).
    """
    R = X.shape[0]
    S, A = cmp.n_states, cmp.n_actions
    gamma = cmp.discount
    logits = np.concatenate([X, np.zeros((R, S, 1))], axis=2)
    pi = softmax(logits)
    P_pi = np.einsum("rsa,sat->rst", pi, cmp.transition)
    M = np.eye(S) - gamma * np.swapaxes(P_pi, 1, 2)
    rhs = np.broadcast_to((1.0 - gamma) * cmp.init_dist, (R, S))[..., None]
    d_s = np.clip(np.linalg.solve(M, rhs)[..., 0], 0.0, None)
    d_sa = pi * d_s[..., None]

    low = leader_dsa < DIVERGENCE_FLOOR  # (K, S, A)
    inv = np.where(low, 0.0, 1.0 / np.maximum(leader_dsa, DIVERGENCE_FLOOR))
    D = np.einsum("rsa,ksa->rk", d_sa * d_sa, inv)
    bad = np.einsum("rsa,ksa->rk", (d_sa > 0).astype(float), low.astype(float)) > 0
    D[bad] = np.inf
    k = np.argmin(D, axis=1)
    value = D[np.arange(R), k]

    coef = 2.0 * d_sa * inv[k]
    cpi = (coef * pi).sum(axis=2)
    lam = np.linalg.solve(np.swapaxes(M, 1, 2), cpi[..., None])[..., 0]
    P_lam = np.einsum("sat,rt->rsa", cmp.transition[:, :-1, :], lam)
    base = d_s[..., None] * pi[..., :-1]
    grad = base * (coef[..., :-1] - cpi[..., None]) + gamma * base * (
        P_lam - np.einsum("rst,rt->rs", P_pi, lam)[..., None]
    )
    grad[~np.isfinite(value)] = 0.0
    return value, k, grad


def ascend_batch(cmp: TabularCmp, leader_dsa: np.ndarray, X0: np.ndarray, rate: float,
                 tol: float, max_steps: np.ndarray | int):
    """Gradient ascent on every follower in ``X0`` until stationary or capped.

    ``max_steps`` may differ per follower.
    """
    X = np.array(X0, dtype=float)
    R = X.shape[0]
    caps = np.broadcast_to(np.asarray(max_steps), (R,))
    steps = np.zeros(R, dtype=int)
    active = np.ones(R, dtype=bool)
    value, k, grad = _batch_value_grad(cmp, leader_dsa, X)
    gnorm = np.abs(grad).reshape(R, -1).max(axis=1, initial=0.0)
    while True:
        active &= (gnorm > tol) & (steps < caps) & np.isfinite(value)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        X[idx] += rate * grad[idx]
        steps[idx] += 1
        v, kk, g = _batch_value_grad(cmp, leader_dsa, X[idx])
        value[idx], k[idx], grad[idx] = v, kk, g
        gnorm[idx] = np.abs(g).reshape(idx.size, -1).max(axis=1, initial=0.0)
    return X, value, k, gnorm, steps


def _select(values: np.ndarray) -> int:
    """Highest value, lowest candidate index on ties."""
    return int(np.flatnonzero(values == values.max())[0])


def best_response_candidates(cmp: TabularCmp, leader, inits: list[PolicyParams], cfg: GdaConfig,
                             max_steps: int | None = None) -> list[BestResponse]:
    comps = _components(leader)
    leader_dsa = _stack_occ([occupancy(cmp, c) for c in comps])
    S, A = cmp.n_states, cmp.n_actions
    X0 = np.stack([p.logits[:, :-1] for p in inits])
    X, value, k, gnorm, steps = ascend_batch(
        cmp, leader_dsa, X0, cfg.follower_rate, cfg.follower_tol,
        cfg.follower_max_steps if max_steps is None else max_steps,
    )
    return [
        BestResponse(PolicyParams.from_free(X[r].ravel(), S, A), float(value[r]), int(k[r]),
                     float(gnorm[r]), bool(gnorm[r] <= cfg.follower_tol), int(steps[r]))
        for r in range(len(inits))
    ]


def best_response(cmp: TabularCmp, leader, follower_init: PolicyParams, cfg: GdaConfig | None = None,
                  seed: int = 0) -> BestResponse:
    """Follower ascent from ``follower_init`` plus ``cfg.restarts`` random starts.

    Returns the candidate with the highest cover value.  ``converged`` is
    False when the chosen candidate stopped on the step cap.
    """
    cfg = cfg or GdaConfig()
    S, A = cmp.n_states, cmp.n_actions
    rng = np.random.default_rng(seed)
    inits = [follower_init] + [
        PolicyParams.from_free(rng.normal(0.0, cfg.restart_scale, S * (A - 1)), S, A)
        for _ in range(cfg.restarts)
    ]
    cands = best_response_candidates(cmp, leader, inits, cfg)
    return cands[_select(np.array([c.value for c in cands]))]


def leader_step_gradient(cmp: TabularCmp, component: PolicyParams, follower_occ: Occupancy) -> np.ndarray:
    """Gradient of ``D2(d_follower || d_component)`` w.r.t. the component's logits."""
    pi = policy_probs(cmp, component)
    occ = occupancy(cmp, component)
    b = occ.d_sa
    w = np.where(b >= DIVERGENCE_FLOOR, follower_occ.d_sa / np.maximum(b, DIVERGENCE_FLOOR), 0.0)
    _, g = linear_functional_grad(cmp, pi, -(w * w))
    return g


def gda_round(cmp: TabularCmp, leader: CoverSet, cfg: GdaConfig | None = None, seed: int = 0,
              follower_pool: np.ndarray | None = None) -> tuple[CoverSet, RoundTrace]:
    """Run GDA epochs for a fixed number of leader components.

    Each epoch: best response (pool of warm-started followers, refreshed with
    random restarts every ``restart_every`` epochs), then one descent step of
    rate ``leader_rate`` on the active component.  Stops when the mean cover
    value over the last ``window`` epochs moves by less than
    ``leader_convergence_tol`` (relative) against the preceding window, or at
    ``max_epochs``.
    """
    cfg = cfg or GdaConfig()
    rng = np.random.default_rng(seed)
    S, A = cmp.n_states, cmp.n_actions
    comps = [c.logits[:, :-1].copy() for c in _components(leader)]
    n_fresh = max(cfg.restarts, 1)

    def fresh(n):
        return rng.normal(0.0, cfg.restart_scale, size=(n, S, A - 1))

    pool = fresh(n_fresh) if follower_pool is None else np.array(follower_pool, dtype=float)
    pool_caps = np.full(pool.shape[0], cfg.follower_max_steps)
    trace = RoundTrace()
    W = cfg.window
    for epoch in range(cfg.max_epochs):
        if epoch > 0 and epoch % cfg.restart_every == 0:
            # keep the best half of the pool, refill with fresh restarts
            order = np.argsort(-last_values, kind="stable")
            keep = pool[order[: max(1, pool.shape[0] - n_fresh)]]
            pool = np.concatenate([keep, fresh(n_fresh)])
            pool_caps = np.concatenate([np.full(keep.shape[0], cfg.warm_steps),
                                        np.full(n_fresh, cfg.follower_max_steps)])
        leader_occ = [occupancy(cmp, PolicyParams.from_free(c.ravel(), S, A)) for c in comps]
        pool, values, ks, gnorm, _ = ascend_batch(
            cmp, _stack_occ(leader_occ), pool, cfg.follower_rate, cfg.follower_tol, pool_caps
        )
        pool_caps = np.full(pool.shape[0], cfg.warm_steps)
        last_values = values
        r = _select(values)
        k = int(ks[r])
        follower = PolicyParams.from_free(pool[r].ravel(), S, A)
        trace.values.append(float(values[r]))
        trace.active.append(k)
        trace.followers.append(pool[r].ravel().copy())
        trace.best_response = BestResponse(follower, float(values[r]), k, float(gnorm[r]),
                                           bool(gnorm[r] <= cfg.follower_tol))
        if not np.isfinite(values[r]):
            break
        if values[r] <= 1.0 + 1e-12:
            # the follower is covered exactly; D2 >= 1 leaves nothing to improve
            trace.converged = True
            break
        g = leader_step_gradient(cmp, PolicyParams.from_free(comps[k].ravel(), S, A), occupancy(cmp, follower))
        comps[k] = comps[k] - cfg.leader_rate * g.reshape(S, A - 1)

        n = len(trace.values)
        if n >= max(cfg.min_epochs, 2 * W):
            cur = np.mean(trace.values[-W:])
            prev = np.mean(trace.values[-2 * W:-W])
            if abs(cur - prev) <= cfg.leader_convergence_tol * max(abs(prev), 1.0):
                trace.converged = True
                break
    trace.follower_pool = pool
    new = CoverSet([PolicyParams.from_free(c.ravel(), S, A) for c in comps], leader.epochs + len(trace.values))
    return new, trace


def cover_objective(cmp: TabularCmp, leader, follower: PolicyParams) -> float:
    from .cmp import cover_value
    return cover_value(cmp, _components(leader), follower)[0]


def _hessian_fd(fun, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    n = x.size
    H = np.empty((n, n))
    f0 = fun(x)
    E = np.eye(n) * h
    for i in range(n):
        H[i, i] = (fun(x + E[i]) - 2 * f0 + fun(x - E[i])) / (h * h)
        for j in range(i + 1, n):
            H[i, j] = H[j, i] = (
                fun(x + E[i] + E[j]) - fun(x + E[i] - E[j]) - fun(x - E[i] + E[j]) + fun(x - E[i] - E[j])
            ) / (4 * h * h)
    return H


def dse_check(cmp: TabularCmp, leader, follower: PolicyParams, grad_tol: float = 0.05,
              eig_tol: float = 1e-6, h: float = 1e-3) -> DseReport:
    """First- and second-order test of a differential Stackelberg point.

    The leader block (active component) must be positive semidefinite and the
    follower block negative semidefinite, each up to ``eig_tol``; gradients
    must be below ``grad_tol`` in inf-norm.
    """
    comps = _components(leader)
    S, A = cmp.n_states, cmp.n_actions
    f_occ = occupancy(cmp, follower)
    leader_occ = [occupancy(cmp, c) for c in comps]
    from .cmp import cover_value_occ, renyi2_arrays

    _, k = cover_value_occ(leader_occ, f_occ)
    g_leader = leader_step_gradient(cmp, comps[k], f_occ)
    _, _, g_f = _batch_value_grad(cmp, _stack_occ(leader_occ), follower.logits[None, :, :-1])
    g_follower = g_f[0].ravel()

    def f_leader(x):
        d = occupancy(cmp, PolicyParams.from_free(x, S, A)).d_sa
        return renyi2_arrays(f_occ.d_sa, d)

    def f_follower(x):
        d = occupancy(cmp, PolicyParams.from_free(x, S, A)).d_sa
        return renyi2_arrays(d, leader_occ[k].d_sa)

    H_l = _hessian_fd(f_leader, comps[k].free, h)
    H_f = _hessian_fd(f_follower, follower.free, h)
    # a parameter-free policy space has empty blocks, which pass vacuously
    lmin = float(np.linalg.eigvalsh(H_l).min(initial=np.inf)) if H_l.size else 0.0
    fmax = float(np.linalg.eigvalsh(H_f).max(initial=-np.inf)) if H_f.size else 0.0
    ln = float(np.abs(g_leader).max(initial=0.0))
    fn = float(np.abs(g_follower).max(initial=0.0))
    ok = ln <= grad_tol and fn <= grad_tol and lmin >= -eig_tol and fmax <= eig_tol
    return DseReport(ln, fn, lmin, fmax, int(k), bool(ok))


__all__ = [
    "BestResponse",
    "CoverSet",
    "DseReport",
    "GdaConfig",
    "RoundTrace",
    "ascend_batch",
    "best_response",
    "best_response_candidates",
    "cover_objective",
    "dse_check",
    "gda_round",
    "leader_step_gradient",
    "numeric_grad",
]
