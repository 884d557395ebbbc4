"""Built-in environments: River Swim chain and a deterministic Gridworld."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cmp import TabularCmp
from .rl import RewardFn

SWIM_DOWN, SWIM_UP = 0, 1
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3


@dataclass(frozen=True)
class RiverSwimParams:
    """Transition numbers for River Swim (the usual literature values)."""

    n_states: int = 6
    up_success: float = 0.35
    up_stay: float = 0.60
    up_fail: float = 0.05
    first_up_success: float = 0.35  # state 0: the rest stays
    last_up_stay: float = 0.60  # rightmost state: the rest drifts down
    discount: float = 0.95
    rmax: float = 100.0

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError("River Swim needs at least 2 states")
        probs = (self.up_success, self.up_stay, self.up_fail, self.first_up_success, self.last_up_stay)
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError("River Swim probabilities must lie in [0, 1]")
        if abs(self.up_success + self.up_stay + self.up_fail - 1.0) > 1e-12:
            raise ValueError("swim-up probabilities of middle states must sum to 1")
        if self.rmax <= 0:
            raise ValueError("rmax must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def river_swim(params: RiverSwimParams | None = None) -> tuple[TabularCmp, RewardFn]:
    """River Swim with swim-down = action 0 and swim-up = action 1.

    The reward pays ``rmax`` for swimming up in the rightmost state.
    """
    p = params or RiverSwimParams()
    n = p.n_states
    P = np.zeros((n, 2, n))
    for s in range(n):
        P[s, SWIM_DOWN, max(s - 1, 0)] = 1.0
        if s == 0:
            P[s, SWIM_UP, 1] = p.first_up_success
            P[s, SWIM_UP, 0] = 1.0 - p.first_up_success
        elif s == n - 1:
            P[s, SWIM_UP, s] = p.last_up_stay
            P[s, SWIM_UP, s - 1] = 1.0 - p.last_up_stay
        else:
            P[s, SWIM_UP, s + 1] = p.up_success
            P[s, SWIM_UP, s] = p.up_stay
            P[s, SWIM_UP, s - 1] = p.up_fail
    mu = np.zeros(n)
    mu[0] = 1.0
    R = np.zeros((n, 2))
    R[n - 1, SWIM_UP] = p.rmax
    return TabularCmp(P, mu, p.discount), RewardFn(R, p.rmax)


def gridworld(rows: int = 3, cols: int = 3, discount: float = 0.95) -> TabularCmp:
    """Deterministic grid; moves off the grid leave the agent in place.

    States are numbered row-major, actions are up/down/left/right.
    """
    if rows * cols < 2:
        raise ValueError("grid needs at least 2 cells")
    n = rows * cols
    P = np.zeros((n, 4, n))
    moves = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            for a, (dr, dc) in moves.items():
                nr, nc = r + dr, c + dc
                if not (0 <= nr < rows and 0 <= nc < cols):
                    nr, nc = r, c
                P[s, a, nr * cols + nc] = 1.0
    return TabularCmp(P, np.full(n, 1.0 / n), discount)


def single_state(n_actions: int, discount: float = 0.9) -> TabularCmp:
    """One state, every action loops back; the occupancy equals the policy."""
    return TabularCmp(np.ones((1, n_actions, 1)), np.ones(1), discount)


BUILTIN = {
    "river-swim": lambda: river_swim()[0],
    "grid-3x3": lambda: gridworld(3, 3),
}
