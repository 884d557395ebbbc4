"""Grow-and-certify loop: add a leader component, play the cover game, check the LP bound."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cmp import ConfigurationError, PolicyParams, TabularCmp
from .game import CoverSet, DseReport, GdaConfig, dse_check, gda_round
from .guarantee import cover_guarantee

log = logging.getLogger(__name__)

NEW_COMPONENT_RULES = ("split", "best_response")


@dataclass
class CompressionReport:
    cover: CoverSet
    sigma: float
    cover_bound_trace: list[float] = field(default_factory=list)  # B per round
    lp_value_trace: list[float] = field(default_factory=list)  # V per round
    z_estimate_trace: list[float] = field(default_factory=list)
    epochs_per_round: list[int] = field(default_factory=list)
    round_converged: list[bool] = field(default_factory=list)
    dse: list[DseReport] = field(default_factory=list)
    seed: int = 0
    converged: bool = False

    @property
    def K(self) -> int:
        return self.cover.K

    @property
    def cover_bound(self) -> float:
        return self.cover_bound_trace[-1]


def _new_component(rule: str, comps: list[PolicyParams], trace, rng: np.random.Generator) -> PolicyParams:
    S, A = comps[0].logits.shape
    if rule == "best_response":
        return trace.best_response.follower
    # split the component the adversary was attacking, with a small perturbation
    base = comps[trace.best_response.active_index]
    return PolicyParams.from_free(base.free + rng.normal(0.0, 0.1, base.free.size), S, A)


def compress(cmp: TabularCmp, sigma: float, cfg: GdaConfig | None = None, seed: int = 0,
             k_cap: int = 16, z_restarts: int = 8, new_component: str = "split",
             check_dse: bool = True) -> CompressionReport:
    """Find a leader whose certified bound ``B`` is at most ``sigma``.

    Every round adds one component, runs :func:`gda_round` and solves the
    guarantee LP.  Stops at the first round with ``B <= sigma`` or after
    ``k_cap`` components (``converged=False``).
    """
    if not sigma > 1.0:
        raise ConfigurationError(f"sigma must exceed 1 (divergences are >= 1), got {sigma}")
    if k_cap < 1:
        raise ConfigurationError("k_cap must be at least 1")
    if new_component not in NEW_COMPONENT_RULES:
        raise ConfigurationError(f"new_component must be one of {NEW_COMPONENT_RULES}")
    cfg = cfg or GdaConfig()
    rng = np.random.default_rng(seed)
    S, A = cmp.n_states, cmp.n_actions
    comps = [PolicyParams.from_free(rng.normal(0.0, cfg.init_scale, S * (A - 1)), S, A)]
    report = CompressionReport(CoverSet(comps), float(sigma), seed=seed)
    pool, trace, epochs = None, None, 0
    for K in range(1, k_cap + 1):
        if K > 1:
            comps = comps + [_new_component(new_component, comps, trace, rng)]
        cover, trace = gda_round(cmp, CoverSet(comps, epochs), cfg, seed=seed * 1000 + K, follower_pool=pool)
        comps, pool, epochs = list(cover.components), trace.follower_pool, cover.epochs
        g = cover_guarantee(cmp, comps, z_restarts=z_restarts, seed=seed, cfg=cfg)
        report.cover = cover
        report.cover_bound_trace.append(float(g.cover_bound))
        report.lp_value_trace.append(float(g.lp_root_value))
        report.z_estimate_trace.append(float(g.z_estimate))
        report.epochs_per_round.append(trace.epochs)
        report.round_converged.append(trace.converged)
        if check_dse and trace.best_response is not None:
            report.dse.append(dse_check(cmp, comps, trace.best_response.follower, grad_tol=cfg.follower_tol))
        log.info("K=%d epochs=%d B=%.4f V=%.4f z=%.4f", K, trace.epochs, g.cover_bound,
                 g.lp_root_value, g.z_estimate)
        if g.cover_bound <= sigma:
            report.converged = True
            break
    return report


__all__ = ["NEW_COMPONENT_RULES", "CompressionReport", "compress"]
