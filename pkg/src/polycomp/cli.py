"""Batch command line: ``polycomp {compress,evaluate,optimize,inspect}``.

Exit codes: 0 success, 2 not converged, 64 usage error, 65 bad input data.
Set ``POLYCOMP_LOG`` (e.g. ``INFO`` or ``DEBUG``) for progress logging.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .cmp import PolicyParams, TabularCmp, policy_probs, random_policy, sample_discounted, sample_trajectories
from .envs import RiverSwimParams, gridworld, river_swim
from .game import GdaConfig
from .io import (
    TRACE_HEADER,
    CmpFormatError,
    CmpValidationError,
    dumps,
    load_cmp,
    load_report,
    report_to_dict,
    trace_rows,
    write_csv,
)
from .psca import compress
from .rl import (
    RewardFn,
    epsilon_greedy,
    exact_return,
    is_estimate,
    mis_estimate,
    optimistic_select,
    policy_iteration,
    shared_probability_grid,
)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_USAGE, EXIT_DATA = 0, 2, 64, 65
ENVS = ("river-swim", "grid-3x3")

log = logging.getLogger("polycomp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seeds(args) -> list[int]:
    if args.seeds:
        try:
            if "-" in args.seeds and "," not in args.seeds:
                lo, hi = (int(x) for x in args.seeds.split("-"))
                return list(range(lo, hi + 1))
            return [int(x) for x in args.seeds.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"cannot parse --seeds {args.seeds!r} (use '0-9' or '1,4,7')") from None
    return [args.seed]


def load_env(args) -> tuple[TabularCmp, RewardFn | None, dict]:
    """Resolve ``--env``/``--cmp-file`` and the ``--gamma`` override."""
    if args.cmp_file:
        cmp, reward, meta = load_cmp(args.cmp_file)
        env = {"file": str(args.cmp_file), "metadata": meta}
        if args.gamma is not None:
            cmp = TabularCmp(cmp.transition, cmp.init_dist, args.gamma, tol=1e-9)
    elif args.env == "river-swim":
        params = RiverSwimParams() if args.gamma is None else RiverSwimParams(discount=args.gamma)
        cmp, reward = river_swim(params)
        env = {"builtin": "river-swim", "params": params.to_dict()}
    elif args.env == "grid-3x3":
        cmp, reward = gridworld(3, 3, 0.95 if args.gamma is None else args.gamma), None
        env = {"builtin": "grid-3x3", "discount": cmp.discount}
    else:
        raise UsageError(f"unknown --env {args.env!r}; choose from {', '.join(ENVS)} or pass --cmp-file")
    env["discount"] = cmp.discount
    return cmp, reward, env


def gda_config(args) -> GdaConfig:
    kw = {}
    if args.alpha is not None:
        kw["leader_rate"] = args.alpha
    if args.beta is not None:
        kw["follower_rate"] = args.beta
    if args.restarts is not None:
        kw["restarts"] = args.restarts
    try:
        return GdaConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- compress


def _compress_one(job):
    cmp, sigma, cfg, seed, k_cap = job
    return compress(cmp, sigma, cfg, seed=seed, k_cap=k_cap)


def _map(fn, jobs, n_jobs):
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_compress(args) -> int:
    if not args.sigma > 1.0:
        raise UsageError(f"--sigma must exceed 1 (divergences are >= 1), got {args.sigma}")
    cmp, _, env = load_env(args)
    cfg = gda_config(args)
    seeds = _seeds(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = _map(_compress_one, [(cmp, args.sigma, cfg, s, args.max_k) for s in seeds], args.jobs)
    ok = True
    for seed, rep in zip(seeds, reports):
        (out / f"report_seed{seed}.json").write_text(dumps(report_to_dict(rep, cmp, cfg, env)))
        rows = list(trace_rows(rep))
        if args.format == "csv":
            write_csv(out / f"trace_seed{seed}.csv", TRACE_HEADER, rows)
        else:
            (out / f"trace_seed{seed}.json").write_text(dumps([dict(zip(TRACE_HEADER, r)) for r in rows]))
        print(f"seed {seed}: K={rep.K} B={rep.cover_bound:.6g} z={rep.z_estimate_trace[-1]:.6g} "
              f"converged={rep.converged}")
        ok &= rep.converged
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------- shared helpers


def _cover_from_args(args, cmp: TabularCmp) -> list[PolicyParams]:
    if args.report:
        rep, rcmp, _ = load_report(args.report)
        if rcmp.n_states != cmp.n_states or rcmp.n_actions != cmp.n_actions:
            raise CmpValidationError("report and environment have different shapes")
        return list(rep.cover.components)
    if not args.sigma > 1.0:
        raise UsageError(f"--sigma must exceed 1 (divergences are >= 1), got {args.sigma}")
    rep = compress(cmp, args.sigma, gda_config(args), seed=args.cover_seed, k_cap=args.max_k)
    return list(rep.cover.components)


def _need_reward(reward):
    if reward is None:
        raise CmpValidationError("this command needs a reward table (builtin river-swim or a file with 'reward')")
    return reward


def _sample(cmp, policy, seed, n, protocol, horizon, source):
    if protocol == "trajectories":
        return sample_trajectories(cmp, policy, seed, max(1, n // horizon), horizon, source)
    return sample_discounted(cmp, policy, seed, n, source)


# ---------------------------------------------------------------- evaluate

EVAL_HEADER = ("seed", "estimator", "behavior", "estimate", "exact", "abs_error", "divergence", "radius")


def evaluation_rows(cmp, reward, cover, seed, n, protocol="discounted", horizon=20, eps=0.1, delta=0.1):
    """IS rows for the target, each cover member and the uniform policy, then MIS rows."""
    pi_opt, _ = policy_iteration(cmp, reward)
    target = PolicyParams.from_probs(epsilon_greedy(pi_opt, eps))
    J = exact_return(cmp, reward, target)
    S, A = cmp.n_states, cmp.n_actions
    ss = np.random.SeedSequence(seed)
    behaviors = [("target", target)] + [(f"theta{k + 1}", c) for k, c in enumerate(cover)]
    behaviors.append(("uniform", PolicyParams.zeros(S, A)))
    rows = []
    keys = iter(ss.spawn(len(behaviors) + len(cover) + 4))

    def draw(policy, name):
        return _sample(cmp, policy, int(next(keys).generate_state(1)[0]), n, protocol, horizon, name)

    for name, pol in behaviors:
        r = is_estimate(cmp, reward, target, pol, draw(pol, name), delta)
        rows.append((seed, "IS", name, r.estimate, J, abs(r.estimate - J), r.divergence, r.bound_radius))
    rng = np.random.default_rng(next(keys))
    randoms = [random_policy(rng, S, A, 1.0) for _ in range(3)]
    for name, pols in (("mixture-cover", list(cover)), ("mixture-random3", randoms)):
        batches = [draw(p, name) for p in pols]
        r = mis_estimate(cmp, reward, target, pols, batches, delta)
        rows.append((seed, "MIS", name, r.estimate, J, abs(r.estimate - J), r.divergence, r.bound_radius))
    return rows


def _evaluate_one(job):
    return evaluation_rows(*job)


def cmd_evaluate(args) -> int:
    cmp, reward, _ = load_env(args)
    reward = _need_reward(reward)
    cover = _cover_from_args(args, cmp)
    seeds = _seeds(args)
    jobs = [(cmp, reward, cover, s, args.samples, args.protocol, args.horizon, args.eps) for s in seeds]
    rows = [r for part in _map(_evaluate_one, jobs, args.jobs) for r in part]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "evaluation.csv", EVAL_HEADER, rows)
    by = {}
    for r in rows:
        by.setdefault((r[1], r[2]), []).append(r[5])
    for (est, beh), errs in by.items():
        print(f"{est:4s} {beh:16s} mean |error| = {np.mean(errs):.4g}")
    return EXIT_OK


# ---------------------------------------------------------------- optimize

CURVE_HEADER = ("set", "iteration", "value", "ci_low", "ci_high")
RUN_HEADER = ("set", "seed", "iteration", "chosen", "J")


def _optimize_one(job):
    cmp, reward, sets, seed, iters, n, horizon = job
    out = {}
    for name, cands in sets.items():
        tr = optimistic_select(cmp, reward, cands, iters, n, seed=seed, horizon=horizon)
        out[name] = (tr.chosen, tr.J)
    return out


def cmd_optimize(args) -> int:
    cmp, reward, _ = load_env(args)
    reward = _need_reward(reward)
    cover = _cover_from_args(args, cmp)
    S, A = cmp.n_states, cmp.n_actions
    sets = {"cover": cover, "grid3": shared_probability_grid(S, A, 3), "grid20": shared_probability_grid(S, A, 20)}
    if A != 2:
        sets = {"cover": cover}
    seeds = _seeds(args)
    horizon = args.horizon if args.protocol == "trajectories" else None
    jobs = [(cmp, reward, sets, s, args.iterations, args.samples, horizon) for s in seeds]
    results = _map(_optimize_one, jobs, args.jobs)
    runs, curves = [], []
    for name in sets:
        M = np.array([res[name][1] for res in results])  # (seeds, iterations)
        for seed, res in zip(seeds, results):
            chosen, Js = res[name]
            runs.extend((name, seed, t + 1, c, j) for t, (c, j) in enumerate(zip(chosen, Js)))
        mean = M.mean(axis=0)
        half = 1.96 * M.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros_like(mean)
        curves.extend((name, t + 1, mean[t], mean[t] - half[t], mean[t] + half[t]) for t in range(len(mean)))
        print(f"{name:7s} final mean J = {mean[-1]:.4g}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "learning_curve.csv", CURVE_HEADER, curves)
    write_csv(out / "runs.csv", RUN_HEADER, runs)
    return EXIT_OK


# ---------------------------------------------------------------- inspect


def inspect_text(path) -> str:
    rep, cmp, doc = load_report(path)
    lines = [
        f"report: {path}",
        f"tool: {doc.get('tool', {}).get('name')} {doc.get('tool', {}).get('version')}",
        f"env: {doc.get('env', {}).get('builtin') or doc.get('env', {}).get('file', '?')}"
        f"  (S={cmp.n_states}, A={cmp.n_actions}, gamma={cmp.discount!r})",
        f"sigma: {rep.sigma!r}  seed: {rep.seed}  converged: {rep.converged}  K: {rep.K}",
        "round  K  V                    B                    z_estimate",
    ]
    for k, V, B, z, _ in trace_rows(rep):
        lines.append(f"{k:5d} {k:2d}  {V!r:20s} {B!r:20s} {z!r}")
    for k, comp in enumerate(rep.cover, start=1):
        pi = policy_probs(cmp, comp)
        lines.append(f"policy theta{k}: pi(a|s)")
        lines.append("  s  " + " ".join(f"a={a:<20d}" for a in range(cmp.n_actions)))
        for s in range(cmp.n_states):
            lines.append(f"{s:3d}  " + " ".join(f"{p!r:22s}" for p in pi[s].tolist()))
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    sys.stdout.write(inspect_text(args.path))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _env_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--env", default="river-swim", help=f"builtin environment ({', '.join(ENVS)})")
    g.add_argument("--cmp-file", help="CMP document (JSON)")
    p.add_argument("--gamma", type=float, help="override the discount factor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", help="seed list: '0-9' or '1,4,7' (overrides --seed)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")


def _cover_args(p):
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--alpha", type=float, help="leader learning rate")
    p.add_argument("--beta", type=float, help="follower learning rate")
    p.add_argument("--restarts", type=int, help="random follower restarts")
    p.add_argument("--max-k", type=int, default=16, help="cap on the number of cover policies")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="polycomp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="grow and certify a cover")
    _env_args(p)
    _cover_args(p)
    p.add_argument("--format", choices=("json", "csv"), default="csv", help="trace format")
    p.set_defaults(func=cmd_compress)

    for name, func, helptext in (("evaluate", cmd_evaluate, "IS/MIS evaluation errors"),
                                 ("optimize", cmd_optimize, "optimistic selection learning curves")):
        p = sub.add_parser(name, help=helptext)
        _env_args(p)
        _cover_args(p)
        p.add_argument("--report", help="take the cover from this report instead of compressing")
        p.add_argument("--cover-seed", type=int, default=0, help="seed for compressing when no --report")
        p.add_argument("--protocol", choices=("discounted", "trajectories"), default="discounted")
        p.add_argument("--horizon", type=int, default=20)
        p.add_argument("--format", choices=("csv",), default="csv")
        if name == "evaluate":
            p.add_argument("--samples", type=int, default=100_000, help="samples per behavior policy")
            p.add_argument("--eps", type=float, default=0.1, help="epsilon of the greedy target")
        else:
            p.add_argument("--samples", type=int, default=1000, help="samples per iteration")
            p.add_argument("--iterations", type=int, default=100)
        p.set_defaults(func=func)

    p = sub.add_parser("inspect", help="print a report as tables")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("POLYCOMP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"polycomp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CmpFormatError, CmpValidationError) as exc:
        print(f"polycomp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
