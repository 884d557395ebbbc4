"""JSON documents for CMPs and compression reports, plus CSV helpers.

CMP document (``format_version`` 1)::

    {"format_version": 1, "n_states": S, "n_actions": A, "discount": g,
     "init_dist": [...S floats],
     "transition": [...S*A*S floats, s-major, a-major, s'-minor],
     "reward": {"table": [...S*A floats], "rmax": r},     # optional
     "metadata": {...}}                                   # optional

Floats are written with Python's shortest round-trip repr, so a save/load
cycle reproduces every array bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import __version__
from .cmp import PolicyParams, TabularCmp, occupancy
from .game import CoverSet, DseReport, GdaConfig
from .psca import CompressionReport
from .rl import RewardFn

FORMAT_VERSION = 1
FILE_TOL = 1e-9


class CmpFormatError(ValueError):
    """Malformed document; the message carries the line/column or field path."""


class CmpValidationError(ValueError):
    """Well-formed document describing an invalid CMP."""


def _parse(text: str, source: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CmpFormatError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CmpFormatError(f"{source}: line 1 column 1: top level must be an object")
    return doc


def _field(doc: dict, key: str, kind, source: str, where: str = ""):
    path = f"{where}{key}"
    if key not in doc:
        raise CmpFormatError(f"{source}: missing field '{path}'")
    val = doc[key]
    if kind is int and not (isinstance(val, int) and not isinstance(val, bool)):
        raise CmpFormatError(f"{source}: field '{path}' must be an integer")
    if kind is float and not (isinstance(val, (int, float)) and not isinstance(val, bool)):
        raise CmpFormatError(f"{source}: field '{path}' must be a number")
    if kind is list and not isinstance(val, list):
        raise CmpFormatError(f"{source}: field '{path}' must be an array")
    if kind is dict and not isinstance(val, dict):
        raise CmpFormatError(f"{source}: field '{path}' must be an object")
    return val


def _numbers(doc: dict, key: str, n: int, source: str, where: str = "") -> np.ndarray:
    vals = _field(doc, key, list, source, where)
    if len(vals) != n:
        raise CmpFormatError(f"{source}: field '{where}{key}' needs {n} numbers, got {len(vals)}")
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise CmpFormatError(f"{source}: field '{where}{key}[{i}]' is not a number")
    return np.array(vals, dtype=float)


def cmp_from_dict(doc: dict, source: str = "<document>") -> tuple[TabularCmp, RewardFn | None, dict]:
    version = _field(doc, "format_version", int, source)
    if version != FORMAT_VERSION:
        raise CmpFormatError(f"{source}: unsupported format_version {version}")
    S = _field(doc, "n_states", int, source)
    A = _field(doc, "n_actions", int, source)
    if S < 1 or A < 1:
        raise CmpFormatError(f"{source}: n_states and n_actions must be positive")
    gamma = float(_field(doc, "discount", float, source))
    mu = _numbers(doc, "init_dist", S, source)
    P = _numbers(doc, "transition", S * A * S, source).reshape(S, A, S)
    try:
        cmp = TabularCmp(P, mu, gamma, tol=FILE_TOL)
    except ValueError as exc:
        raise CmpValidationError(f"{source}: {exc}") from None
    reward = None
    if "reward" in doc and doc["reward"] is not None:
        rdoc = _field(doc, "reward", dict, source)
        table = _numbers(rdoc, "table", S * A, source, "reward.").reshape(S, A)
        rmax = float(_field(rdoc, "rmax", float, source, "reward."))
        try:
            reward = RewardFn(table, rmax)
        except ValueError as exc:
            raise CmpValidationError(f"{source}: reward: {exc}") from None
    meta = doc.get("metadata") or {}
    if not isinstance(meta, dict):
        raise CmpFormatError(f"{source}: field 'metadata' must be an object")
    return cmp, reward, meta


def cmp_to_dict(cmp: TabularCmp, reward: RewardFn | None = None, metadata: dict | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "n_states": cmp.n_states,
        "n_actions": cmp.n_actions,
        "discount": cmp.discount,
        "init_dist": cmp.init_dist.tolist(),
        "transition": cmp.transition.ravel().tolist(),
    }
    if reward is not None:
        doc["reward"] = {"table": reward.table.ravel().tolist(), "rmax": reward.rmax}
    if metadata:
        doc["metadata"] = metadata
    return doc


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=1) + "\n"


def load_cmp(path: str | Path) -> tuple[TabularCmp, RewardFn | None, dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CmpFormatError(f"{path}: cannot read ({exc.strerror})") from None
    return cmp_from_dict(_parse(text, str(path)), str(path))


def save_cmp(path: str | Path, cmp: TabularCmp, reward: RewardFn | None = None,
             metadata: dict | None = None) -> None:
    Path(path).write_text(dumps(cmp_to_dict(cmp, reward, metadata)))


# ---------------------------------------------------------------- reports


def report_to_dict(report: CompressionReport, cmp: TabularCmp, cfg: GdaConfig | None = None,
                   env: dict | None = None) -> dict:
    comps = list(report.cover.components)
    return {
        "format_version": FORMAT_VERSION,
        "kind": "compression-report",
        "tool": {"name": "polycomp", "version": __version__},
        "env": env or {},
        "cmp": cmp_to_dict(cmp),
        "config": dataclasses.asdict(cfg or GdaConfig()),
        "sigma": report.sigma,
        "seed": report.seed,
        "converged": report.converged,
        "K": report.K,
        "epochs": report.cover.epochs,
        "components": [c.logits.tolist() for c in comps],
        "occupancies": [occupancy(cmp, c).d_sa.tolist() for c in comps],
        "traces": {
            "cover_bound": report.cover_bound_trace,
            "lp_value": report.lp_value_trace,
            "z_estimate": report.z_estimate_trace,
            "epochs": report.epochs_per_round,
            "round_converged": report.round_converged,
        },
        "dse": [dataclasses.asdict(d) for d in report.dse],
    }


def save_report(path: str | Path, report: CompressionReport, cmp: TabularCmp,
                cfg: GdaConfig | None = None, env: dict | None = None) -> None:
    """Write the report; identical inputs give identical bytes (no timestamps)."""
    Path(path).write_text(dumps(report_to_dict(report, cmp, cfg, env)))


def report_from_dict(doc: dict, source: str = "<report>") -> tuple[CompressionReport, TabularCmp, dict]:
    if doc.get("kind") != "compression-report":
        raise CmpFormatError(f"{source}: field 'kind' must be 'compression-report'")
    cmp, _, _ = cmp_from_dict(_field(doc, "cmp", dict, source), f"{source}: cmp")
    comps = []
    for i, logits in enumerate(_field(doc, "components", list, source)):
        try:
            comps.append(PolicyParams(np.array(logits, dtype=float)))
        except (ValueError, TypeError) as exc:
            raise CmpFormatError(f"{source}: field 'components[{i}]': {exc}") from None
    traces = _field(doc, "traces", dict, source)
    rep = CompressionReport(
        cover=CoverSet(comps, int(doc.get("epochs", 0))),
        sigma=float(_field(doc, "sigma", float, source)),
        cover_bound_trace=list(traces.get("cover_bound", [])),
        lp_value_trace=list(traces.get("lp_value", [])),
        z_estimate_trace=list(traces.get("z_estimate", [])),
        epochs_per_round=list(traces.get("epochs", [])),
        round_converged=list(traces.get("round_converged", [])),
        dse=[DseReport(**d) for d in doc.get("dse", [])],
        seed=int(_field(doc, "seed", int, source)),
        converged=bool(_field(doc, "converged", bool, source)),
    )
    return rep, cmp, doc


def load_report(path: str | Path) -> tuple[CompressionReport, TabularCmp, dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CmpFormatError(f"{path}: cannot read ({exc.strerror})") from None
    return report_from_dict(_parse(text, str(path)), str(path))


# ---------------------------------------------------------------- csv


def _cell(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def csv_text(header: Iterable[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    Path(path).write_text(csv_text(header, rows))


def trace_rows(report: CompressionReport):
    """``(K, V, B, z_estimate, epochs)`` per round."""
    for i, (V, B, z, ep) in enumerate(zip(report.lp_value_trace, report.cover_bound_trace,
                                          report.z_estimate_trace, report.epochs_per_round), start=1):
        yield i, float(V), float(B), float(z), int(ep)


TRACE_HEADER = ("K", "V", "B", "z_estimate", "epochs")

__all__ = [
    "FORMAT_VERSION",
    "TRACE_HEADER",
    "CmpFormatError",
    "CmpValidationError",
    "cmp_from_dict",
    "cmp_to_dict",
    "csv_text",
    "load_cmp",
    "load_report",
    "report_from_dict",
    "report_to_dict",
    "save_cmp",
    "save_report",
    "trace_rows",
    "write_csv",
]
