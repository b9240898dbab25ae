"""Scenario files: a market, constraint blocks and solver/OPIC settings in YAML.

Schema (version 1)::

    version: 1
    market:
      budgets: [1, 1]
      valuations: [[2, 1], [1, 2]]
      supplies: [1, 1]            # optional, defaults to ones
      buyer_groups: [C, U]        # optional
      item_groups: [A, B]         # optional
    constraints:                  # optional list of blocks
      - family: pbp               # buyers, items_A, items_B, alpha?
      - family: pip               # items, buyers_A, buyers_B, alpha?
      - family: aef               # buyers, items, floor
      - family: raw               # ineq / eq rows: {terms: [[i, j, coef]], rhs, label}
    interventions: [[0, 0], [0, 0]]   # optional fixed interventions
    solver: {tol: 1.0e-6, max_iters: 100, lp_rounds: 12,
             step_schedule: {kind: polynomial, c: 0.5, exponent: 0.5}}
    opic: {schedule: constant, rate: 0.2, rounds: 50}
    audit: {groups: [C, U], target_buyers: [0], protected_buyers: [0], protected_items: [1]}

Index sets may be lists of integers or a group label string, which selects
every buyer (or item) carrying that label.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from ..constraints import LinearConstraintSet, build_aef, build_pbp, build_pip, raw_constraints
from ..errors import ConstraintError, MarketError, ScenarioError
from ..market import Market
from ..opic import RateSchedule
from ..solver import SolverConfig, StepSchedule

SCHEMA_VERSION = 1
_FAMILY_KEYS = {
    "pbp": {"family", "buyers", "items_A", "items_B", "alpha"},
    "pip": {"family", "items", "buyers_A", "buyers_B", "alpha"},
    "aef": {"family", "buyers", "items", "floor"},
    "raw": {"family", "ineq", "eq"},
}
_SOLVER_KEYS = {"tol", "max_iters", "lp_rounds", "grid_ratio", "lp_method", "seed", "step_schedule"}
_OPIC_KEYS = {"schedule", "rate", "rounds"}
_AUDIT_KEYS = {"groups", "target_buyers", "protected_buyers", "protected_items"}


@dataclass(frozen=True)
class OpicSettings:
    schedule: str = "constant"
    rate: float = 0.2
    rounds: int = 50

    def rate_schedule(self) -> RateSchedule:
        return RateSchedule(self.schedule, self.rate)


@dataclass(eq=False)
class Scenario:
    """A validated scenario.  ``raw`` keeps the parsed document for round trips."""

    market: Market
    constraint_blocks: list
    constraints: LinearConstraintSet
    interventions: Optional[np.ndarray]
    solver: SolverConfig
    opic: OpicSettings
    audit: dict
    raw: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        same_iv = (self.interventions is None and other.interventions is None) or (
            self.interventions is not None and other.interventions is not None
            and np.array_equal(self.interventions, other.interventions))
        return (self.market == other.market and self.constraint_blocks == other.constraint_blocks
                and same_iv and self.solver == other.solver and self.opic == other.opic
                and self.audit == other.audit)


def _require_mapping(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ScenarioError(path, f"expected a mapping, got {type(obj).__name__}")
    return obj


def _unknown(obj: dict, allowed: set, path: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ScenarioError(f"{path}.{extra[0]}", "unknown key")


def _numbers(obj, path: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(obj, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(path, "expected numbers") from None
    if arr.ndim != ndim:
        raise ScenarioError(path, f"expected a {ndim}-d array of numbers")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(path, "values must be finite")
    return arr


def _index_set(obj, path: str, labels: Optional[tuple], upper: int) -> list:
    if isinstance(obj, str):
        if labels is None:
            raise ScenarioError(path, f"group label {obj!r} used but no group labels are defined")
        out = [k for k, g in enumerate(labels) if g == obj]
        if not out:
            raise ScenarioError(path, f"no member carries label {obj!r}")
        return out
    if not isinstance(obj, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in obj):
        raise ScenarioError(path, "expected a list of integer indices or a group label")
    for k, v in enumerate(obj):
        if not 0 <= v < upper:
            raise ScenarioError(f"{path}[{k}]", f"index {v} out of range 0..{upper - 1}")
    return list(obj)


def _parse_market(doc: dict) -> Market:
    m = _require_mapping(doc.get("market"), "market")
    _unknown(m, {"budgets", "valuations", "supplies", "buyer_groups", "item_groups"}, "market")
    for key in ("budgets", "valuations"):
        if key not in m:
            raise ScenarioError(f"market.{key}", "missing")
    v = _numbers(m["valuations"], "market.valuations", 2)
    b = _numbers(m["budgets"], "market.budgets", 1)
    s = _numbers(m["supplies"], "market.supplies", 1) if "supplies" in m else None
    try:
        return Market(b, v, s, m.get("buyer_groups"), m.get("item_groups"))
    except MarketError as exc:
        raise ScenarioError(f"market.{exc.field or ''}".rstrip("."), str(exc)) from None


def _build_block(market: Market, block: dict, path: str) -> LinearConstraintSet:
    fam = block.get("family")
    if fam not in _FAMILY_KEYS:
        raise ScenarioError(f"{path}.family", f"expected one of {sorted(_FAMILY_KEYS)}, got {fam!r}")
    _unknown(block, _FAMILY_KEYS[fam], path)
    n, m = market.valuations.shape
    bg, ig = market.buyer_groups, market.item_groups

    def need(key):
        if key not in block:
            raise ScenarioError(f"{path}.{key}", "missing")
        return block[key]

    try:
        if fam == "pbp":
            return build_pbp(market, _index_set(need("buyers"), f"{path}.buyers", bg, n),
                             _index_set(need("items_A"), f"{path}.items_A", ig, m),
                             _index_set(need("items_B"), f"{path}.items_B", ig, m), block.get("alpha"))
        if fam == "pip":
            return build_pip(market, _index_set(need("items"), f"{path}.items", ig, m),
                             _index_set(need("buyers_A"), f"{path}.buyers_A", bg, n),
                             _index_set(need("buyers_B"), f"{path}.buyers_B", bg, n), block.get("alpha"))
        if fam == "aef":
            return build_aef(market, _index_set(need("buyers"), f"{path}.buyers", bg, n),
                             _index_set(need("items"), f"{path}.items", ig, m), float(need("floor")))
        rows = {}
        for kind in ("ineq", "eq"):
            rows[kind] = block.get(kind, [])
            if not isinstance(rows[kind], list):
                raise ScenarioError(f"{path}.{kind}", "expected a list of rows")
            for k, row in enumerate(rows[kind]):
                _require_mapping(row, f"{path}.{kind}[{k}]")
                _unknown(row, {"terms", "rhs", "label"}, f"{path}.{kind}[{k}]")
                terms = row.get("terms")
                if not isinstance(terms, list) or not all(isinstance(t, list) and len(t) == 3 for t in terms):
                    raise ScenarioError(f"{path}.{kind}[{k}].terms", "expected a list of [buyer, item, coef]")
        return raw_constraints(market, rows["ineq"], rows["eq"])
    except (ConstraintError, MarketError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(path, str(exc)) from None


def scenario_from_dict(doc: Any) -> Scenario:
    """Validate a parsed document; errors name the offending field."""
    doc = _require_mapping(doc, "<root>")
    _unknown(doc, {"version", "market", "constraints", "interventions", "solver", "opic", "audit"}, "<root>")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError("version", f"unsupported schema version {version!r}")
    market = _parse_market(doc)
    blocks = doc.get("constraints") or []
    if isinstance(blocks, dict):
        blocks = [blocks]
    if not isinstance(blocks, list):
        raise ScenarioError("constraints", "expected a list of constraint blocks")
    cs = LinearConstraintSet.empty(market)
    for k, block in enumerate(blocks):
        cs = cs + _build_block(market, _require_mapping(block, f"constraints[{k}]"), f"constraints[{k}]")
    iv = None
    if doc.get("interventions") is not None:
        iv = _numbers(doc["interventions"], "interventions", 2)
        if iv.shape != market.valuations.shape:
            raise ScenarioError("interventions", f"expected shape {market.valuations.shape}, got {iv.shape}")
    sv = _require_mapping(doc.get("solver") or {}, "solver")
    _unknown(sv, _SOLVER_KEYS, "solver")
    try:
        sv = dict(sv)
        if "step_schedule" in sv:
            sv["step_schedule"] = StepSchedule(**_require_mapping(sv["step_schedule"], "solver.step_schedule"))
        solver = SolverConfig(**sv)
    except (TypeError, ValueError) as exc:
        raise ScenarioError("solver", str(exc)) from None
    op = _require_mapping(doc.get("opic") or {}, "opic")
    _unknown(op, _OPIC_KEYS, "opic")
    opic = OpicSettings(**op)
    try:
        opic.rate_schedule()
    except ValueError as exc:
        raise ScenarioError("opic", str(exc)) from None
    if not isinstance(opic.rounds, int) or opic.rounds < 1:
        raise ScenarioError("opic.rounds", "must be a positive integer")
    au = dict(_require_mapping(doc.get("audit") or {}, "audit"))
    _unknown(au, _AUDIT_KEYS, "audit")
    n, m = market.valuations.shape
    for key, upper, labels in (("target_buyers", n, market.buyer_groups), ("protected_buyers", n, market.buyer_groups),
                               ("protected_items", m, market.item_groups)):
        if key in au:
            au[key] = _index_set(au[key], f"audit.{key}", labels, upper)
    if "groups" in au:
        if not isinstance(au["groups"], list) or len(au["groups"]) != n:
            raise ScenarioError("audit.groups", f"expected {n} labels")
    return Scenario(market, copy.deepcopy(blocks), cs, iv, solver, opic, au, copy.deepcopy(doc))


def parse_scenario(text: str) -> Scenario:
    """Parse YAML text into a :class:`Scenario`."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "<yaml>"
        raise ScenarioError(where, f"invalid YAML: {getattr(exc, 'problem', exc)}") from None
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(str(path), f"cannot read scenario: {exc.strerror}") from None
    return parse_scenario(text)


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def scenario_to_dict(sc: Scenario) -> dict:
    """Canonical document for ``sc``; parsing it gives an equal scenario."""
    m = sc.market
    market = {"budgets": m.budgets.tolist(), "valuations": m.valuations.tolist(), "supplies": m.supplies.tolist()}
    if m.buyer_groups is not None:
        market["buyer_groups"] = list(m.buyer_groups)
    if m.item_groups is not None:
        market["item_groups"] = list(m.item_groups)
    doc = {"version": SCHEMA_VERSION, "market": market}
    if sc.constraint_blocks:
        doc["constraints"] = copy.deepcopy(sc.constraint_blocks)
    if sc.interventions is not None:
        doc["interventions"] = _plain(sc.interventions)
    cfg = sc.solver
    doc["solver"] = {"tol": cfg.tol, "max_iters": cfg.max_iters, "lp_rounds": cfg.lp_rounds,
                     "grid_ratio": cfg.grid_ratio, "lp_method": cfg.lp_method, "seed": cfg.seed,
                     "step_schedule": {"kind": cfg.step_schedule.kind, "c": cfg.step_schedule.c,
                                       "exponent": cfg.step_schedule.exponent}}
    doc["opic"] = {"schedule": sc.opic.schedule, "rate": sc.opic.rate, "rounds": sc.opic.rounds}
    if sc.audit:
        doc["audit"] = {k: _plain(v) for k, v in sc.audit.items()}
    return doc


def serialize_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
