"""Scenario simulation over forked worlds.

A scenario is runtime data (JSON), not model schema: a base world, an
ordered list of hypothetical actions, a query time, and an optional
ranking metric.  Running it forks the base, applies the actions,
refines the fork, and reports the divergence; the base world is never
touched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from . import dsl
from .engine import RefinementEngine, RefinementReport, TaskFailure, eval_expr
from .store import ROOT_WORLD, Store


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class Action:
    type: str  # "set" | "connect" | "disconnect"
    node: str
    t: int
    attr: Optional[str] = None
    value: Optional[float] = None
    rel: Optional[str] = None
    target: Optional[str] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    base: int
    actions: tuple
    query_t: Optional[int] = None
    metric: Optional[str] = None
    metric_node: Optional[str] = None


@dataclass
class ScenarioResult:
    scenario: Scenario
    world: int
    report: RefinementReport
    divergence: list = field(default_factory=list)
    metric_value: Optional[float] = None


_ACTION_TYPES = {"set", "connect", "disconnect"}


def parse_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid scenario JSON: {exc}")
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    base_raw = doc.get("base", "root")
    base = ROOT_WORLD if base_raw == "root" else int(base_raw)
    actions = []
    for i, a in enumerate(doc.get("actions", [])):
        atype = a.get("type")
        if atype not in _ACTION_TYPES:
            raise ScenarioError(f"action {i}: unknown type {atype!r}")
        if "node" not in a or "t" not in a:
            raise ScenarioError(f"action {i}: 'node' and 't' are required")
        if atype == "set":
            if "attr" not in a or "value" not in a:
                raise ScenarioError(f"action {i}: set requires 'attr' and 'value'")
            actions.append(Action("set", a["node"], int(a["t"]),
                                  attr=a["attr"], value=a["value"]))
        else:
            if "rel" not in a or "target" not in a:
                raise ScenarioError(f"action {i}: {atype} requires 'rel' and 'target'")
            actions.append(Action(atype, a["node"], int(a["t"]),
                                  rel=a["rel"], target=a["target"]))
    query_t = doc.get("queryT")
    return Scenario(
        name=doc.get("name", "scenario"),
        base=base,
        actions=tuple(actions),
        query_t=int(query_t) if query_t is not None else None,
        metric=doc.get("metric"),
        metric_node=doc.get("metricNode"),
    )


def apply_action(store: Store, wid: int, action: Action):
    nid = store.node_by_name(action.node)
    if action.type == "set":
        store.set_attribute(wid, nid, action.attr, action.t, action.value)
    else:
        target = store.node_by_name(action.target)
        if action.type == "connect":
            store.add_relation(wid, nid, action.rel, target, action.t)
        else:
            store.remove_relation(wid, nid, action.rel, target, action.t)


def run_scenario(store: Store, engine: RefinementEngine, scenario: Scenario,
                 query_t: Optional[int] = None,
                 nodes: Optional[set] = None,
                 members: Optional[set] = None) -> ScenarioResult:
    if query_t is None:
        query_t = scenario.query_t
    if query_t is None:
        if scenario.actions:
            query_t = max(a.t for a in scenario.actions)
        else:
            query_t = 0
    fork = engine.fork_world(scenario.base)
    for action in scenario.actions:
        apply_action(store, fork, action)
    report = engine.refine(fork)
    divergence = store.diff_worlds(scenario.base, fork, query_t,
                                   nodes=nodes, members=members)
    result = ScenarioResult(scenario, fork, report, divergence)
    if scenario.metric:
        result.metric_value = eval_metric(store, fork, scenario, query_t)
    return result


def eval_metric(store: Store, wid: int, scenario: Scenario, query_t: int) -> float:
    if not scenario.metric_node:
        raise ScenarioError("scenario metric requires 'metricNode'")
    try:
        expr = dsl.parse_expr(scenario.metric)
    except dsl.DslError as exc:
        raise ScenarioError(f"bad metric expression: {exc}")
    nid = store.node_by_name(scenario.metric_node)
    try:
        return float(eval_expr(expr, store, wid, nid, query_t))
    except TaskFailure as exc:
        raise ScenarioError(f"metric evaluation failed: {exc.reason}")


def compare_scenarios(results: list[ScenarioResult]) -> list[ScenarioResult]:
    """Stable ascending order by metric value; ties keep input order."""
    bases = {r.scenario.base for r in results}
    if len(bases) > 1:
        raise ScenarioError("scenarios must share one base world")
    for r in results:
        if r.metric_value is None:
            raise ScenarioError(f"scenario {r.scenario.name!r} has no metric value")
    return sorted(results, key=lambda r: r.metric_value)
