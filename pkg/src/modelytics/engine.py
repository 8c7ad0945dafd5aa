"""Incremental refinement: recompute only what a write actually affects.

The engine listens to store writes.  Each write is mapped through the
class-level dependency edges to the instance-level dependents (via the
store's reverse reference index), which become dirty entries.  refine()
drains the dirty set in topological order, evaluating derived formulas
and feeding learned profiles; writes produced by refinement re-enter
the same loop, so one call reaches a fixpoint.

full_recompute() is the batch oracle the incremental path is measured
against: clear all outputs and profiles, then replay every raw write in
global sequence order.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

from . import dsl
from .profiler import INSUFFICIENT, ProfilerConfig
from .store import NOVALUE, Receipt, Store


class TaskFailure(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


@dataclass
class RefinementReport:
    tasks_run: int = 0
    values_written: int = 0
    failures: list = field(default_factory=list)

    def merge(self, other: "RefinementReport"):
        self.tasks_run += other.tasks_run
        self.values_written += other.values_written
        self.failures.extend(other.failures)

    def to_json(self) -> str:
        return json.dumps({"tasksRun": self.tasks_run,
                           "valuesWritten": self.values_written,
                           "failures": self.failures})


# ---------------------------------------------------------------------------
# Expression evaluation


def eval_expr(expr, store: Store, wid: int, nid: int, ts: int):
    """Evaluate a formula for one node at one time; raises TaskFailure."""
    if isinstance(expr, dsl.NumberLit):
        return expr.value if expr.is_float else int(expr.value)
    if isinstance(expr, dsl.TimestampRef):
        return ts
    if isinstance(expr, dsl.AttrRef):
        v = store.get_attribute(wid, nid, expr.name, ts)
        if v is NOVALUE:
            raise TaskFailure(f"no value for {store.node_label(nid)}.{expr.name} at t={ts}")
        return v
    if isinstance(expr, dsl.FuncCall):
        arg = eval_expr(expr.arg, store, wid, nid, ts)
        if expr.func == "ABS":
            return abs(arg)
        gran = dsl.TIME_FUNCTIONS[expr.func]
        if isinstance(arg, int):
            return arg // gran
        return math.floor(arg / gran)
    if isinstance(expr, dsl.BinaryOp):
        left = eval_expr(expr.left, store, wid, nid, ts)
        right = eval_expr(expr.right, store, wid, nid, ts)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if right == 0:
            raise TaskFailure(f"division by zero at t={ts}")
        return left / right
    if isinstance(expr, dsl.Aggregate):
        targets = store.get_relations(wid, nid, expr.relation, ts)
        values = []
        for tgt in targets:
            v = store.get_attribute(wid, tgt, expr.attribute, ts)
            if v is NOVALUE:
                raise TaskFailure(
                    f"no value for {store.node_label(tgt)}.{expr.attribute} at t={ts}")
            values.append(v)
        if expr.func == "SUM":
            return float(sum(values))
        if not values:
            raise TaskFailure(f"{expr.func} over empty relation {expr.relation!r}")
        if expr.func == "AVG":
            return float(sum(values)) / len(values)
        return float(max(values))
    raise TaskFailure(f"unknown expression node {expr!r}")


# ---------------------------------------------------------------------------
# Learned-member wiring


@dataclass(frozen=True)
class LearnedSpec:
    cls: str
    output: str
    dep_name: str
    value_expr: object
    cfg: ProfilerConfig


def _context_granularity(expr) -> int:
    gran = dsl.MS_PER_HOUR

    def walk(e):
        nonlocal gran
        if isinstance(e, dsl.FuncCall):
            if e.func == "DAYS":
                gran = dsl.MS_PER_DAY
            elif e.func == "HOURS":
                gran = dsl.MS_PER_HOUR
            walk(e.arg)
        elif isinstance(e, dsl.BinaryOp):
            walk(e.left)
            walk(e.right)

    walk(expr)
    return gran


def build_learned_specs(model: dsl.MetaModel, overrides: dict | None = None) -> dict:
    """Per-class wiring of learned members; overrides come from CLI config."""
    overrides = overrides or {}
    specs: dict[str, LearnedSpec] = {}
    for cls in model.classes:
        if cls.algorithm is None or len(cls.outputs) != 1:
            continue
        inputs = cls.inputs
        context = None
        for inp in inputs:
            if dsl.expr_uses_timestamp(inp.selector.expr):
                context = inp  # last time-valued input wins
        value_inp = None
        for inp in inputs:
            if inp is not context:
                value_inp = inp
                break
        if value_inp is None:
            continue  # no modeled value; tasks would have nothing to learn
        if context is not None:
            granularity = _context_granularity(context.selector.expr)
        else:
            granularity = dsl.MS_PER_HOUR
        if cls.resolution is not None:
            fn = "HOURS" if granularity == dsl.MS_PER_HOUR else "DAYS"
            slots = dsl.slot_count(cls.resolution, fn)
        else:
            slots = 1
        cfg = ProfilerConfig(
            k_max=overrides.get("k_max", 3),
            tau=overrides.get("tau", 3.0),
            theta=overrides.get("theta", 0.05),
            n_min=overrides.get("n_min", 20),
            var_floor=overrides.get("var_floor", 1e-6),
            slot_count=slots,
            granularity_ms=granularity,
            slot_offset_ms=overrides.get("slot_offset_ms", 0),
        )
        specs[cls.name] = LearnedSpec(cls.name, cls.outputs[0].name,
                                      value_inp.selector.dependency,
                                      value_inp.selector.expr, cfg)
    return specs


# ---------------------------------------------------------------------------
# Engine


class RefinementEngine:
    def __init__(self, store: Store, profiler_overrides: dict | None = None):
        self.store = store
        model = store.model
        self.edges_by_src: dict[tuple, list] = {}
        self.aggregates_by_rel: dict[tuple, list] = {}
        for edge in dsl.class_level_edges(model):
            self.edges_by_src.setdefault(edge.src, []).append(edge)
        for cls in model.classes:
            for der in cls.deriveds:
                for agg in dsl.expr_aggregates(der.expr):
                    self.aggregates_by_rel.setdefault((cls.name, agg.relation), []) \
                        .append(der.name)
        self.learned = build_learned_specs(model, profiler_overrides)
        store.profiler_configs.update({c: s.cfg for c, s in self.learned.items()})
        # profiles loaded from disk before the engine existed carry a
        # placeholder config; swap in the effective one
        for per_world in store.profiles.values():
            for nid, prof in per_world.items():
                cfg = store.profiler_configs.get(store.nodes[nid].cls)
                if cfg is not None and cfg.slot_count == prof.cfg.slot_count:
                    prof.cfg = cfg
        self.rank = self._topo_ranks(model)
        self.dirty: dict[int, set] = {}  # world -> {(node, member, ts)}
        self._heap: dict[int, list] = {}  # same entries, keyed for draining
        # world -> {(node, member): {trigger ts seen so far}}; used to
        # re-dirty later evaluation points when a write lands in their past
        self.triggers: dict[int, dict] = {}
        self._trig_max: dict[int, dict] = {}  # latest trigger ts per key
        # a store opened from disk already holds computed values whose
        # trigger points must stay re-runnable
        for (w, nid, member), hist in store._scalars.items():
            cls = model.class_named(store.nodes[nid].cls)
            mdef = cls.member_named(member)
            if isinstance(mdef, (dsl.Derived, dsl.Output)) and hist.ts:
                self.triggers.setdefault(w, {}) \
                    .setdefault((nid, member), set()).update(hist.ts)
        for w, per_key in self.triggers.items():
            self._trig_max[w] = {k: max(ts) for k, ts in per_key.items()}
        self._replaying = False
        store.listeners.append(self._on_receipt)

    def _topo_ranks(self, model: dsl.MetaModel) -> dict:
        incoming: dict[tuple, list] = {}
        for edge in dsl.class_level_edges(model):
            incoming.setdefault(edge.dst, []).append(edge.src)
        ranks: dict[tuple, int] = {}

        def rank_of(v) -> int:
            if v in ranks:
                return ranks[v]
            srcs = incoming.get(v)
            ranks[v] = 0 if not srcs else 1 + max(rank_of(s) for s in srcs)
            return ranks[v]

        for v in list(incoming):
            rank_of(v)
        return ranks

    def fork_world(self, parent: int) -> int:
        """Fork through the store and adopt the parent chain's trigger
        history, so scenario writes placed before inherited evaluation
        points re-run those points inside the fork."""
        wid = self.store.fork_world(parent)
        merged: dict = {}
        for w, _bound in self.store._chain_bounds(parent):
            for key, ts_set in self.triggers.get(w, {}).items():
                merged.setdefault(key, set()).update(ts_set)
        self.triggers[wid] = merged
        self._trig_max[wid] = {k: max(ts) for k, ts in merged.items()}
        return wid

    # -- dirty propagation -------------------------------------------------

    def _on_receipt(self, receipt: Receipt):
        self.on_write(receipt)

    def on_write(self, receipt: Receipt) -> list[tuple]:
        """Instance-level dependents of one write; also queues them."""
        store = self.store
        w = receipt.world
        nid = receipt.node
        ts = receipt.ts
        cls_name = store.nodes[nid].cls
        delta = []
        if receipt.kind in ("att", "out"):
            edges = list(self.edges_by_src.get((cls_name, receipt.member), ()))
            if receipt.kind == "att":
                edges += self.edges_by_src.get((cls_name, "timestamp"), ())
            for edge in edges:
                if edge.path is None:
                    dependents = [nid]
                else:
                    dependents = []
                    for owner, rel in store.referrers.get(nid, ()):
                        if rel != edge.path:
                            continue
                        if store.nodes[owner].cls != edge.dst[0]:
                            continue
                        if not store.node_visible(w, owner):
                            continue
                        if nid in store.get_relations(w, owner, rel, ts):
                            dependents.append(owner)
                for d in dependents:
                    delta.append((d, edge.dst[1], ts))
        elif receipt.kind == "rel":
            for member in self.aggregates_by_rel.get((cls_name, receipt.member), ()):
                delta.append((nid, member, ts))
        if delta:
            # a write in a dependent's past changes every later latest-at-
            # or-before read, so its already-seen triggers re-run too; this
            # makes the final state independent of refine cadence
            trig = self.triggers.setdefault(w, {})
            tmax = self._trig_max.setdefault(w, {})
            stale = []
            for d, member, t2 in delta:
                key = (d, member)
                seen = trig.setdefault(key, set())
                if t2 < tmax.get(key, t2):  # only backdated writes rescan
                    stale.extend((d, member, prior)
                                 for prior in seen if prior > t2)
                seen.add(t2)
                if t2 > tmax.get(key, -1):
                    tmax[key] = t2
            delta.extend(stale)
            bucket = self.dirty.setdefault(w, set())
            heap = self._heap.setdefault(w, [])
            for e in delta:
                if e not in bucket:
                    bucket.add(e)
                    heapq.heappush(heap, (self._order_key(e), e))
        return delta

    # -- refinement --------------------------------------------------------

    def refine(self, wid: int) -> RefinementReport:
        store = self.store
        report = RefinementReport()
        bucket = self.dirty.setdefault(wid, set())
        heap = self._heap.setdefault(wid, [])
        while bucket:
            if not heap:  # defensive: rebuild if out of sync
                heap.extend((self._order_key(e), e) for e in bucket)
                heapq.heapify(heap)
            entry = heapq.heappop(heap)[1]
            if entry not in bucket:
                continue  # already drained; duplicates are harmless
            bucket.discard(entry)
            nid, member, ts = entry
            report.tasks_run += 1
            try:
                wrote = self._run_task(wid, nid, member, ts)
                if wrote:
                    report.values_written += 1
            except TaskFailure as exc:
                report.failures.append({"node": store.node_label(nid),
                                        "member": member, "reason": exc.reason})
        return report

    def _order_key(self, entry):
        nid, member, ts = entry
        cls_name = self.store.nodes[nid].cls
        return (self.rank.get((cls_name, member), 0), ts, nid, member)

    def _run_task(self, wid: int, nid: int, member: str, ts: int) -> bool:
        store = self.store
        cls = store.model.class_named(store.nodes[nid].cls)
        mdef = cls.member_named(member)
        if isinstance(mdef, dsl.Derived):
            value = eval_expr(mdef.expr, store, wid, nid, ts)
            if mdef.type == "Double":
                value = float(value)
            store.write_output(wid, nid, member, ts, value)
            return True
        if isinstance(mdef, dsl.Output):
            return self._run_learned(wid, nid, cls, ts)
        raise TaskFailure(f"member {member!r} is not derivable")

    def _run_learned(self, wid: int, nid: int, cls: dsl.ClassDef, ts: int) -> bool:
        store = self.store
        spec = self.learned.get(cls.name)
        if spec is None:
            raise TaskFailure(f"class {cls.name!r} has no usable learned wiring")
        deps = store.get_relations(wid, nid, spec.dep_name, ts)
        if len(deps) != 1:
            raise TaskFailure(
                f"dependency {spec.dep_name!r} of {store.node_label(nid)} resolves to "
                f"{len(deps)} nodes at t={ts}")
        target = deps[0]
        value = eval_expr(spec.value_expr, store, wid, target, ts)
        value = float(value)
        prof = store.profile_for(wid, nid, spec.cfg)
        slot = prof.slot_of(ts)
        # score against what was learned so far, then absorb the sample
        p = prof.probability(slot, value)
        wrote = False
        if p is not INSUFFICIENT:
            store.write_output(wid, nid, spec.output, ts, float(p))
            wrote = True
        prof.update(slot, value)
        return wrote

    # -- batch oracle ------------------------------------------------------

    def full_recompute(self, wid: int) -> RefinementReport:
        """Clear every derived/learned value and profile in wid, then replay
        all visible raw writes in global sequence order."""
        store = self.store
        for nid in store.visible_nodes(wid):
            cls = store.model.class_named(store.nodes[nid].cls)
            for m in cls.deriveds + cls.outputs:
                store.clear_outputs(wid, nid, m.name)
        store.profiles[wid] = {}
        self.dirty[wid] = set()
        self._heap[wid] = []
        self.triggers[wid] = {}
        self._trig_max[wid] = {}
        bounds = dict(store._chain_bounds(wid))
        events = []
        for ev in store.journal:
            kind = ev[0]
            if kind == "att":
                _, w, nid, attr, t, seq = ev
                events.append((seq, w, nid, attr, t, "att"))
            elif kind == "attv":
                _, w, nid, attr, t, _type, _value, seq = ev
                events.append((seq, w, nid, attr, t, "att"))
            elif kind == "rel":
                _, w, nid, rel, _target, _op, t, seq = ev
                events.append((seq, w, nid, rel, t, "rel"))
        events.sort()
        report = RefinementReport()
        for seq, w, nid, member, t, kind in events:
            bound = bounds.get(w)
            if bound is None or seq > bound:
                continue
            self.on_write(Receipt(seq, wid, nid, member, t, kind))
            report.merge(self.refine(wid))
        return report
