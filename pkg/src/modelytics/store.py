"""Temporal property graph with copy-on-write worlds.

Nodes carry time-versioned attributes and relations.  Worlds form a
parent chain: a fork records only its parent and the global
write-sequence number at fork time, so a child sees all parent history
written up to that sequence and nothing after, while its own writes
stay invisible to the parent.

Numeric Double attribute histories live in polynomial segment chains
(see polystore); Long/Bool/String attributes and relation memberships
use plain sorted change lists.  Derived and learned outputs use change
lists with replace-at-timestamp semantics, since refinement may revisit
a trigger time.

Persistence writes four files into a store directory: model.mdm,
graph.log, segments.log, and profiles.log (layouts in docs/format.md).
"""

from __future__ import annotations

import os
import struct
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Optional

from . import dsl
from .polystore import SegmentChain, Segment
from .profiler import MixtureProfile, ProfilerConfig
from .records import LogWriter, read_records

ROOT_WORLD = 0

FORMAT_VERSION = 1


class StoreError(Exception):
    pass


class UnknownEntityError(StoreError):
    pass


class TypeMismatchError(StoreError):
    pass


class AppendContractError(StoreError):
    """Write at a timestamp not after the latest visible one."""


class CardinalityError(StoreError):
    pass


class _NoValue:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoValue"

    def __bool__(self):
        return False


NOVALUE = _NoValue()


@dataclass(frozen=True)
class World:
    id: int
    parent: Optional[int]
    fork_seq: int


@dataclass(frozen=True)
class NodeInfo:
    id: int
    cls: str
    world: int  # world of creation
    seq: int
    name: Optional[str]


@dataclass(frozen=True)
class Receipt:
    seq: int
    world: int
    node: int
    member: str
    ts: int
    kind: str  # "att" | "out" | "rel"


class ChangeList:
    """Per-(world, node, member) scalar history: one entry per timestamp."""

    __slots__ = ("ts", "seqs", "values")

    def __init__(self):
        self.ts: list[int] = []
        self.seqs: list[int] = []
        self.values: list = []

    def put(self, t: int, seq: int, value):
        i = bisect_right(self.ts, t)
        if i > 0 and self.ts[i - 1] == t:
            self.seqs[i - 1] = seq
            self.values[i - 1] = value
        else:
            self.ts.insert(i, t)
            self.seqs.insert(i, seq)
            self.values.insert(i, value)

    def latest_leq(self, t: int, bound: int):
        """(ts, seq, value) of the newest entry with ts <= t and seq <= bound."""
        i = bisect_right(self.ts, t) - 1
        while i >= 0:
            if self.seqs[i] <= bound:
                return self.ts[i], self.seqs[i], self.values[i]
            i -= 1
        return None

    def entries_between(self, t0: int, t1: int, bound: int):
        lo = bisect_right(self.ts, t0 - 1)
        hi = bisect_right(self.ts, t1)
        for i in range(lo, hi):
            if self.seqs[i] <= bound:
                yield self.ts[i], self.seqs[i], self.values[i]

    @property
    def last_ts(self):
        return self.ts[-1] if self.ts else None


class NumericHistory:
    """Double attribute history: a segment chain plus (seq, ts) bookkeeping
    so reads through a fork boundary can clamp to the pre-fork prefix."""

    __slots__ = ("chain", "ts", "seqs")

    def __init__(self, epsilon: float):
        self.chain = SegmentChain(epsilon)
        self.ts: list[int] = []
        self.seqs: list[int] = []

    def append(self, t: int, seq: int, value: float):
        self.chain.append(t, value)
        self.ts.append(t)
        self.seqs.append(seq)

    def latest_leq(self, t: int, bound: int):
        cut = bisect_right(self.seqs, bound) - 1  # seqs ascending per chain
        if cut < 0:
            return None
        eff_t = min(t, self.ts[cut])
        i = bisect_right(self.ts, eff_t, 0, cut + 1) - 1
        if i < 0:
            return None
        value = self.chain.read(eff_t)
        return self.ts[i], self.seqs[i], value

    def entries_between(self, t0: int, t1: int, bound: int):
        lo = bisect_right(self.ts, t0 - 1)
        hi = bisect_right(self.ts, t1)
        for i in range(lo, hi):
            if self.seqs[i] <= bound:
                yield self.ts[i], self.seqs[i], self.chain.read(self.ts[i])

    @property
    def last_ts(self):
        return self.ts[-1] if self.ts else None


class RelationHistory:
    """Membership events, appended in sequence order."""

    __slots__ = ("events",)

    def __init__(self):
        self.events: list[tuple] = []  # (ts, seq, op, target)  op: +1 add, -1 remove

    def add_event(self, t: int, seq: int, op: int, target: int):
        self.events.append((t, seq, op, target))

    def visible(self, t: int, bound: int):
        for ts, seq, op, target in self.events:
            if ts <= t and seq <= bound:
                yield ts, seq, op, target


_PY_TYPES = {"Double": (int, float), "Long": (int,), "Bool": (bool,), "String": (str,)}


def _check_scalar(attr_type: str, value):
    if attr_type == "Double":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatchError(f"expected Double, got {value!r}")
        import math
        v = float(value)
        if not math.isfinite(v):
            raise TypeMismatchError(f"non-finite Double {value!r}")
        return v
    if attr_type == "Long":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatchError(f"expected Long, got {value!r}")
        return int(value)
    if attr_type == "Bool":
        if not isinstance(value, bool):
            raise TypeMismatchError(f"expected Bool, got {value!r}")
        return value
    if attr_type == "String":
        if not isinstance(value, str):
            raise TypeMismatchError(f"expected String, got {value!r}")
        return value
    raise TypeMismatchError(f"unknown primitive type {attr_type!r}")


class Store:
    """Graph store over a validated model. Single writer; reads are pure."""

    def __init__(self, model: dsl.MetaModel,
                 epsilon: Optional[dict] = None,
                 profiler_configs: Optional[dict] = None):
        diags = dsl.validate(model)
        if diags:
            raise StoreError("model does not validate: " + diags[0].message)
        self.model = model
        self.epsilon = dict(epsilon or {})  # "Class.attr" -> float
        self.profiler_configs = dict(profiler_configs or {})
        self.seq = 0
        self.worlds: dict[int, World] = {ROOT_WORLD: World(ROOT_WORLD, None, 0)}
        self._next_world = ROOT_WORLD + 1
        self.nodes: dict[int, NodeInfo] = {}
        self._next_node = 1
        self.names: dict[str, int] = {}
        self._scalars: dict[tuple, ChangeList] = {}       # (w, n, member)
        self._numeric: dict[tuple, NumericHistory] = {}   # (w, n, att)
        self._relations: dict[tuple, RelationHistory] = {}
        self.referrers: dict[int, set] = {}               # target -> {(owner, rel)}
        self.profiles: dict[int, dict] = {ROOT_WORLD: {}}  # world -> {node: MixtureProfile}
        self.journal: list[tuple] = []  # persistable events, see _persist_graph_log
        self.listeners: list[Callable[[Receipt], None]] = []
        # stable ids for binary logs
        self.member_ids: dict[tuple, int] = {}
        self.member_by_id: dict[int, tuple] = {}
        mid = 0
        for cls in model.classes:
            for m in cls.members:
                if isinstance(m, dsl.Input):
                    continue
                self.member_ids[(cls.name, m.name)] = mid
                self.member_by_id[mid] = (cls.name, m.name)
                mid += 1

    # -- model helpers -----------------------------------------------------

    def _class_of(self, nid: int) -> dsl.ClassDef:
        info = self.nodes.get(nid)
        if info is None:
            raise UnknownEntityError(f"unknown node {nid}")
        return self.model.class_named(info.cls)

    def _world(self, wid: int) -> World:
        w = self.worlds.get(wid)
        if w is None:
            raise UnknownEntityError(f"unknown world {wid}")
        return w

    def _chain_bounds(self, wid: int) -> list[tuple]:
        """[(world, seqBound)] from wid up to the root."""
        out = []
        bound = float("inf")
        w = self._world(wid)
        while True:
            out.append((w.id, bound))
            if w.parent is None:
                return out
            bound = min(bound, w.fork_seq)
            w = self.worlds[w.parent]

    def _next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def _notify(self, receipt: Receipt):
        for fn in self.listeners:
            fn(receipt)

    def _eps_for(self, cls: str, attr: str) -> float:
        return float(self.epsilon.get(f"{cls}.{attr}", 0.0))

    # -- worlds ------------------------------------------------------------

    def fork_world(self, parent: int) -> int:
        self._world(parent)
        wid = self._next_world
        self._next_world += 1
        self.worlds[wid] = World(wid, parent, self.seq)
        # profiles are learned state: snapshot them at the fork boundary
        self.profiles[wid] = {n: p.copy() for n, p in self._resolved_profiles(parent).items()}
        self.journal.append(("world", wid, parent, self.seq))
        return wid

    def _resolved_profiles(self, wid: int) -> dict:
        return self.profiles.get(wid, {})

    def profile_for(self, wid: int, nid: int, cfg: ProfilerConfig) -> MixtureProfile:
        table = self.profiles.setdefault(wid, {})
        prof = table.get(nid)
        if prof is None:
            prof = MixtureProfile(cfg)
            table[nid] = prof
        return prof

    # -- nodes -------------------------------------------------------------

    def create_node(self, wid: int, cls_name: str, name: Optional[str] = None) -> int:
        self._world(wid)
        if self.model.class_named(cls_name) is None:
            raise UnknownEntityError(f"unknown class {cls_name!r}")
        if name is not None and name in self.names:
            raise StoreError(f"node name {name!r} already in use")
        nid = self._next_node
        self._next_node += 1
        seq = self._next_seq()
        self.nodes[nid] = NodeInfo(nid, cls_name, wid, seq, name)
        if name is not None:
            self.names[name] = nid
        self.journal.append(("node", wid, nid, cls_name, name, seq))
        return nid

    def node_visible(self, wid: int, nid: int) -> bool:
        info = self.nodes.get(nid)
        if info is None:
            return False
        for lvl_wid, bound in self._chain_bounds(wid):
            if info.world == lvl_wid:
                return info.seq <= bound
        return False

    def visible_nodes(self, wid: int) -> list[int]:
        return sorted(n for n in self.nodes if self.node_visible(wid, n))

    def node_by_name(self, name: str) -> int:
        nid = self.names.get(name)
        if nid is None:
            raise UnknownEntityError(f"unknown node name {name!r}")
        return nid

    def node_label(self, nid: int) -> str:
        info = self.nodes[nid]
        return info.name if info.name is not None else f"#{nid}"

    # -- attributes --------------------------------------------------------

    def _member(self, nid: int, name: str) -> dsl.MemberDef:
        cls = self._class_of(nid)
        m = cls.member_named(name)
        if m is None:
            raise UnknownEntityError(f"class {cls.name!r} has no member {name!r}")
        return m

    def last_visible_ts(self, wid: int, nid: int, member: str):
        """Latest timestamp visible in wid for (nid, member), or None."""
        best = None
        for lvl_wid, bound in self._chain_bounds(wid):
            hist = self._numeric.get((lvl_wid, nid, member)) or \
                self._scalars.get((lvl_wid, nid, member))
            if hist is None:
                continue
            entry = hist.latest_leq(2**63 - 1, bound)
            if entry is not None and (best is None or entry[0] > best):
                best = entry[0]
        return best

    def set_attribute(self, wid: int, nid: int, attr: str, t: int, value) -> Receipt:
        self._world(wid)
        if not self.node_visible(wid, nid):
            raise UnknownEntityError(f"node {nid} not visible in world {wid}")
        m = self._member(nid, attr)
        if not isinstance(m, dsl.Attribute):
            raise UnknownEntityError(f"{attr!r} is not a plain attribute")
        value = _check_scalar(m.type, value)
        last = self.last_visible_ts(wid, nid, attr)
        if last is not None and t <= last:
            raise AppendContractError(
                f"write at t={t} not after latest t={last} for {self.node_label(nid)}.{attr}")
        seq = self._next_seq()
        cls = self._class_of(nid)
        if m.type == "Double":
            key = (wid, nid, attr)
            hist = self._numeric.get(key)
            if hist is None:
                hist = NumericHistory(self._eps_for(cls.name, attr))
                self._numeric[key] = hist
            hist.append(t, seq, value)
            self.journal.append(("att", wid, nid, attr, t, seq))
        else:
            key = (wid, nid, attr)
            hist = self._scalars.get(key)
            if hist is None:
                hist = ChangeList()
                self._scalars[key] = hist
            hist.put(t, seq, value)
            self.journal.append(("attv", wid, nid, attr, t, m.type, value, seq))
        receipt = Receipt(seq, wid, nid, attr, t, "att")
        self._notify(receipt)
        return receipt

    def write_output(self, wid: int, nid: int, member: str, t: int, value) -> Receipt:
        """Refinement-side write: replace-at-timestamp, no poly encoding."""
        m = self._member(nid, member)
        if not isinstance(m, (dsl.Derived, dsl.Output)):
            raise UnknownEntityError(f"{member!r} is not a derived/output member")
        value = _check_scalar(m.type, value)
        seq = self._next_seq()
        key = (wid, nid, member)
        hist = self._scalars.get(key)
        if hist is None:
            hist = ChangeList()
            self._scalars[key] = hist
        hist.put(t, seq, value)
        self.journal.append(("outv", wid, nid, member, t, m.type, value, seq))
        receipt = Receipt(seq, wid, nid, member, t, "out")
        self._notify(receipt)
        return receipt

    def clear_outputs(self, wid: int, nid: int, member: str):
        """Drop this world's own overlay for a derived/learned member."""
        key = (wid, nid, member)
        if key in self._scalars:
            del self._scalars[key]
        self.journal.append(("clear", wid, nid, member))

    def get_attribute(self, wid: int, nid: int, member: str, t: int):
        self._world(wid)
        if not self.node_visible(wid, nid):
            raise UnknownEntityError(f"node {nid} not visible in world {wid}")
        self._member(nid, member)  # raises on unknown member
        best = None
        for lvl_wid, bound in self._chain_bounds(wid):
            hist = self._numeric.get((lvl_wid, nid, member)) or \
                self._scalars.get((lvl_wid, nid, member))
            if hist is None:
                continue
            entry = hist.latest_leq(t, bound)
            if entry is not None and (best is None or (entry[0], entry[1]) > (best[0], best[1])):
                best = entry
        if best is None:
            return NOVALUE
        return best[2]

    def history(self, wid: int, nid: int, member: str, t0: int, t1: int):
        """Resolved (ts, value) entries in [t0, t1], newest write wins per ts."""
        merged: dict[int, tuple] = {}
        for lvl_wid, bound in self._chain_bounds(wid):
            hist = self._numeric.get((lvl_wid, nid, member)) or \
                self._scalars.get((lvl_wid, nid, member))
            if hist is None:
                continue
            for ts, seq, value in hist.entries_between(t0, t1, bound):
                cur = merged.get(ts)
                if cur is None or seq > cur[0]:
                    merged[ts] = (seq, value)
        return [(ts, merged[ts][1]) for ts in sorted(merged)]

    # -- relations ---------------------------------------------------------

    def _relation_member(self, nid: int, rel: str):
        m = self._member(nid, rel)
        if isinstance(m, dsl.Relation):
            return m.target, m.many
        if isinstance(m, dsl.Dependency):
            return m.target, False
        raise UnknownEntityError(f"{rel!r} is not a relation or dependency")

    def add_relation(self, wid: int, nid: int, rel: str, target: int, t: int) -> Receipt:
        self._world(wid)
        if not self.node_visible(wid, nid):
            raise UnknownEntityError(f"node {nid} not visible in world {wid}")
        target_cls, many = self._relation_member(nid, rel)
        if not self.node_visible(wid, target):
            raise UnknownEntityError(f"target node {target} not visible in world {wid}")
        info = self.nodes[target]
        if info.cls != target_cls:
            raise TypeMismatchError(
                f"relation {rel!r} targets {target_cls!r}, node is {info.cls!r}")
        current = self.get_relations(wid, nid, rel, t)
        if not many and current:
            raise CardinalityError(
                f"relation {rel!r} has cardinality one and is already set at t={t}")
        return self._rel_event(wid, nid, rel, target, t, +1)

    def remove_relation(self, wid: int, nid: int, rel: str, target: int, t: int) -> Receipt:
        self._world(wid)
        if not self.node_visible(wid, nid):
            raise UnknownEntityError(f"node {nid} not visible in world {wid}")
        self._relation_member(nid, rel)
        current = self.get_relations(wid, nid, rel, t)
        if target not in current:
            raise UnknownEntityError(
                f"node {target} is not in relation {rel!r} at t={t}")
        return self._rel_event(wid, nid, rel, target, t, -1)

    def _rel_event(self, wid: int, nid: int, rel: str, target: int, t: int, op: int) -> Receipt:
        seq = self._next_seq()
        key = (wid, nid, rel)
        hist = self._relations.get(key)
        if hist is None:
            hist = RelationHistory()
            self._relations[key] = hist
        hist.add_event(t, seq, op, target)
        self.referrers.setdefault(target, set()).add((nid, rel))
        self.journal.append(("rel", wid, nid, rel, target, op, t, seq))
        receipt = Receipt(seq, wid, nid, rel, t, "rel")
        self._notify(receipt)
        return receipt

    def get_relations(self, wid: int, nid: int, rel: str, t: int) -> tuple:
        self._relation_member(nid, rel)
        events = []
        for lvl_wid, bound in self._chain_bounds(wid):
            hist = self._relations.get((lvl_wid, nid, rel))
            if hist is None:
                continue
            events.extend(hist.visible(t, bound))
        events.sort(key=lambda e: (e[0], e[1]))
        members: set[int] = set()
        for _ts, _seq, op, target in events:
            if op > 0:
                members.add(target)
            else:
                members.discard(target)
        return tuple(sorted(members))

    # -- diff --------------------------------------------------------------

    def _readable_members(self, nid: int) -> list[str]:
        cls = self._class_of(nid)
        out = [a.name for a in cls.attributes]
        out += [d.name for d in cls.deriveds]
        out += [o.name for o in cls.outputs]
        return out

    def diff_worlds(self, a: int, b: int, t: int,
                    nodes: Optional[set] = None, members: Optional[set] = None) -> list:
        """(node, member, valueA, valueB) tuples whose resolved values differ."""
        chain_a = {w for w, _ in self._chain_bounds(a)}
        chain_b = {w for w, _ in self._chain_bounds(b)}
        if not (chain_a & chain_b):
            raise StoreError(f"worlds {a} and {b} share no common ancestor")
        candidates = set(self.visible_nodes(a)) | set(self.visible_nodes(b))
        out = []
        for nid in sorted(candidates):
            if nodes is not None and nid not in nodes:
                continue
            for member in self._readable_members(nid):
                if members is not None and member not in members:
                    continue
                va = self.get_attribute(a, nid, member, t) if self.node_visible(a, nid) else NOVALUE
                vb = self.get_attribute(b, nid, member, t) if self.node_visible(b, nid) else NOVALUE
                if va is NOVALUE and vb is NOVALUE:
                    continue
                if va is NOVALUE or vb is NOVALUE or va != vb:
                    out.append((nid, member, va, vb))
        return out

    # -- persistence -------------------------------------------------------

    def flush(self):
        for hist in self._numeric.values():
            hist.chain.flush()

    def persist(self, store_dir):
        os.makedirs(store_dir, exist_ok=True)
        self.flush()
        with open(os.path.join(store_dir, "model.mdm"), "w", encoding="utf-8") as fh:
            fh.write(dsl.print_model(self.model))
        self._persist_graph_log(os.path.join(store_dir, "graph.log"))
        self._persist_segments_log(os.path.join(store_dir, "segments.log"))
        self._persist_profiles_log(os.path.join(store_dir, "profiles.log"))

    # graph.log record types
    _R_HEADER = 1
    _R_WORLD = 2
    _R_NODE = 3
    _R_REL = 4
    _R_ATT = 5
    _R_ATTV = 6
    _R_OUTV = 7
    _R_CLEAR = 8
    _R_SEGMENT = 9
    _R_PROFILE = 10

    @staticmethod
    def _pack_str(s: Optional[str]) -> bytes:
        data = (s or "").encode("utf-8")
        return struct.pack("<H", len(data)) + data

    @staticmethod
    def _unpack_str(data: bytes, pos: int):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        return data[pos:pos + n].decode("utf-8"), pos + n

    def _pack_scalar(self, attr_type: str, value) -> bytes:
        if attr_type == "Double":
            return struct.pack("<d", value)
        if attr_type == "Long":
            return struct.pack("<q", value)
        if attr_type == "Bool":
            return struct.pack("<B", 1 if value else 0)
        return self._pack_str(value)

    def _unpack_scalar(self, attr_type: str, data: bytes, pos: int):
        if attr_type == "Double":
            return struct.unpack_from("<d", data, pos)[0], pos + 8
        if attr_type == "Long":
            return struct.unpack_from("<q", data, pos)[0], pos + 8
        if attr_type == "Bool":
            return bool(data[pos]), pos + 1
        return self._unpack_str(data, pos)

    def _member_id(self, nid: int, member: str) -> int:
        return self.member_ids[(self.nodes[nid].cls, member)]

    def _persist_graph_log(self, path):
        with LogWriter(path) as log:
            log.write(self._R_HEADER, struct.pack("<HQQQ", FORMAT_VERSION, self.seq,
                                                  self._next_node, self._next_world))
            for ev in self.journal:
                kind = ev[0]
                if kind == "world":
                    _, wid, parent, seq = ev
                    log.write(self._R_WORLD, struct.pack("<QQQ", wid, parent, seq))
                elif kind == "node":
                    _, wid, nid, cls, name, seq = ev
                    log.write(self._R_NODE, struct.pack("<QQQ", wid, nid, seq) +
                              self._pack_str(cls) + self._pack_str(name))
                elif kind == "rel":
                    _, wid, nid, rel, target, op, t, seq = ev
                    log.write(self._R_REL,
                              struct.pack("<QQIQbqQ", wid, nid, self._member_id(nid, rel),
                                          target, op, t, seq))
                elif kind == "att":
                    _, wid, nid, attr, t, seq = ev
                    log.write(self._R_ATT,
                              struct.pack("<QQIqQ", wid, nid, self._member_id(nid, attr),
                                          t, seq))
                elif kind in ("attv", "outv"):
                    _, wid, nid, attr, t, attr_type, value, seq = ev
                    rtype = self._R_ATTV if kind == "attv" else self._R_OUTV
                    log.write(rtype,
                              struct.pack("<QQIqQ", wid, nid, self._member_id(nid, attr),
                                          t, seq) + self._pack_str(attr_type) +
                              self._pack_scalar(attr_type, value))
                elif kind == "clear":
                    _, wid, nid, member = ev
                    log.write(self._R_CLEAR,
                              struct.pack("<QQI", wid, nid, self._member_id(nid, member)))

    def _persist_segments_log(self, path):
        with LogWriter(path) as log:
            for (wid, nid, attr) in sorted(self._numeric):
                hist = self._numeric[(wid, nid, attr)]
                attr_id = self._member_id(nid, attr)
                for seg in hist.chain.segments:
                    payload = struct.pack("<QQIqqHd", wid, nid, attr_id,
                                          seg.start_ts, seg.end_ts, seg.degree,
                                          seg.epsilon)
                    payload += struct.pack(f"<{seg.degree + 1}d", *seg.coefficients)
                    log.write(self._R_SEGMENT, payload)

    def _persist_profiles_log(self, path):
        with LogWriter(path) as log:
            for wid in sorted(self.profiles):
                for nid in sorted(self.profiles[wid]):
                    prof = self.profiles[wid][nid]
                    log.write(self._R_PROFILE,
                              struct.pack("<QQ", wid, nid) + prof.to_bytes())

    @classmethod
    def open(cls, store_dir, epsilon: Optional[dict] = None,
             profiler_configs: Optional[dict] = None) -> "Store":
        model_path = os.path.join(store_dir, "model.mdm")
        with open(model_path, encoding="utf-8") as fh:
            model, diags = dsl.parse_model(fh.read())
        if model is None:
            raise StoreError(f"cannot parse {model_path}: {diags[0].message}")
        store = cls(model, epsilon=epsilon, profiler_configs=profiler_configs)
        store._load_graph_log(os.path.join(store_dir, "graph.log"))
        store._load_segments_log(os.path.join(store_dir, "segments.log"))
        store._load_profiles_log(os.path.join(store_dir, "profiles.log"))
        return store

    def _load_graph_log(self, path):
        S = struct
        for rtype, payload in read_records(path):
            if rtype == self._R_HEADER:
                version, seq, next_node, next_world = S.unpack_from("<HQQQ", payload, 0)
                if version != FORMAT_VERSION:
                    raise StoreError(f"unsupported store format version {version}")
                self.seq = seq
                self._next_node = next_node
                self._next_world = next_world
            elif rtype == self._R_WORLD:
                wid, parent, seq = S.unpack_from("<QQQ", payload, 0)
                self.worlds[wid] = World(wid, parent, seq)
                self.profiles.setdefault(wid, {})
                self.journal.append(("world", wid, parent, seq))
            elif rtype == self._R_NODE:
                wid, nid, seq = S.unpack_from("<QQQ", payload, 0)
                cls_name, pos = self._unpack_str(payload, 24)
                name, _ = self._unpack_str(payload, pos)
                name = name or None
                self.nodes[nid] = NodeInfo(nid, cls_name, wid, seq, name)
                if name:
                    self.names[name] = nid
                self.journal.append(("node", wid, nid, cls_name, name, seq))
            elif rtype == self._R_REL:
                wid, nid, mid, target, op, t, seq = S.unpack_from("<QQIQbqQ", payload, 0)
                rel = self.member_by_id[mid][1]
                key = (wid, nid, rel)
                hist = self._relations.setdefault(key, RelationHistory())
                hist.add_event(t, seq, op, target)
                self.referrers.setdefault(target, set()).add((nid, rel))
                self.journal.append(("rel", wid, nid, rel, target, op, t, seq))
            elif rtype == self._R_ATT:
                wid, nid, mid, t, seq = S.unpack_from("<QQIqQ", payload, 0)
                attr = self.member_by_id[mid][1]
                key = (wid, nid, attr)
                hist = self._numeric.get(key)
                if hist is None:
                    cls_name = self.nodes[nid].cls
                    hist = NumericHistory(self._eps_for(cls_name, attr))
                    self._numeric[key] = hist
                # value arrives later from segments.log; record ordering only
                hist.ts.append(t)
                hist.seqs.append(seq)
                hist.chain.raw_points += 1
                self.journal.append(("att", wid, nid, attr, t, seq))
            elif rtype in (self._R_ATTV, self._R_OUTV):
                wid, nid, mid, t, seq = S.unpack_from("<QQIqQ", payload, 0)
                attr = self.member_by_id[mid][1]
                attr_type, pos = self._unpack_str(payload, 36)
                value, _ = self._unpack_scalar(attr_type, payload, pos)
                key = (wid, nid, attr)
                hist = self._scalars.setdefault(key, ChangeList())
                hist.put(t, seq, value)
                kind = "attv" if rtype == self._R_ATTV else "outv"
                self.journal.append((kind, wid, nid, attr, t, attr_type, value, seq))
            elif rtype == self._R_CLEAR:
                wid, nid, mid = S.unpack_from("<QQI", payload, 0)
                member = self.member_by_id[mid][1]
                self._scalars.pop((wid, nid, member), None)
                self.journal.append(("clear", wid, nid, member))

    def _load_segments_log(self, path):
        for rtype, payload in read_records(path):
            if rtype != self._R_SEGMENT:
                continue
            wid, nid, mid, start_ts, end_ts, degree, eps = \
                struct.unpack_from("<QQIqqHd", payload, 0)
            coeffs = struct.unpack_from(f"<{degree + 1}d", payload, 46)
            attr = self.member_by_id[mid][1]
            key = (wid, nid, attr)
            hist = self._numeric.get(key)
            if hist is None:
                cls_name = self.nodes[nid].cls
                hist = NumericHistory(self._eps_for(cls_name, attr))
                self._numeric[key] = hist
            hist.chain.load_segment(Segment(start_ts, end_ts, degree, coeffs, eps))

    def _load_profiles_log(self, path):
        for rtype, payload in read_records(path):
            if rtype != self._R_PROFILE:
                continue
            wid, nid = struct.unpack_from("<QQ", payload, 0)
            cls_name = self.nodes[nid].cls
            cfg = self.profiler_configs.get(cls_name)
            if cfg is None:
                cfg = _default_profiler_config(self.model.class_named(cls_name))
            prof = MixtureProfile.from_bytes(payload[16:], cfg)
            self.profiles.setdefault(wid, {})[nid] = prof

    # -- stats -------------------------------------------------------------

    def chain_stats(self) -> list[dict]:
        """Per (class, attribute) aggregate poly-store statistics."""
        acc: dict[tuple, dict] = {}
        for (wid, nid, attr), hist in self._numeric.items():
            cls = self.nodes[nid].cls
            entry = acc.setdefault((cls, attr), {
                "class": cls, "attribute": attr,
                "raw_points": 0, "segments": 0, "stored_scalars": 0})
            entry["raw_points"] += hist.chain.raw_points
            entry["segments"] += len(hist.chain.segments)
            entry["stored_scalars"] += hist.chain.stored_scalars
        out = []
        for key in sorted(acc):
            entry = acc[key]
            raw = entry["raw_points"]
            entry["ratio"] = 1.0 - entry["stored_scalars"] / (2.0 * raw) if raw else None
            out.append(entry)
        return out


def _default_profiler_config(cls: dsl.ClassDef) -> ProfilerConfig:
    """Fallback config from the class declaration alone (defaults elsewhere)."""
    slot_count = 1
    granularity = dsl.MS_PER_HOUR
    if cls is not None and cls.resolution is not None:
        slot_count = dsl.slot_count(cls.resolution, "HOURS")
    return ProfilerConfig(slot_count=slot_count, granularity_ms=granularity)
