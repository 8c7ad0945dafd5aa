"""Online per-context-slot Gaussian mixture profiles.

Each profile keys a small adaptive mixture per time slot (e.g. 168
hour-of-week slots).  Updates match the nearest component within tau
standard deviations and fold the sample in with Welford's recurrence;
unmatched samples spawn a new component, evicting the lightest one when
the slot is full.  After every update, components whose means sit close
together (relative to their own spreads) are merged, so a fragmented
unimodal slot collapses back to a single well-estimated component while
genuinely separated modes stay apart.  Scoring returns the
mixture-weighted two-sided standard-normal tail probability: 1.0 at a
component mean, ~0.05 at 1.96 sigma, vanishing in the far tails.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

NORMAL = "normal"
SUSPICIOUS = "suspicious"
UNKNOWN = "unknown"


class InsufficientData:
    """Scoring result while a slot is still warming up."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "InsufficientData"


INSUFFICIENT = InsufficientData()


@dataclass(frozen=True)
class ProfilerConfig:
    k_max: int = 3
    tau: float = 3.0
    theta: float = 0.05
    n_min: int = 20
    var_floor: float = 1e-6
    slot_count: int = 1
    granularity_ms: int = 3_600_000
    slot_offset_ms: int = 0  # anchor shift; default anchors slots at the epoch

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0 < self.theta < 1:
            raise ValueError("theta must be in (0, 1)")
        if self.var_floor <= 0:
            raise ValueError("var_floor must be > 0")
        if self.slot_count < 1:
            raise ValueError("slot_count must be >= 1")


@dataclass
class Component:
    count: int
    mean: float
    m2: float

    def variance(self, var_floor: float) -> float:
        return max(self.m2 / self.count, var_floor)

    def sd(self, var_floor: float) -> float:
        return math.sqrt(self.variance(var_floor))

    def copy(self) -> "Component":
        return Component(self.count, self.mean, self.m2)


def _merge(a: Component, b: Component) -> Component:
    """Pooled count/mean/M2; exact for the union of the absorbed samples."""
    n = a.count + b.count
    mean = (a.count * a.mean + b.count * b.mean) / n
    m2 = a.m2 + b.m2 + a.count * b.count / n * (a.mean - b.mean) ** 2
    return Component(n, mean, m2)


@dataclass
class Slot:
    components: list = field(default_factory=list)
    seen: int = 0  # total samples offered, including evicted mass

    @property
    def total(self) -> int:
        return sum(c.count for c in self.components)

    def copy(self) -> "Slot":
        return Slot([c.copy() for c in self.components], self.seen)


class MixtureProfile:
    def __init__(self, cfg: ProfilerConfig):
        self.cfg = cfg
        self.slots = [Slot() for _ in range(cfg.slot_count)]

    def copy(self) -> "MixtureProfile":
        clone = MixtureProfile(self.cfg)
        clone.slots = [s.copy() for s in self.slots]
        return clone

    # -- slots -------------------------------------------------------------

    def slot_of(self, t: int) -> int:
        cfg = self.cfg
        return ((int(t) - cfg.slot_offset_ms) // cfg.granularity_ms) % cfg.slot_count

    # -- learning ----------------------------------------------------------

    def update(self, slot: int, v: float):
        if not math.isfinite(v):
            raise ValueError(f"non-finite sample {v!r}")
        v = float(v)
        cfg = self.cfg
        s = self.slots[slot]
        s.seen += 1
        best = None
        best_z = math.inf
        for c in s.components:
            z = abs(v - c.mean) / math.sqrt(c.variance(cfg.var_floor))
            if z < best_z:
                best_z = z
                best = c
        if best is not None and best_z <= cfg.tau:
            # Welford
            best.count += 1
            delta = v - best.mean
            best.mean += delta / best.count
            best.m2 += delta * (v - best.mean)
        else:
            # Seed the spawn's spread from its distance to the nearest
            # component; a varFloor-sized spread can never absorb a
            # neighbour, which leaves every component stuck at count 1.
            if best is None:
                m2 = 0.0
            else:
                gap = abs(v - best.mean)
                m2 = max(cfg.var_floor, (gap / (2.0 * cfg.tau)) ** 2)
            fresh = Component(count=1, mean=v, m2=m2)
            if len(s.components) < cfg.k_max:
                s.components.append(fresh)
            else:
                lightest = min(range(len(s.components)),
                               key=lambda i: s.components[i].count)
                s.components[lightest] = fresh
        self._consolidate(s)

    def _consolidate(self, s: Slot):
        """Merge components that plainly describe the same population."""
        floor = self.cfg.var_floor
        tau = self.cfg.tau
        changed = True
        while changed and len(s.components) > 1:
            changed = False
            comps = s.components
            for i in range(len(comps)):
                for j in range(i + 1, len(comps)):
                    a, b = comps[i], comps[j]
                    d = abs(a.mean - b.mean)
                    if (d <= tau * max(a.sd(floor), b.sd(floor))
                            or d <= 2.0 * (a.sd(floor) + b.sd(floor))):
                        comps[i] = _merge(a, b)
                        comps.pop(j)
                        changed = True
                        break
                if changed:
                    break

    # -- scoring -----------------------------------------------------------

    def probability(self, slot: int, v: float):
        """Mixture-weighted two-sided tail probability, or INSUFFICIENT."""
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v!r}")
        s = self.slots[slot]
        if s.seen < self.cfg.n_min or not s.components:
            return INSUFFICIENT
        total = s.total
        p = 0.0
        for c in s.components:
            if c.count < 2:
                # a single-sample component has no variance estimate yet
                # and must not vouch for values near it
                continue
            z = abs(v - c.mean) / c.sd(self.cfg.var_floor)
            p += (c.count / total) * math.erfc(z / math.sqrt(2.0))
        return min(max(p, 0.0), 1.0)

    def classify(self, slot: int, v: float) -> str:
        p = self.probability(slot, v)
        if p is INSUFFICIENT:
            return UNKNOWN
        return SUSPICIOUS if p < self.cfg.theta else NORMAL

    def expected_value(self, slot: int):
        s = self.slots[slot]
        if s.seen < self.cfg.n_min or not s.components:
            return INSUFFICIENT
        total = s.total
        return sum((c.count / total) * c.mean for c in s.components)

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [struct.pack("<I", len(self.slots))]
        for s in self.slots:
            out.append(struct.pack("<QI", s.seen, len(s.components)))
            for c in s.components:
                out.append(struct.pack("<Qdd", c.count, c.mean, c.m2))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes, cfg: ProfilerConfig) -> "MixtureProfile":
        (n_slots,) = struct.unpack_from("<I", data, 0)
        pos = 4
        if n_slots != cfg.slot_count:
            raise ValueError(f"profile has {n_slots} slots, config expects {cfg.slot_count}")
        prof = cls(cfg)
        for s in prof.slots:
            seen, n_comp = struct.unpack_from("<QI", data, pos)
            pos += 12
            s.seen = seen
            for _ in range(n_comp):
                count, mean, m2 = struct.unpack_from("<Qdd", data, pos)
                pos += 24
                s.components.append(Component(count, mean, m2))
        return prof
