"""Error-bounded live piecewise-polynomial encoding of numeric time series.

Instead of retaining every raw (timestamp, value) pair, a chain grows an
open segment point by point.  Each append refits a least-squares
polynomial on the normalized basis u = (t - start) / (end - start); as
long as the maximum residual stays within the error bound, the raw
buffer keeps absorbing points.  A higher degree is only tried once the
buffer is long enough to pay for the extra coefficients, so a point that
breaks the current fit may sit in the buffer for a while before either a
later, richer fit absorbs it or the accepted prefix is closed out as a
segment and fitting restarts on the leftover points.

Every value a segment absorbed is reproducible within epsilon, and a
read touches exactly one segment.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

DEFAULT_MAX_DEGREE = 8

ABSORBED = "absorbed"
SEGMENT_CLOSED = "segment_closed"


class ChainError(Exception):
    pass


class OutOfOrderError(ChainError):
    pass


class NonFiniteError(ChainError):
    pass


@dataclass(frozen=True)
class Segment:
    start_ts: int
    end_ts: int
    degree: int
    coefficients: tuple  # ascending powers of u
    epsilon: float

    def eval(self, t: int) -> float:
        if self.end_ts == self.start_ts:
            u = 0.0
        else:
            u = (t - self.start_ts) / (self.end_ts - self.start_ts)
        acc = 0.0
        for c in reversed(self.coefficients):
            acc = acc * u + c
        return acc

    @property
    def stored_scalars(self) -> int:
        # coefficients + 2 timestamps + degree marker
        return len(self.coefficients) + 3


def _fit(ts: list, vs: list, degree: int) -> tuple:
    """Least-squares fit on u in [0, 1]. Returns (coefficients, max_residual)."""
    n = len(ts)
    if n == 1:
        return (float(vs[0]),), 0.0
    span = ts[-1] - ts[0]
    u = (np.asarray(ts, dtype=np.float64) - ts[0]) / span
    y = np.asarray(vs, dtype=np.float64)
    v = np.vander(u, degree + 1, increasing=True)
    a = v.T @ v
    b = v.T @ y
    try:
        coeffs = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        coeffs = np.linalg.lstsq(v, y, rcond=None)[0]
    resid = float(np.max(np.abs(v @ coeffs - y)))
    return tuple(float(c) for c in coeffs), resid


class SegmentChain:
    """Closed segments plus at most one live open buffer."""

    def __init__(self, epsilon: float = 0.0, max_degree: int = DEFAULT_MAX_DEGREE):
        if epsilon < 0 or not math.isfinite(epsilon):
            raise ChainError(f"epsilon must be finite and >= 0, got {epsilon}")
        self.epsilon = float(epsilon)
        self.max_degree = max_degree
        self.segments: list[Segment] = []
        self._starts: list[int] = []  # segment start_ts, for bisection
        self.buf_ts: list[int] = []
        self.buf_vs: list[float] = []
        # best accepted fit, covering a prefix of the buffer:
        # (degree, coeffs, count, start_ts, end_ts) with count <= len(buf_ts)
        self._accepted = None
        # degree-0 incremental stats
        self._sum = 0.0
        self._min = math.inf
        self._max = -math.inf
        self.raw_points = 0
        self.segment_reads = 0  # closed-segment evaluations, for locality checks

    # -- ingestion ---------------------------------------------------------

    @property
    def last_ts(self):
        if self.buf_ts:
            return self.buf_ts[-1]
        if self.segments:
            return self.segments[-1].end_ts
        return None

    def append(self, t: int, v: float) -> str:
        last = self.last_ts
        if last is not None and t <= last:
            raise OutOfOrderError(f"timestamp {t} not greater than last {last}")
        if not math.isfinite(v):
            raise NonFiniteError(f"non-finite value {v!r} at t={t}")
        v = float(v)
        self.buf_ts.append(t)
        self.buf_vs.append(v)
        self._sum += v
        self._min = min(self._min, v)
        self._max = max(self._max, v)
        self.raw_points += 1

        n = len(self.buf_ts)
        if n == 1:
            self._accepted = (0, (v,), 1, t, t)
            return ABSORBED

        degree, _coeffs, count, _st, _et = self._accepted
        if count == n - 1:
            # the whole buffer fit before this point; try to keep it that way
            if self._try_extend(degree):
                return ABSORBED
        else:
            # earlier points already broke the fit; retry the full buffer
            # only when growth has just unlocked the next degree
            if n % 2 == 0:
                unlocked = n // 2 - 1
                if degree < unlocked <= self.max_degree:
                    fitted, resid = _fit(self.buf_ts, self.buf_vs, unlocked)
                    if resid <= self.epsilon:
                        self._accepted = (unlocked, fitted, n,
                                          self.buf_ts[0], self.buf_ts[-1])
                        return ABSORBED

        if self._accepted[2] < n and n >= 2 * (self.max_degree + 2):
            # no affordable degree can absorb the tail; bank the fitted
            # prefix and start over on what remains
            self._close_prefix()
            return SEGMENT_CLOSED
        return ABSORBED

    def _try_extend(self, degree: int) -> bool:
        """Fit the full buffer, escalating degree while the buffer can pay
        for it. On success the accepted fit covers the whole buffer."""
        n = len(self.buf_ts)
        while True:
            coeffs, resid = self._fit_buffer(degree)
            if resid <= self.epsilon:
                self._accepted = (degree, coeffs, n,
                                  self.buf_ts[0], self.buf_ts[-1])
                return True
            if degree + 1 <= self.max_degree and 2 * (degree + 2) <= n:
                degree += 1
                continue
            return False

    def _fit_buffer(self, degree: int) -> tuple:
        n = len(self.buf_ts)
        if n == 1:
            return (self.buf_vs[0],), 0.0
        if degree == 0:
            if self._min == self._max:
                return (self._min,), 0.0
            mean = self._sum / n
            return (mean,), max(self._max - mean, mean - self._min)
        return _fit(self.buf_ts, self.buf_vs, degree)

    def _reset_stats(self):
        self._sum = sum(self.buf_vs)
        self._min = min(self.buf_vs, default=math.inf)
        self._max = max(self.buf_vs, default=-math.inf)

    def _close_prefix(self):
        degree, coeffs, count, start_ts, end_ts = self._accepted
        self._push_segment(Segment(start_ts, end_ts, degree, coeffs, self.epsilon))
        self.buf_ts = self.buf_ts[count:]
        self.buf_vs = self.buf_vs[count:]
        self._reset_stats()
        if not self.buf_ts:
            self._accepted = None
            return
        if len(self.buf_ts) == 1 or not self._try_extend(0):
            self._accepted = (0, (self.buf_vs[0],), 1,
                              self.buf_ts[0], self.buf_ts[0])

    def _push_segment(self, seg: Segment):
        self.segments.append(seg)
        self._starts.append(seg.start_ts)

    def flush(self):
        """Close any open buffer. Idempotent; honors epsilon."""
        while self.buf_ts:
            self._close_prefix()

    def load_segment(self, seg: Segment):
        """Install a previously persisted segment (append order required)."""
        if self._starts and seg.start_ts < self.segments[-1].end_ts:
            raise ChainError("segments must be loaded in time order")
        if self.buf_ts:
            raise ChainError("cannot load segments under an open buffer")
        self._push_segment(seg)

    # -- reads -------------------------------------------------------------

    def read(self, t: int):
        """Value at time t, or None before any data.

        Inside a segment the polynomial is evaluated; past a segment's end
        the value holds at the segment's final timestamp (no extrapolation).
        Reads inside the open buffer return the buffered raw value.
        """
        if self.buf_ts and t >= self.buf_ts[0]:
            i = bisect_right(self.buf_ts, t) - 1
            return self.buf_vs[i]
        idx = bisect_right(self._starts, t) - 1
        if idx < 0:
            return None
        seg = self.segments[idx]
        self.segment_reads += 1
        if t <= seg.end_ts:
            return seg.eval(t)
        return seg.eval(seg.end_ts)

    # -- accounting --------------------------------------------------------

    @property
    def stored_scalars(self) -> int:
        closed = sum(s.stored_scalars for s in self.segments)
        return closed + 2 * len(self.buf_ts)

    def compression_ratio(self) -> float:
        """1 - stored/raw scalar ratio. Negative when encoding expands."""
        if self.raw_points == 0:
            raise ChainError("compression ratio undefined for an empty chain")
        return 1.0 - self.stored_scalars / (2.0 * self.raw_points)
