"""Online diagnosis over a stream of timed I/O vectors.

The diagnoser keeps the last N vectors and, once the buffer is full, runs
the classifier on every new vector.  A prediction whose top probability
falls below ``tau`` is reported as uncertain rather than as a class.
"""

from __future__ import annotations

import enum
from collections import Counter, deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .acquisition import ChangeLog
from .dataset import TimedIOVector, vectorize
from .errors import ModelError
from .nn import Model, predict


class VerdictKind(enum.Enum):
    WARMUP = "warmup"
    NORMAL = "normal"
    FAULT = "fault"
    UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    cls: Optional[int] = None
    distribution: tuple = ()
    top_confidence: Optional[float] = None

    def line(self, time) -> str:
        cls = "" if self.cls is None else str(self.cls)
        conf = "" if self.top_confidence is None else f"{self.top_confidence:.6f}"
        return f"{int(time)},{self.kind.value},{cls},{conf}"


class DiagnoserState:
    """Sliding buffer of the last N vectors over a read-only model.

    ``vote`` > 1 enables majority smoothing of the class over the last
    ``vote`` full-buffer predictions; it is off by default.
    """

    def __init__(self, model: Model, tau: float = 0.5, vote: int = 1):
        if not 0 < tau <= 1:
            raise ModelError("tau must lie in (0, 1]")
        if vote < 1:
            raise ModelError("vote window must be >= 1")
        self.model = model
        self.tau = tau
        self.n = model.config.window
        self.buffer: deque = deque(maxlen=self.n)
        self.vote = vote
        self._recent: deque = deque(maxlen=vote)

    def push(self, vector: TimedIOVector) -> Verdict:
        if len(vector.values) != self.model.config.width:
            raise ModelError(f"vector width {len(vector.values)} does not match model width {self.model.config.width}")
        self.buffer.append(vector)
        if len(self.buffer) < self.n:
            return Verdict(VerdictKind.WARMUP)
        cls, probs = predict(self.model, list(self.buffer))
        if self.vote > 1:
            self._recent.append(cls)
            counts = Counter(self._recent)
            best = max(counts.values())
            cls = min(c for c, k in counts.items() if k == best)
        conf = float(probs[cls])
        dist = tuple(float(p) for p in probs)
        if conf < self.tau:
            return Verdict(VerdictKind.UNCERTAIN, int(np.argmax(probs)), dist, conf)
        if cls == 0:
            return Verdict(VerdictKind.NORMAL, 0, dist, conf)
        return Verdict(VerdictKind.FAULT, cls, dist, conf)


def push(state: DiagnoserState, vector: TimedIOVector):
    """Functional spelling of :meth:`DiagnoserState.push`; mutates and returns ``state``."""
    return state, state.push(vector)


def replay(log: ChangeLog, model: Model, tau: float = 0.5, vote: int = 1) -> list:
    """``(time, Verdict)`` for every vector of the log, in order."""
    state = DiagnoserState(model, tau, vote)
    out = []
    t = log.records[0].time if log.records else 0
    for v in vectorize(log):
        t += v.t_rel
        out.append((t, state.push(v)))
    return out


def latency(verdicts: Sequence, inject_time: int, expected: int) -> Optional[int]:
    """Delay from injection to the first correct fault verdict, or ``None``."""
    for t, v in verdicts:
        if t >= inject_time and v.kind is VerdictKind.FAULT and v.cls == expected:
            return int(t - inject_time)
    return None


@dataclass(frozen=True)
class Assessment:
    """How one labeled replay went.

    ``ordered`` holds when the first decided (non-warmup, non-uncertain)
    verdict is Normal and comes before the injection, and a Fault verdict
    of the expected class follows at or after it.
    """

    ordered: bool
    latency: Optional[int]
    first_normal: Optional[int]
    false_alarms: int

    def line(self) -> str:
        lat = "none" if self.latency is None else str(self.latency)
        first = "none" if self.first_normal is None else str(self.first_normal)
        return f"ordered={int(self.ordered)} latency_ms={lat} first_normal_ms={first} false_alarms={self.false_alarms}"


def assess(verdicts: Sequence, inject_time: int, expected: int) -> Assessment:
    decided = [(t, v) for t, v in verdicts if v.kind in (VerdictKind.NORMAL, VerdictKind.FAULT)]
    first_normal = next((int(t) for t, v in decided if v.kind is VerdictKind.NORMAL), None)
    starts_normal = bool(decided) and decided[0][1].kind is VerdictKind.NORMAL and decided[0][0] < inject_time
    warm_first = bool(verdicts) and verdicts[0][1].kind is VerdictKind.WARMUP
    lat = latency(verdicts, inject_time, expected)
    alarms = sum(1 for t, v in decided if t < inject_time and v.kind is VerdictKind.FAULT)
    return Assessment(warm_first and starts_normal and lat is not None, lat, first_normal, alarms)
