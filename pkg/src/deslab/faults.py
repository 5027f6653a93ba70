"""Component fault taxonomy, signal masking and the class-label catalog.

Four fault kinds exist for every boolean component: stuck at 0, stuck at 1,
and spurious pulses 0->1 / 1->0.  The classifier only distinguishes the
stuck faults of the import conveyor (classes 1-6); the normal plant is
class 0 and any other fault falls into the catch-all class 7.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import FaultError

NUM_CLASSES = 8
NORMAL = 0
OTHER_FAULT = 7


class FaultKind(enum.Enum):
    STUCK_AT_0 = "stuck0"
    STUCK_AT_1 = "stuck1"
    SPURIOUS_0_TO_1 = "sp01"
    SPURIOUS_1_TO_0 = "sp10"

    @property
    def is_stuck(self) -> bool:
        return self in (FaultKind.STUCK_AT_0, FaultKind.STUCK_AT_1)

    @property
    def forced_value(self) -> bool:
        return self in (FaultKind.STUCK_AT_1, FaultKind.SPURIOUS_0_TO_1)


@dataclass(frozen=True)
class FaultSpec:
    target: str
    kind: FaultKind
    inject_time: int
    pulse_duration: Optional[int] = None

    def __post_init__(self):
        if self.inject_time < 0:
            raise FaultError(f"negative injection time {self.inject_time}")
        if self.kind.is_stuck:
            if self.pulse_duration is not None:
                raise FaultError(f"{self.kind.value} fault takes no pulse duration")
        elif self.pulse_duration is None or self.pulse_duration <= 0:
            raise FaultError(f"{self.kind.value} fault needs a positive pulse duration")

    def active(self, now: int) -> bool:
        return now >= self.inject_time

    def __str__(self):
        text = f"{self.target} {self.kind.value} at {self.inject_time}"
        if self.pulse_duration is not None:
            text += f" for {self.pulse_duration}"
        return text


def mask(true_value: bool, fault: Optional[FaultKind], now: int, spec: Optional[FaultSpec] = None) -> bool:
    """Value seen through an active fault at time ``now`` (ms)."""
    if fault is None:
        return bool(true_value)
    if fault is FaultKind.STUCK_AT_0:
        return False
    if fault is FaultKind.STUCK_AT_1:
        return True
    if spec is None:
        raise FaultError("spurious faults need their FaultSpec for the pulse window")
    if spec.inject_time <= now < spec.inject_time + spec.pulse_duration:
        return fault.forced_value
    return bool(true_value)


class ActiveFaultSet:
    """Faults currently in force, at most one per signal name."""

    def __init__(self, specs: Iterable[FaultSpec] = ()):
        self._by_signal: dict[str, FaultSpec] = {}
        for spec in specs:
            self.add(spec)

    def add(self, spec: FaultSpec) -> None:
        if spec.target in self._by_signal:
            raise FaultError(f"signal {spec.target!r} already has an active fault")
        self._by_signal[spec.target] = spec

    def get(self, signal: str) -> Optional[FaultSpec]:
        return self._by_signal.get(signal)

    def apply(self, signal: str, value: bool, now: int) -> bool:
        spec = self._by_signal.get(signal)
        if spec is None:
            return bool(value)
        return mask(value, spec.kind, now, spec)

    def __len__(self):
        return len(self._by_signal)

    def __contains__(self, signal):
        return signal in self._by_signal

    def __iter__(self):
        return iter(self._by_signal.values())

    @classmethod
    def at(cls, specs: Iterable[FaultSpec], now: int) -> "ActiveFaultSet":
        return cls(s for s in specs if s.active(now))


@dataclass(frozen=True)
class LabelCatalog:
    """Ordered (signal, kind) pairs; entry j is class j + 1."""

    entries: tuple

    def __post_init__(self):
        if len(self.entries) != NUM_CLASSES - 2:
            raise FaultError(f"catalog needs exactly {NUM_CLASSES - 2} entries, got {len(self.entries)}")
        if len(set(self.entries)) != len(self.entries):
            raise FaultError("duplicate catalog entry")
        for _, kind in self.entries:
            if not kind.is_stuck:
                raise FaultError("catalog classes are stuck-at faults only")

    def class_of(self, signal: str, kind: FaultKind) -> Optional[int]:
        try:
            return self.entries.index((signal, kind)) + 1
        except ValueError:
            return None

    def entry(self, label: int):
        if not 1 <= label <= len(self.entries):
            raise FaultError(f"class {label} is not a catalog class")
        return self.entries[label - 1]

    @property
    def signals(self) -> tuple:
        seen = []
        for sig, _ in self.entries:
            if sig not in seen:
                seen.append(sig)
        return tuple(seen)

    def describe(self, label: int) -> str:
        if label == NORMAL:
            return "normal"
        if label == OTHER_FAULT:
            return "other fault"
        sig, kind = self.entry(label)
        return f"{sig} {kind.value}"


def import_catalog() -> LabelCatalog:
    """Catalog for the bundled import station (entry, end, motor x stuck0/1)."""
    pairs = []
    for sig in ("imp_entry", "imp_end", "imp_motor"):
        pairs.append((sig, FaultKind.STUCK_AT_0))
        pairs.append((sig, FaultKind.STUCK_AT_1))
    return LabelCatalog(tuple(pairs))


def label_for(scenario_faults: Sequence[FaultSpec], catalog: LabelCatalog) -> int:
    if len(scenario_faults) > 1:
        raise FaultError("only single-fault scenarios can be labeled")
    if not scenario_faults:
        return NORMAL
    spec = scenario_faults[0]
    label = catalog.class_of(spec.target, spec.kind)
    return OTHER_FAULT if label is None else label


def scenario_suite(
    catalog: LabelCatalog,
    signals: Sequence[str],
    per_class: int,
    seed: int,
    horizon: int,
    inject_window: tuple = (0.25, 0.5),
    scan_period: int = 100,
    resting: Optional[Mapping[str, bool]] = None,
) -> list:
    """``per_class`` scenarios for each class, as ``(FaultSpec or None, label)``.

    Injection times are drawn uniformly in ``inject_window`` (fractions of
    the horizon).  Class-7 scenarios fault a signal outside the catalog with
    a random kind; spurious pulses last two scan periods.  ``resting`` maps
    signals that never change in normal operation to their value; faults
    forcing such a signal to that value leave no trace in the log and are
    not drawn.
    """
    if not catalog.entries:
        raise FaultError("empty catalog")
    if per_class < 1:
        raise FaultError("per_class must be >= 1")
    lo = int(inject_window[0] * horizon)
    hi = int(inject_window[1] * horizon)
    if not 0 <= lo <= hi:
        raise FaultError(f"bad injection window {inject_window}")
    resting = resting or {}
    others = [
        (sig, kind)
        for sig in signals
        if sig not in catalog.signals
        for kind in FaultKind
        if resting.get(sig) is None or kind.forced_value != resting[sig]
    ]
    if not others:
        raise FaultError("no non-catalog fault left for the catch-all class")

    rng = np.random.default_rng(seed)
    suite = []
    for label in range(NUM_CLASSES):
        for _ in range(per_class):
            t = int(rng.integers(lo, hi + 1))
            if label == NORMAL:
                suite.append((None, NORMAL))
                continue
            if label == OTHER_FAULT:
                sig, kind = others[int(rng.integers(len(others)))]
            else:
                sig, kind = catalog.entry(label)
            pulse = None if kind.is_stuck else 2 * scan_period
            suite.append((FaultSpec(sig, kind, t, pulse), label))
    return suite


_SCENARIO_RE = re.compile(
    r"^(?P<sig>[A-Za-z_][A-Za-z0-9_]*)\s+(?P<kind>stuck0|stuck1|sp01|sp10)\s+at\s+(?P<at>\d+)"
    r"(?:\s+for\s+(?P<dur>\d+))?$"
)


def parse_fault(text: str) -> Optional[FaultSpec]:
    text = text.strip()
    if text == "none":
        return None
    m = _SCENARIO_RE.match(text)
    if m is None:
        raise FaultError(f"cannot parse fault scenario {text!r}")
    dur = m.group("dur")
    return FaultSpec(m.group("sig"), FaultKind(m.group("kind")), int(m.group("at")), int(dur) if dur else None)


def parse_scenarios(text: str, scan_period: int = 100) -> list:
    """Parse a scenario file; spurious faults without ``for`` get 2 scan periods."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line != "none" and re.search(r"\b(sp01|sp10)\b", line) and " for " not in line:
                line = f"{line} for {2 * scan_period}"
            out.append(parse_fault(line))
        except FaultError as exc:
            raise FaultError(f"line {lineno}: {exc}") from None
    return out


def format_scenarios(faults: Sequence[Optional[FaultSpec]]) -> str:
    return "".join(("none" if f is None else str(f)) + "\n" for f in faults)
