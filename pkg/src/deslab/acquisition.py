"""Change logs of observed signal values, symptom rules and log statistics.

CSV layout::

    # signals: k1,k2,m1
    # scan_ms: 100
    # label: 0            (or "unlabeled")
    # fault: none         (optional; "<sig> <kind> at <ms> [for <ms>]")
    time_ms,variable,value
    0,k1,0
    ...
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import LogError
from .faults import FaultSpec, parse_fault

RISING = "+"
FALLING = "-"


@dataclass(frozen=True)
class ChangeRecord:
    time: int
    variable: str
    value: bool


@dataclass
class ChangeLog:
    signals: tuple
    scan_period: int
    records: list = field(default_factory=list)
    label: Optional[int] = None
    fault: Optional[FaultSpec] = None

    def __post_init__(self):
        self.signals = tuple(self.signals)
        self._index = {name: i for i, name in enumerate(self.signals)}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise LogError(f"signal {name!r} is not declared in the log header") from None

    @property
    def end_time(self) -> int:
        return self.records[-1].time if self.records else 0

    def validate(self) -> None:
        last_val = {}
        prev_key = (-1, -1)
        for rec in self.records:
            key = (rec.time, self.index(rec.variable))
            if key <= prev_key:
                raise LogError(f"records out of order at t={rec.time} ({rec.variable})")
            prev_key = key
            if last_val.get(rec.variable) == rec.value:
                raise LogError(f"{rec.variable} logged twice with value {int(rec.value)} (t={rec.time})")
            last_val[rec.variable] = rec.value

    def snapshots(self):
        """Replay as ``(time, values)`` per distinct record time, holding last values."""
        if not self.records:
            return
        values = [False] * len(self.signals)
        t = self.records[0].time
        for rec in self.records:
            if rec.time != t:
                yield t, tuple(values)
                t = rec.time
            values[self.index(rec.variable)] = rec.value
        yield t, tuple(values)

    def to_csv(self) -> str:
        lines = [
            f"# signals: {','.join(self.signals)}",
            f"# scan_ms: {self.scan_period}",
            f"# label: {'unlabeled' if self.label is None else self.label}",
        ]
        if self.fault is not None or self.label is not None:
            lines.append(f"# fault: {self.fault if self.fault is not None else 'none'}")
        lines.append("time_ms,variable,value")
        lines.extend(f"{r.time},{r.variable},{int(r.value)}" for r in self.records)
        return "\n".join(lines) + "\n"


def record(
    stream: Iterable,
    signals: Sequence[str],
    scan_period: int = 100,
    label: Optional[int] = None,
    fault: Optional[FaultSpec] = None,
) -> ChangeLog:
    """Fold a time-ordered stream of ``(time, snapshot)`` into a change log."""
    log = ChangeLog(tuple(signals), scan_period, [], label, fault)
    width = len(log.signals)
    prev = None
    last_t = None
    for t, snap in stream:
        if len(snap) != width:
            raise LogError(f"snapshot width {len(snap)} at t={t} does not match {width} signals")
        if last_t is not None and t <= last_t:
            raise LogError(f"snapshot at t={t} does not follow t={last_t}")
        last_t = t
        for i, v in enumerate(snap):
            v = bool(v)
            if prev is None or prev[i] != v:
                log.records.append(ChangeRecord(int(t), log.signals[i], v))
        prev = tuple(bool(v) for v in snap)
    return log


_HEADER_RE = re.compile(r"^#\s*(\w+)\s*:\s*(.*)$")


def read_log(text: str) -> ChangeLog:
    header = {}
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m:
                header[m.group(1)] = m.group(2).strip()
            continue
        if line == "time_ms,variable,value":
            continue
        parts = line.split(",")
        if len(parts) != 3 or parts[2] not in ("0", "1"):
            raise LogError(f"line {lineno}: expected time_ms,variable,value with value 0/1, got {line!r}")
        try:
            t = int(parts[0])
        except ValueError:
            raise LogError(f"line {lineno}: bad time {parts[0]!r}") from None
        rows.append(ChangeRecord(t, parts[1], parts[2] == "1"))
    if "signals" not in header:
        raise LogError("missing '# signals:' header")
    signals = tuple(s.strip() for s in header["signals"].split(",") if s.strip())
    try:
        scan = int(header.get("scan_ms", "100"))
    except ValueError:
        raise LogError(f"bad scan_ms header {header['scan_ms']!r}") from None
    label_text = header.get("label", "unlabeled")
    if label_text == "unlabeled":
        label = None
    elif label_text.isdigit() and 0 <= int(label_text) <= 7:
        label = int(label_text)
    else:
        raise LogError(f"bad label header {label_text!r}")
    fault = parse_fault(header["fault"]) if "fault" in header else None
    log = ChangeLog(signals, scan, rows, label, fault)
    log.validate()
    return log


def load_log(path) -> ChangeLog:
    with open(path, encoding="utf-8") as fh:
        return read_log(fh.read())


# --------------------------------------------------------------------------
# symptoms


@dataclass(frozen=True)
class SymptomRule:
    antecedent: tuple  # (signal, "+" | "-")
    expected: tuple
    timeout: int

    def __post_init__(self):
        if self.timeout <= 0:
            raise LogError("symptom timeout must be positive")
        for _, edge in (self.antecedent, self.expected):
            if edge not in (RISING, FALLING):
                raise LogError(f"edge must be '+' or '-', got {edge!r}")

    def __str__(self):
        a, b = self.antecedent, self.expected
        return f"expect {a[0]}{a[1]} -> {b[0]}{b[1]} within {self.timeout}"


@dataclass(frozen=True)
class Symptom:
    rule: SymptomRule
    antecedent_time: int
    deadline: int


_RULE_RE = re.compile(
    r"^expect\s+(\w+)\s*([+-])\s*->\s*(\w+)\s*([+-])\s+within\s+(\d+)$"
)


def parse_symptom_rules(text: str) -> list:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _RULE_RE.match(line)
        if m is None:
            raise LogError(f"line {lineno}: cannot parse symptom rule {line!r}")
        a, ae, b, be, ms = m.groups()
        rules.append(SymptomRule((a, ae), (b, be), int(ms)))
    return rules


def edges(log: ChangeLog, signal: str, direction: str) -> list:
    """Times of rising ('+') or falling ('-') edges; the t=0 initial record is not an edge."""
    log.index(signal)
    want = direction == RISING
    out = []
    prev = None
    for rec in log.records:
        if rec.variable != signal:
            continue
        if prev is not None and rec.value == want and prev != rec.value:
            out.append(rec.time)
        prev = rec.value
    return out


def detect_symptoms(log: ChangeLog, rules: Sequence[SymptomRule]) -> list:
    """Antecedent edges left without an expected edge inside their timeout.

    Each expected edge consumes the earliest still-open antecedent whose
    window ``(t_a, t_a + timeout]`` contains it.
    """
    symptoms = []
    for rule in rules:
        ante = edges(log, *rule.antecedent)
        expected = edges(log, *rule.expected)
        matched = [False] * len(ante)
        for tb in expected:
            for j, ta in enumerate(ante):
                if not matched[j] and ta < tb <= ta + rule.timeout:
                    matched[j] = True
                    break
        symptoms.extend(Symptom(rule, ta, ta + rule.timeout) for j, ta in enumerate(ante) if not matched[j])
    symptoms.sort(key=lambda s: (s.antecedent_time, rules.index(s.rule)))
    return symptoms


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class SignalStats:
    signal: str
    changes: int
    duty_cycle: float
    mean_interval: Optional[float]


def stats(log: ChangeLog, end_time: Optional[int] = None) -> list:
    """Per-signal change count, duty cycle and mean time between records.

    The log spans ``[first record, end_time]``; ``end_time`` defaults to the
    last record time.
    """
    if not log.records:
        raise LogError("empty log")
    start = log.records[0].time
    end = log.end_time if end_time is None else end_time
    span = end - start
    per_signal = {name: [] for name in log.signals}
    for rec in log.records:
        per_signal[rec.variable].append(rec)
    out = []
    for name in log.signals:
        recs = per_signal[name]
        if not recs:
            out.append(SignalStats(name, 0, 0.0, None))
            continue
        if span <= 0:
            duty = 1.0 if recs[-1].value else 0.0
        else:
            high = 0
            for a, b in zip(recs, recs[1:] + [None]):
                stop = end if b is None else b.time
                if a.value:
                    high += stop - a.time
            duty = high / span
        gaps = [b.time - a.time for a, b in zip(recs, recs[1:])]
        out.append(SignalStats(name, len(recs) - 1, duty, sum(gaps) / len(gaps) if gaps else None))
    return out
