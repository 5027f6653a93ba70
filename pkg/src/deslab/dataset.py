"""Timed I/O vectors, last-N window samples and stratified k-fold splits.

A timed I/O vector is the full observed snapshot at one change instant
plus ``t_rel``, the time elapsed since the previous change instant.  The
classifier consumes windows of N consecutive vectors from one run.

Dataset file layout::

    N=50 width=33 count=2
    label=0 run=0
    0,000101...
    150,000111...
    ...
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .acquisition import ChangeLog
from .errors import DatasetError
from .faults import NORMAL, FaultSpec, LabelCatalog, label_for

DEFAULT_N = 50
DEFAULT_K = 3


@dataclass(frozen=True)
class TimedIOVector:
    t_rel: float
    values: tuple


@dataclass(frozen=True)
class WindowSample:
    t_rel: np.ndarray  # (N,)
    values: np.ndarray  # (N, width) uint8
    label: int

    def __len__(self):
        return len(self.t_rel)

    @property
    def vectors(self) -> list:
        return [TimedIOVector(float(t), tuple(bool(b) for b in row)) for t, row in zip(self.t_rel, self.values)]


def vectorize(log: ChangeLog) -> list:
    """One vector per distinct record time, with last-value-hold snapshots."""
    if not log.records:
        raise DatasetError("empty log")
    out = []
    prev = None
    for t, snap in log.snapshots():
        out.append(TimedIOVector(0 if prev is None else t - prev, snap))
        prev = t
    return out


def as_arrays(vectors: Sequence[TimedIOVector]):
    t_rel = np.array([v.t_rel for v in vectors], dtype=np.float64)
    values = np.array([v.values for v in vectors], dtype=np.uint8).reshape(len(vectors), -1)
    return t_rel, values


def window_starts(length: int, n: int, stride: int = 1) -> range:
    if stride < 1:
        raise DatasetError("stride must be >= 1")
    if n < 1:
        raise DatasetError("window length must be >= 1")
    if length < n:
        raise DatasetError(f"run too short for window length: {length} vectors < N={n}")
    return range(0, length - n + 1, stride)


def windows(vectors: Sequence[TimedIOVector], n: int = DEFAULT_N, stride: int = 1, label: int = NORMAL) -> list:
    t_rel, values = as_arrays(vectors)
    return [WindowSample(t_rel[s:s + n], values[s:s + n], label) for s in window_starts(len(vectors), n, stride)]


def label_windows_for_fault(
    vectors: Sequence[TimedIOVector],
    n: int,
    stride: int,
    fault: Optional[FaultSpec],
    catalog: LabelCatalog,
    keep_pre_injection: bool = True,
    start_time: float = 0,
) -> list:
    """Windows ending before the injection are normal, the rest carry the fault class."""
    t_rel, values = as_arrays(vectors)
    ends = start_time + np.cumsum(t_rel)
    fault_label = label_for([fault] if fault else [], catalog)
    out = []
    for s in window_starts(len(vectors), n, stride):
        end_time = ends[s + n - 1]
        if fault is None or end_time >= fault.inject_time:
            label = fault_label
        elif keep_pre_injection:
            label = NORMAL
        else:
            continue
        out.append(WindowSample(t_rel[s:s + n], values[s:s + n], label))
    return out


class TimeScaling:
    """Transform applied to ``t_rel`` (ms) before it reaches the network."""

    def __init__(self, mode: str = "divide", constant: float = 1000.0):
        if mode not in ("none", "divide", "log1p"):
            raise DatasetError(f"unknown time scaling {mode!r}")
        if mode == "divide" and not constant > 0:
            raise DatasetError("time scaling constant must be positive")
        self.mode = mode
        self.constant = float(constant)

    @classmethod
    def parse(cls, text: str) -> "TimeScaling":
        if text in ("none", "log1p"):
            return cls(text)
        if text.startswith("divide:"):
            try:
                return cls("divide", float(text.split(":", 1)[1]))
            except ValueError:
                raise DatasetError(f"bad time scaling {text!r}") from None
        raise DatasetError(f"bad time scaling {text!r}")

    def __str__(self):
        if self.mode == "divide":
            c = self.constant
            return f"divide:{int(c) if c.is_integer() else repr(c)}"
        return self.mode

    def __eq__(self, other):
        return isinstance(other, TimeScaling) and str(self) == str(other)

    def __call__(self, t_rel):
        t = np.asarray(t_rel, dtype=np.float64)
        if self.mode == "none":
            return t
        if self.mode == "divide":
            return t / self.constant
        return np.log1p(t)


def normalize_time(vectors: Sequence[TimedIOVector], scale: TimeScaling) -> list:
    return [TimedIOVector(float(scale(v.t_rel)), v.values) for v in vectors]


class Dataset:
    """Window samples stored as arrays: ``t_rel`` (S, N), ``bits`` (S, N, W)."""

    def __init__(self, n, width, t_rel, bits, labels, runs=None):
        self.n = int(n)
        self.width = int(width)
        self.t_rel = np.asarray(t_rel, dtype=np.float64).reshape(-1, self.n)
        self.bits = np.asarray(bits, dtype=np.uint8).reshape(-1, self.n, self.width)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self.runs = np.zeros(len(self.labels), np.int64) if runs is None else np.asarray(runs, np.int64)
        if not (len(self.t_rel) == len(self.bits) == len(self.labels) == len(self.runs)):
            raise DatasetError("inconsistent dataset arrays")

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample], runs=None, n=None, width=None) -> "Dataset":
        if not samples:
            if n is None or width is None:
                raise DatasetError("empty sample list")
            return cls(n, width, np.zeros((0, n)), np.zeros((0, n, width)), np.zeros(0), np.zeros(0))
        n = len(samples[0])
        width = samples[0].values.shape[1]
        for s in samples:
            if len(s) != n or s.values.shape[1] != width:
                raise DatasetError("samples differ in window length or width")
        return cls(
            n,
            width,
            np.stack([s.t_rel for s in samples]),
            np.stack([s.values for s in samples]),
            [s.label for s in samples],
            runs,
        )

    def sample(self, i: int) -> WindowSample:
        return WindowSample(self.t_rel[i], self.bits[i], int(self.labels[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.n, self.width, self.t_rel[idx], self.bits[idx], self.labels[idx], self.runs[idx])

    def features(self, scale: TimeScaling, idx=None) -> np.ndarray:
        """Network input ``(S, N, 1 + width)``: scaled t_rel first, then the bits."""
        t = self.t_rel if idx is None else self.t_rel[idx]
        b = self.bits if idx is None else self.bits[idx]
        x = np.empty(b.shape[:2] + (1 + self.width,), dtype=np.float64)
        x[..., 0] = scale(t)
        x[..., 1:] = b
        return x

    def histogram(self) -> dict:
        return dict(sorted(Counter(int(v) for v in self.labels).items()))

    def to_text(self) -> str:
        parts = [f"N={self.n} width={self.width} count={len(self)}\n"]
        chars = np.array([ord("0"), ord("1")], dtype=np.uint8)
        for i in range(len(self)):
            parts.append(f"label={int(self.labels[i])} run={int(self.runs[i])}\n")
            rows = chars[self.bits[i]]
            for t, row in zip(self.t_rel[i], rows):
                parts.append(f"{_fmt_time(t)},{row.tobytes().decode('ascii')}\n")
        return "".join(parts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def parse_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetError("empty dataset file")
    try:
        head = dict(item.split("=", 1) for item in lines[0].split())
        n, width, count = int(head["N"]), int(head["width"]), int(head["count"])
    except (ValueError, KeyError):
        raise DatasetError(f"bad dataset header {lines[0]!r}") from None
    if len(lines) != 1 + count * (n + 1):
        raise DatasetError(f"expected {count} samples of {n} vectors, file has {len(lines) - 1} body lines")
    t_rel = np.empty((count, n))
    bits = np.empty((count, n, width), dtype=np.uint8)
    labels = np.empty(count, dtype=np.int64)
    runs = np.zeros(count, dtype=np.int64)
    pos = 1
    for i in range(count):
        fields = dict(item.split("=", 1) for item in lines[pos].split())
        if "label" not in fields:
            raise DatasetError(f"line {pos + 1}: expected 'label=<0-7>'")
        labels[i] = int(fields["label"])
        if not 0 <= labels[i] <= 7:
            raise DatasetError(f"line {pos + 1}: label out of range")
        runs[i] = int(fields.get("run", 0))
        block = lines[pos + 1:pos + 1 + n]
        for j, row in enumerate(block):
            t, _, b = row.partition(",")
            if len(b) != width:
                raise DatasetError(f"line {pos + 2 + j}: expected {width} bits")
            t_rel[i, j] = float(t)
            bits[i, j] = np.frombuffer(b.encode("ascii"), dtype=np.uint8) - ord("0")
        pos += n + 1
    if bits.size and bits.max() > 1:
        raise DatasetError("bit strings must contain only 0 and 1")
    return Dataset(n, width, t_rel, bits, labels, runs)


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read())


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignment: np.ndarray

    def validation(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def training(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != j)

    def to_text(self) -> str:
        return f"k={self.k}\n" + "".join(f"{int(a)}\n" for a in self.assignment)

    @classmethod
    def parse(cls, text: str) -> "FoldSplit":
        lines = text.split()
        k = int(lines[0].split("=", 1)[1])
        return cls(k, np.array([int(v) for v in lines[1:]], dtype=np.int64))


def kfold(labels, k: int = DEFAULT_K, seed: int = 0) -> FoldSplit:
    """Stratified fold assignment.

    Samples are shuffled within each class, the classes are laid end to end,
    and position p goes to fold ``p % k``; per-class and total fold sizes then
    differ by at most one.
    """
    labels = np.asarray(labels.labels if isinstance(labels, Dataset) else labels)
    if k < 2:
        raise DatasetError("k must be >= 2")
    if k > len(labels):
        raise DatasetError(f"k={k} exceeds the {len(labels)} samples")
    rng = np.random.default_rng(seed)
    order = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        order.extend(rng.permutation(members))
    assignment = np.empty(len(labels), dtype=np.int64)
    assignment[np.asarray(order)] = np.arange(len(order)) % k
    return FoldSplit(k, assignment)


def build_dataset(logs: Sequence[ChangeLog], catalog: LabelCatalog, n: int = DEFAULT_N, stride: int = 1,
                  keep_pre_injection: bool = True) -> Dataset:
    """Window every log; fault logs are labeled around their injection time."""
    if not logs:
        raise DatasetError("no logs given")
    samples, runs = [], []
    width = len(logs[0].signals)
    for run_id, log in enumerate(logs):
        if len(log.signals) != width:
            raise DatasetError(f"log {run_id} has {len(log.signals)} signals, expected {width}")
        vectors = vectorize(log)
        if log.fault is not None:
            ws = label_windows_for_fault(vectors, n, stride, log.fault, catalog, keep_pre_injection)
        else:
            ws = windows(vectors, n, stride, NORMAL if log.label is None else log.label)
        samples.extend(ws)
        runs.extend([run_id] * len(ws))
    return Dataset.from_samples(samples, runs, n=n, width=width)


def expected_window_count(length: int, n: int, stride: int) -> int:
    return math.floor((length - n) / stride) + 1
