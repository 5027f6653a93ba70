"""Boolean plant simulator driven by a PLC-style scan cycle.

A plant description lists signals (sensors and actuators), physical
process rules (``guard``, ``delay``, sensor effects) and the control
program (``guard``, actuator effects).  One scan reads the sensors through
the fault masks, runs the control rules in order, writes the actuators
through the fault masks, then lets the physical process advance by one
scan period.

Text format, one statement per line, ``#`` starts a comment::

    scan 100
    signal k1 sensor init 0
    signal m1 actuator init 0
    control when k1 & !m1 set m1=1
    process when m1 after 800+-100 set k1=0
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FaultError, PlantError, PlantSyntaxError
from .faults import ActiveFaultSet, FaultSpec

SENSOR = "sensor"
ACTUATOR = "actuator"
KEYWORDS = frozenset(
    {"signal", "sensor", "actuator", "init", "process", "control", "when", "after", "set", "scan"}
)
BUNDLED_PLANT = "import_station.plant"


@dataclass(frozen=True)
class SignalDef:
    name: str
    kind: str
    initial: bool


@dataclass(frozen=True)
class Expr:
    """Parsed boolean guard; ``fn`` evaluates it over a value vector."""

    text: str
    names: tuple
    fn: Callable = field(compare=False, repr=False)

    def __call__(self, values) -> bool:
        return self.fn(values)


@dataclass(frozen=True)
class ProcessRule:
    guard: Expr
    delay: int
    effects: tuple  # ((signal index, value), ...)
    jitter: int = 0


@dataclass(frozen=True)
class ControlRule:
    guard: Expr
    effects: tuple


@dataclass(frozen=True)
class PlantDescription:
    signals: tuple
    process: tuple
    program: tuple
    scan_period: int

    @property
    def names(self) -> tuple:
        return tuple(s.name for s in self.signals)

    @property
    def width(self) -> int:
        return len(self.signals)

    def index(self, name: str) -> int:
        for i, s in enumerate(self.signals):
            if s.name == name:
                return i
        raise PlantError(f"undeclared signal {name!r}")

    @property
    def sensors(self) -> tuple:
        return tuple(s.name for s in self.signals if s.kind == SENSOR)

    @property
    def actuators(self) -> tuple:
        return tuple(s.name for s in self.signals if s.kind == ACTUATOR)


# --------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<int>\d+)|(?P<sym>\+-|±|[!&|()=,]))")


def _tokenize(line: str, lineno: int):
    tokens = []
    pos = 0
    stripped_end = len(line.rstrip())
    while pos < stripped_end:
        m = _TOKEN_RE.match(line, pos)
        if m is None or m.end() == pos:
            col = pos + 1 + (len(line[pos:]) - len(line[pos:].lstrip()))
            raise PlantSyntaxError(f"unexpected character {line[col - 1]!r}", lineno, col)
        kind = m.lastgroup
        col = m.start(kind) + 1
        tokens.append((kind, m.group(kind), col))
        pos = m.end()
    return tokens


class _LineParser:
    def __init__(self, line: str, lineno: int):
        self.lineno = lineno
        self.line = line
        self.tokens = _tokenize(line, lineno)
        self.pos = 0

    def error(self, message, col=None):
        if col is None:
            col = self.tokens[self.pos][2] if self.pos < len(self.tokens) else len(self.line.rstrip()) + 1
        raise PlantSyntaxError(message, self.lineno, col)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None, None)

    def take(self, kind=None, value=None, what=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            found = "end of line" if tok[0] is None else repr(tok[1])
            self.error(f"expected {what or value or kind}, found {found}")
        self.pos += 1
        return tok

    def done(self):
        if self.pos != len(self.tokens):
            self.error(f"unexpected {self.peek()[1]!r}")

    def ident(self, what="signal name"):
        tok = self.take("name", what=what)
        if tok[1] in KEYWORDS:
            self.error(f"keyword {tok[1]!r} used as {what}", tok[2])
        return tok

    def integer(self, what):
        return int(self.take("int", what=what)[1])

    def bit(self):
        tok = self.take("int", what="0 or 1")
        if tok[1] not in ("0", "1"):
            self.error("expected 0 or 1", tok[2])
        return tok[1] == "1"

    # expression grammar:  or := and ('|' and)* ; and := unary ('&' unary)* ;
    # unary := '!' unary | atom ; atom := name | 0 | 1 | '(' or ')'
    def expr(self):
        start = self.pos
        node = self._or()
        if self.pos == start:
            self.error("empty expression")
        return node

    def _or(self):
        node = self._and()
        while self.peek()[1] == "|":
            self.pos += 1
            node = ("or", node, self._and())
        return node

    def _and(self):
        node = self._unary()
        while self.peek()[1] == "&":
            self.pos += 1
            node = ("and", node, self._unary())
        return node

    def _unary(self):
        if self.peek()[1] == "!":
            self.pos += 1
            return ("not", self._unary())
        return self._atom()

    def _atom(self):
        kind, value, col = self.peek()
        if value == "(":
            self.pos += 1
            node = self._or()
            self.take("sym", ")")
            return node
        if kind == "int" and value in ("0", "1"):
            self.pos += 1
            return ("const", value == "1")
        if kind == "name" and value not in KEYWORDS:
            self.pos += 1
            return ("var", value, col)
        self.error("expected signal name, 0, 1, '!' or '('")

    def assignments(self):
        out = [self._assign()]
        while self.peek()[1] == ",":
            self.pos += 1
            out.append(self._assign())
        return out

    def _assign(self):
        tok = self.ident()
        self.take("sym", "=")
        return (tok[1], self.bit(), tok[2])


def _expr_names(node, acc):
    tag = node[0]
    if tag == "var":
        acc.append((node[1], node[2]))
    elif tag == "not":
        _expr_names(node[1], acc)
    elif tag in ("and", "or"):
        _expr_names(node[1], acc)
        _expr_names(node[2], acc)
    return acc


def _compile(node, index):
    tag = node[0]
    if tag == "const":
        v = node[1]
        return lambda vals: v
    if tag == "var":
        i = index[node[1]]
        return lambda vals: bool(vals[i])
    if tag == "not":
        inner = _compile(node[1], index)
        return lambda vals: not inner(vals)
    a, b = _compile(node[1], index), _compile(node[2], index)
    if tag == "and":
        return lambda vals: a(vals) and b(vals)
    return lambda vals: a(vals) or b(vals)


def parse_plant(text: str) -> PlantDescription:
    """Parse and validate a plant description document."""
    signals = []
    raw_process = []
    raw_control = []
    scan = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        p = _LineParser(line, lineno)
        _, head, col = p.take("name", what="statement")
        if head == "signal":
            name = p.ident()
            kind = p.take("name", what="'sensor' or 'actuator'")
            if kind[1] not in (SENSOR, ACTUATOR):
                p.error("expected 'sensor' or 'actuator'", kind[2])
            p.take("name", "init")
            init = p.bit()
            p.done()
            signals.append((SignalDef(name[1], kind[1], init), lineno, name[2]))
        elif head == "scan":
            if scan is not None:
                p.error("duplicate scan statement", col)
            scan = (p.integer("scan period (ms)"), lineno, col)
            p.done()
        elif head == "process":
            p.take("name", "when")
            guard = p.expr()
            p.take("name", "after")
            delay = p.integer("delay (ms)")
            jitter = 0
            if p.peek()[1] in ("+-", "±"):
                p.pos += 1
                jitter = p.integer("jitter (ms)")
            p.take("name", "set")
            effects = p.assignments()
            p.done()
            raw_process.append((guard, delay, jitter, effects, line, lineno))
        elif head == "control":
            p.take("name", "when")
            guard = p.expr()
            p.take("name", "set")
            effects = p.assignments()
            p.done()
            raw_control.append((guard, effects, line, lineno))
        else:
            p.error(f"unknown statement {head!r}", col)

    index = {}
    for sig, lineno, col in signals:
        if sig.name in index:
            raise PlantError(f"line {lineno}: duplicate signal name {sig.name!r}")
        index[sig.name] = len(index)
    if not signals:
        raise PlantError("plant declares no signals")
    sigdefs = tuple(s for s, _, _ in signals)
    if scan is None:
        scan_period = 100
    else:
        scan_period, lineno, _ = scan
        if scan_period <= 0:
            raise PlantError(f"line {lineno}: scan period must be positive")

    def resolve_guard(node, line, lineno):
        names = _expr_names(node, [])
        for name, col in names:
            if name not in index:
                raise PlantError(f"line {lineno}, column {col}: rule references undeclared signal {name!r}")
        text = re.split(r"\bwhen\b", line, 1)[1]
        text = re.split(r"\b(?:after|set)\b", text, 1)[0].strip()
        return Expr(text, tuple(dict.fromkeys(n for n, _ in names)), _compile(node, index))

    def resolve_effects(effects, lineno, required_kind, who):
        out = []
        for name, value, col in effects:
            if name not in index:
                raise PlantError(f"line {lineno}, column {col}: rule references undeclared signal {name!r}")
            sig = sigdefs[index[name]]
            if sig.kind != required_kind:
                raise PlantError(f"line {lineno}, column {col}: {who} rule drives {sig.kind} {name!r}")
            out.append((index[name], value))
        return tuple(out)

    process = []
    for guard, delay, jitter, effects, line, lineno in raw_process:
        if jitter > delay:
            raise PlantError(f"line {lineno}: jitter {jitter} exceeds delay {delay}")
        process.append(
            ProcessRule(
                resolve_guard(guard, line, lineno),
                delay,
                resolve_effects(effects, lineno, SENSOR, "process"),
                jitter,
            )
        )
    program = []
    for guard, effects, line, lineno in raw_control:
        program.append(
            ControlRule(resolve_guard(guard, line, lineno), resolve_effects(effects, lineno, ACTUATOR, "control"))
        )
    return PlantDescription(sigdefs, tuple(process), tuple(program), scan_period)


def load_plant(path=None) -> PlantDescription:
    """Load a plant file; ``None`` loads the bundled import station."""
    if path is None:
        text = resources.files("deslab.data").joinpath(BUNDLED_PLANT).read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_plant(text)


def bundled_plant_text() -> str:
    return resources.files("deslab.data").joinpath(BUNDLED_PLANT).read_text(encoding="utf-8")


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class PlantState:
    true_values: tuple
    observed_values: tuple
    commanded: tuple  # controller output image, one entry per signal (sensors unused)
    clock: int
    pending: tuple = ()  # ((fire_time, rule index, effects), ...) sorted
    guards: tuple = ()  # guard value of each process rule at the previous scan


def initial_state(plant: PlantDescription, faults: Optional[ActiveFaultSet] = None) -> PlantState:
    faults = faults or ActiveFaultSet()
    init = tuple(s.initial for s in plant.signals)
    true = tuple(faults.apply(s.name, s.initial, 0) if s.kind == ACTUATOR else s.initial for s in plant.signals)
    observed = tuple(faults.apply(s.name, v, 0) for s, v in zip(plant.signals, true))
    return PlantState(true, observed, init, 0, (), (False,) * len(plant.process))


def _draw_delay(rule: ProcessRule, rng) -> int:
    if rule.jitter == 0 or rng is None:
        return rule.delay
    return rule.delay + int(rng.integers(-rule.jitter, rule.jitter + 1))


def scan_step(
    plant: PlantDescription,
    state: PlantState,
    faults: Optional[ActiveFaultSet] = None,
    rng: Optional[np.random.Generator] = None,
) -> PlantState:
    """Execute exactly one scan and advance the physical process by one period.

    ``rng`` draws jittered process delays; without it nominal delays are used.
    """
    if len(state.true_values) != plant.width:
        raise PlantError(f"state width {len(state.true_values)} does not match plant width {plant.width}")
    faults = faults or ActiveFaultSet()
    now = state.clock
    sigs = plant.signals
    true = list(state.true_values)

    # (a) input image: sensors through the fault masks
    image = list(state.commanded)
    for i, s in enumerate(sigs):
        if s.kind == SENSOR:
            image[i] = faults.apply(s.name, true[i], now)

    # (b) control program, in order; later rules see earlier writes
    for rule in plant.program:
        if rule.guard(image):
            for i, v in rule.effects:
                image[i] = v
    commanded = tuple(image[i] if s.kind == ACTUATOR else state.commanded[i] for i, s in enumerate(sigs))

    # (c) output update through the fault masks
    for i, s in enumerate(sigs):
        if s.kind == ACTUATOR:
            true[i] = faults.apply(s.name, commanded[i], now)

    # physical process: arm newly enabled rules, drop disabled ones, fire due effects
    end = now + plant.scan_period
    pending = list(state.pending)
    guards = []
    for r, rule in enumerate(plant.process):
        g = rule.guard(true)
        was = state.guards[r] if r < len(state.guards) else False
        if g and not was:
            pending.append((now + _draw_delay(rule, rng), r, rule.effects))
        elif not g:
            pending = [p for p in pending if p[1] != r]
        guards.append(g)
    pending.sort(key=lambda p: (p[0], p[1]))
    due = [p for p in pending if p[0] <= end]
    pending = [p for p in pending if p[0] > end]
    for _, _, effects in due:
        for i, v in effects:
            true[i] = v

    observed = tuple(
        faults.apply(s.name, true[i], now) if s.kind == SENSOR else true[i] for i, s in enumerate(sigs)
    )
    return PlantState(tuple(true), observed, commanded, end, tuple(pending), tuple(guards))


def simulate(
    plant: PlantDescription,
    horizon: int,
    faults: Sequence[FaultSpec] = (),
    seed: int = 0,
):
    """Yield ``(time, observed snapshot)`` from t=0 until the clock reaches ``horizon``."""
    if horizon < plant.scan_period:
        raise PlantError(f"horizon {horizon} ms is shorter than the scan period {plant.scan_period} ms")
    names = set(plant.names)
    for spec in faults:
        if spec.target not in names:
            raise FaultError(f"fault targets undeclared signal {spec.target!r}")
    ActiveFaultSet(faults)  # rejects two faults on one signal
    rng = np.random.default_rng(seed)
    state = initial_state(plant, ActiveFaultSet.at(faults, 0))
    yield state.clock, state.observed_values
    while state.clock < horizon:
        state = scan_step(plant, state, ActiveFaultSet.at(faults, state.clock), rng)
        yield state.clock, state.observed_values


def run_scenario(
    plant: PlantDescription,
    horizon: int,
    faults: Sequence[FaultSpec] = (),
    seed: int = 0,
    label: Optional[int] = None,
):
    """Simulate and return the change log of observed values."""
    from .acquisition import record

    return record(
        simulate(plant, horizon, faults, seed),
        plant.names,
        scan_period=plant.scan_period,
        label=label,
        fault=faults[0] if len(faults) == 1 else None,
    )


def resting_values(plant: PlantDescription, horizon: int, seed: int = 0) -> dict:
    """Signals that never change after the first scan of a fault-free run, with their value."""
    log = run_scenario(plant, horizon, [], seed)
    moving = {r.variable for r in log.records if r.time > plant.scan_period}
    last = {}
    for r in log.records:
        last[r.variable] = r.value
    return {name: last[name] for name in plant.names if name not in moving}


def without_jitter(plant: PlantDescription) -> PlantDescription:
    """Copy of ``plant`` whose process delays are all nominal."""
    return replace(plant, process=tuple(replace(r, jitter=0) for r in plant.process))
