"""Concrete PIL interpreter with memory/arithmetic monitors and edge coverage.

The AST is compiled once per program into nested closures; a session then
calls ``handle`` once per packet with globals persisting between packets.
Every monitor traps (crash semantics): the first violation ends the session.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .findings import (
    ARITH_OVERFLOW, ASSERT_FAIL, DIV_BY_ZERO, DOUBLE_FREE, MEMORY_LEAK,
    OOB_READ, OOB_WRITE, STEP_EXHAUSTED, USE_AFTER_FREE,
    CoverageMap, Finding, TraceStep, Witness, merge_coverage,
)
from .pil import ast as A

log = logging.getLogger(__name__)

INT_MIN, INT_MAX = A.INT_MIN, A.INT_MAX
MAX_ALLOC = 65535


@dataclass(frozen=True)
class ExecConfig:
    step_limit: int = 1_000_000
    call_depth_limit: int = 256
    leak_check: bool = True
    record_trace: bool = False
    record_decisions: bool = False

    def __post_init__(self):
        if self.step_limit < 1 or self.call_depth_limit < 1:
            raise ValueError("execution limits must be >= 1")


@dataclass
class SessionResult:
    finding: Optional[Finding]
    responses: bytes
    coverage: CoverageMap
    trace: tuple = ()
    decisions: tuple = ()
    steps: int = 0

    @property
    def violated(self) -> bool:
        return self.finding is not None

    @property
    def outcome(self) -> tuple:
        if self.finding is None:
            return ("Completed", self.responses)
        return ("Violated", self.finding)


class _Violation(Exception):
    def __init__(self, kind, sid, message, index=None, length=None):
        super().__init__(message)
        self.kind, self.sid, self.message = kind, sid, message
        self.index, self.length = index, length


class _Return(Exception):
    def __init__(self, value):
        self.value = value


@dataclass
class _HeapObj:
    data: bytearray
    site: int
    freed: bool = False


@dataclass
class _Machine:
    config: ExecConfig
    g: dict
    heap: dict = field(default_factory=dict)
    next_handle: int = 1
    steps: int = 0
    depth: int = 0
    edges: set = field(default_factory=set)
    functions: set = field(default_factory=set)
    trace: Optional[list] = None
    decisions: Optional[list] = None
    responses: bytearray = field(default_factory=bytearray)

    def tick(self, sid: int, fn: str, fr: dict) -> None:
        self.steps += 1
        if self.steps > self.config.step_limit:
            raise _Violation(STEP_EXHAUSTED, sid, f"step limit {self.config.step_limit} exhausted")
        if self.trace is not None:
            self.trace.append(TraceStep(sid, fn, _snapshot(fr, self.g)))

    def branch(self, sid: int, taken: bool) -> None:
        self.edges.add((sid, taken))
        if self.decisions is not None:
            self.decisions.append((sid, taken))

    def obj(self, h: int, sid: int, reading: bool = True) -> Optional[_HeapObj]:
        o = self.heap.get(h)
        if o is not None and o.freed:
            raise _Violation(USE_AFTER_FREE, sid, f"access to freed heap object #{h}")
        return o


def _render(v):
    if isinstance(v, (bytes, bytearray)):
        return bytes(v).hex()
    return int(v)


def _snapshot(fr: dict, g: dict) -> dict:
    snap = {k: _render(v) for k, v in g.items()}
    snap.update((k, _render(v)) for k, v in fr.items())
    return snap


def _wrap_byte(v) -> int:
    return int(v) & 0xFF


def _checked(v: int, sid: int, what: str) -> int:
    if v < INT_MIN or v > INT_MAX:
        raise _Violation(ARITH_OVERFLOW, sid, f"signed overflow in {what}: {v}")
    return v


def tdiv(a: int, b: int) -> int:
    """C-style division truncating toward zero."""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def tmod(a: int, b: int) -> int:
    return a - b * tdiv(a, b)


class _Compiler:
    """Turns a validated Program into closures ``f(machine, frame)``."""

    def __init__(self, program: A.Program):
        self.p = program
        self.funcs = {}

    def compile(self) -> dict:
        for f in self.p.functions:
            self.funcs[f.name] = None
        for f in self.p.functions:
            self.funcs[f.name] = self.function(f)
        return self.funcs

    def is_local(self, fn: str, name: str) -> bool:
        return name in self.p.local_types.get(fn, {})

    def getter(self, fn: str, name: str):
        if self.is_local(fn, name):
            return lambda m, fr: fr[name]
        return lambda m, fr: m.g[name]

    def setter(self, fn: str, name: str):
        if self.is_local(fn, name):
            def set_local(m, fr, v):
                fr[name] = v
            return set_local

        def set_global(m, fr, v):
            m.g[name] = v
        return set_global

    # -- functions -----------------------------------------------------------

    def function(self, f: A.Function):
        body = self.block(f.name, f.body)
        pnames = [p.name for p in f.params]
        fname = f.name
        limit_msg = "call depth limit exceeded"

        def run(m: _Machine, args: list, sid: int):
            m.depth += 1
            if m.depth > m.config.call_depth_limit:
                raise _Violation(STEP_EXHAUSTED, sid, limit_msg)
            m.functions.add(fname)
            fr = dict(zip(pnames, args))
            try:
                body(m, fr)
                result = 0
            except _Return as r:
                result = r.value
            m.depth -= 1
            return result
        return run

    def block(self, fn: str, body):
        stmts = [self.stmt(fn, s) for s in body]

        def run_block(m, fr):
            for s in stmts:
                s(m, fr)
        return run_block

    # -- statements ----------------------------------------------------------

    def stmt(self, fn: str, s):
        sid = s.sid
        tick = _Machine.tick
        if isinstance(s, A.VarDecl):
            init = self.initializer(fn, s.type, s.init, sid)
            name = s.name

            def decl(m, fr):
                tick(m, sid, fn, fr)
                fr[name] = init(m, fr)
            return decl
        if isinstance(s, A.Assign):
            t = self.p.type_of(fn, s.name)
            value = self.initializer(fn, t, s.value, sid)
            put = self.setter(fn, s.name)

            def assign(m, fr):
                tick(m, sid, fn, fr)
                put(m, fr, value(m, fr))
            return assign
        if isinstance(s, A.IndexAssign):
            return self.store(fn, s)
        if isinstance(s, A.If):
            cond = self.expr(fn, s.cond, sid)
            then_b = self.block(fn, s.then_body)
            else_b = self.block(fn, s.else_body) if s.else_body is not None else None

            def if_(m, fr):
                tick(m, sid, fn, fr)
                taken = bool(cond(m, fr))
                m.branch(sid, taken)
                if taken:
                    then_b(m, fr)
                elif else_b is not None:
                    else_b(m, fr)
            return if_
        if isinstance(s, A.While):
            cond = self.expr(fn, s.cond, sid)
            body = self.block(fn, s.body)

            def while_(m, fr):
                while True:
                    tick(m, sid, fn, fr)
                    taken = bool(cond(m, fr))
                    m.branch(sid, taken)
                    if not taken:
                        return
                    body(m, fr)
            return while_
        if isinstance(s, A.CallStmt):
            call = self.call(fn, s.call, sid)

            def call_stmt(m, fr):
                tick(m, sid, fn, fr)
                call(m, fr)
            return call_stmt
        if isinstance(s, A.Return):
            value = self.expr(fn, s.value, sid) if s.value is not None else (lambda m, fr: 0)

            def ret(m, fr):
                tick(m, sid, fn, fr)
                raise _Return(int(value(m, fr)))
            return ret
        if isinstance(s, A.Assert):
            cond = self.expr(fn, s.cond, sid)

            def assert_(m, fr):
                tick(m, sid, fn, fr)
                if not cond(m, fr):
                    raise _Violation(ASSERT_FAIL, sid, "assertion failed")
            return assert_
        if isinstance(s, A.Send):
            payload = self.payload(fn, s.value, sid)

            def send(m, fr):
                tick(m, sid, fn, fr)
                m.responses += payload(m, fr)
            return send
        if isinstance(s, A.Free):
            get = self.getter(fn, s.name)

            def free(m, fr):
                tick(m, sid, fn, fr)
                h = get(m, fr)
                if h == 0:
                    return
                o = m.heap[h]
                if o.freed:
                    raise _Violation(DOUBLE_FREE, sid, f"heap object #{h} freed twice")
                o.freed = True
            return free
        raise TypeError(f"unknown statement {s!r}")

    def store(self, fn: str, s: A.IndexAssign):
        sid = s.sid
        t = self.p.type_of(fn, s.name)
        get = self.getter(fn, s.name)
        index = self.expr(fn, s.index, sid)
        value = self.expr(fn, s.value, sid)
        tick = _Machine.tick

        if t.kind == "heapref":
            def heap_store(m, fr):
                tick(m, sid, fn, fr)
                i = index(m, fr)
                v = value(m, fr)
                o = m.obj(get(m, fr), sid)
                n = len(o.data) if o is not None else 0
                if not 0 <= i < n:
                    raise _Violation(OOB_WRITE, sid, f"write at index {i} of heap buffer of length {n}", i, n)
                o.data[i] = v & 0xFF
            return heap_store

        def buf_store(m, fr):
            tick(m, sid, fn, fr)
            i = index(m, fr)
            v = value(m, fr)
            b = get(m, fr)
            if not 0 <= i < len(b):
                raise _Violation(OOB_WRITE, sid, f"write at index {i} of '{s.name}' (length {len(b)})", i, len(b))
            b[i] = v & 0xFF
        return buf_store

    def initializer(self, fn: str, t: A.Type, e, sid: int):
        if t.kind == "buf":
            n = t.size
            if e is None:
                return lambda m, fr: bytearray(n)
            data = e.value

            def init_buf(m, fr):
                b = bytearray(n)
                b[:len(data)] = data
                return b
            return init_buf
        if e is None:
            return lambda m, fr: 0
        if t.kind == "heapref":
            if isinstance(e, A.Alloc):
                size = self.expr(fn, e.size, sid)

                def alloc(m, fr):
                    n = size(m, fr)
                    if n < 0 or n > MAX_ALLOC:
                        raise _Violation(ASSERT_FAIL, sid, f"invalid allocation size {n}")
                    h = m.next_handle
                    m.next_handle += 1
                    m.heap[h] = _HeapObj(bytearray(n), sid)
                    return h
                return alloc
            return self.getter(fn, e.name)
        if isinstance(e, A.Call):
            raw = self.call(fn, e, sid)
        else:
            raw = self.expr(fn, e, sid)
        if t.kind == "byte":
            return lambda m, fr: raw(m, fr) & 0xFF
        return lambda m, fr: int(raw(m, fr))

    def payload(self, fn: str, e, sid: int):
        """Byte-sequence value of a send()/bytes-argument expression (copied)."""
        if isinstance(e, A.StrLit):
            data = e.value
            return lambda m, fr: data
        t = self.p.type_of(fn, e.name)
        get = self.getter(fn, e.name)
        if t.kind == "heapref":
            def heap_payload(m, fr):
                o = m.obj(get(m, fr), sid)
                return bytes(o.data) if o is not None else b""
            return heap_payload
        return lambda m, fr: bytes(get(m, fr))

    def call(self, fn: str, c: A.Call, sid: int):
        target = c.name
        funcs = self.funcs
        params = self.p.function(target).params
        argf = []
        for a, p in zip(c.args, params):
            if p.type.kind == "bytes":
                argf.append(self.payload(fn, a, sid))
            elif p.type.kind == "heapref":
                argf.append(self.getter(fn, a.name))
            elif p.type.kind == "byte":
                inner = self.expr(fn, a, sid)
                argf.append(lambda m, fr, inner=inner: inner(m, fr) & 0xFF)
            else:
                inner = self.expr(fn, a, sid)
                argf.append(lambda m, fr, inner=inner: int(inner(m, fr)))

        def do_call(m, fr):
            args = [f(m, fr) for f in argf]
            return funcs[target](m, args, sid)
        return do_call

    # -- expressions ---------------------------------------------------------

    def expr(self, fn: str, e, sid: int):
        if isinstance(e, A.IntLit):
            v = e.value
            return lambda m, fr: v
        if isinstance(e, A.Var):
            return self.getter(fn, e.name)
        if isinstance(e, A.Index):
            return self.index(fn, e, sid)
        if isinstance(e, A.Len):
            t = self.p.type_of(fn, e.name)
            get = self.getter(fn, e.name)
            if t.kind == "heapref":
                def heap_len(m, fr):
                    o = m.heap.get(get(m, fr))
                    return len(o.data) if o is not None else 0
                return heap_len
            return lambda m, fr: len(get(m, fr))
        if isinstance(e, A.Load):
            return self.load(fn, e, sid)
        if isinstance(e, A.Unary):
            inner = self.expr(fn, e.operand, sid)
            if e.op == "!":
                return lambda m, fr: not inner(m, fr)
            return lambda m, fr: _checked(-inner(m, fr), sid, "negation")
        if isinstance(e, A.Binary):
            return self.binary(fn, e, sid)
        raise TypeError(f"unexpected expression {e!r}")

    def index(self, fn: str, e: A.Index, sid: int):
        t = self.p.type_of(fn, e.name)
        get = self.getter(fn, e.name)
        idx = self.expr(fn, e.index, sid)
        name = e.name
        if t.kind == "heapref":
            def heap_read(m, fr):
                i = idx(m, fr)
                o = m.obj(get(m, fr), sid)
                n = len(o.data) if o is not None else 0
                if not 0 <= i < n:
                    raise _Violation(OOB_READ, sid, f"read at index {i} of heap buffer of length {n}", i, n)
                return o.data[i]
            return heap_read

        def buf_read(m, fr):
            i = idx(m, fr)
            b = get(m, fr)
            if not 0 <= i < len(b):
                raise _Violation(OOB_READ, sid, f"read at index {i} of '{name}' (length {len(b)})", i, len(b))
            return b[i]
        return buf_read

    def load(self, fn: str, e: A.Load, sid: int):
        t = self.p.type_of(fn, e.name)
        get = self.getter(fn, e.name)
        off = self.expr(fn, e.offset, sid)
        w = e.width
        heap = t.kind == "heapref"

        def load(m, fr):
            i = off(m, fr)
            if heap:
                o = m.obj(get(m, fr), sid)
                b = o.data if o is not None else b""
            else:
                b = get(m, fr)
            n = len(b)
            if i < 0 or i + w > n:
                bad = i if i < 0 else max(i, n)
                raise _Violation(OOB_READ, sid, f"le{8 * w} read at index {bad} (length {n})", bad, n)
            v = int.from_bytes(b[i:i + w], "little")
            if w == 4 and v > INT_MAX:
                v -= 1 << 32
            return v
        return load

    def binary(self, fn: str, e: A.Binary, sid: int):
        lf = self.expr(fn, e.left, sid)
        rf = self.expr(fn, e.right, sid)
        op = e.op
        if op == "&&":
            return lambda m, fr: bool(lf(m, fr)) and bool(rf(m, fr))
        if op == "||":
            return lambda m, fr: bool(lf(m, fr)) or bool(rf(m, fr))
        if op == "+":
            return lambda m, fr: _checked(lf(m, fr) + rf(m, fr), sid, "addition")
        if op == "-":
            return lambda m, fr: _checked(lf(m, fr) - rf(m, fr), sid, "subtraction")
        if op == "*":
            return lambda m, fr: _checked(lf(m, fr) * rf(m, fr), sid, "multiplication")
        if op in ("/", "%"):
            is_div = op == "/"

            def divmod_(m, fr):
                a = lf(m, fr)
                b = rf(m, fr)
                if b == 0:
                    raise _Violation(DIV_BY_ZERO, sid, "division by zero" if is_div else "modulo by zero")
                if is_div:
                    return _checked(tdiv(a, b), sid, "division")
                return tmod(a, b)
            return divmod_
        cmp = {
            "==": lambda a, b: a == b, "!=": lambda a, b: a != b,
            "<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b, ">=": lambda a, b: a >= b,
        }[op]
        return lambda m, fr: cmp(lf(m, fr), rf(m, fr))


def _compiled(program: A.Program) -> dict:
    cache = program.__dict__.get("_fusegrey_compiled")
    if cache is None:
        cache = _Compiler(program).compile()
        program.__dict__["_fusegrey_compiled"] = cache
    return cache


def initial_globals(program: A.Program) -> dict:
    g = {}
    for d in program.globals:
        if d.type.kind == "buf":
            b = bytearray(d.type.size)
            if isinstance(d.init, A.StrLit):
                b[:len(d.init.value)] = d.init.value
            g[d.name] = b
        elif d.type.kind == "byte":
            g[d.name] = d.init.value & 0xFF
        else:
            g[d.name] = d.init.value
    return g


def run_session(program: A.Program, packets, config: ExecConfig = ExecConfig()) -> SessionResult:
    """Invoke the entry handler once per packet; stop at the first violation."""
    funcs = _compiled(program)
    entry = funcs[program.entry]
    packets = tuple(bytes(p) for p in packets)
    m = _Machine(config, initial_globals(program))
    if config.record_trace:
        m.trace = []
    if config.record_decisions:
        m.decisions = []
    finding = None
    try:
        for pkt in packets:
            m.depth = 0
            entry(m, [pkt], -1)
        if config.leak_check:
            live = sorted(h for h, o in m.heap.items() if not o.freed)
            if live:
                site = m.heap[live[0]].site
                finding = Finding(
                    MEMORY_LEAK, site, program.function_of(site),
                    f"{len(live)} heap object(s) never freed; first allocated here",
                    packets,
                )
                if m.trace is not None:
                    m.trace.append(TraceStep(site, program.function_of(site), _snapshot({}, m.g)))
    except _Violation as v:
        fn = program.function_of(v.sid) if v.sid in program.statements else program.entry
        finding = Finding(v.kind, v.sid, fn, v.message, packets, v.index, v.length)
    except RecursionError:
        # deep PIL recursion can exhaust the host stack before call_depth_limit
        finding = Finding(STEP_EXHAUSTED, -1, program.entry, "host recursion limit reached", packets)
    return SessionResult(
        finding,
        bytes(m.responses),
        CoverageMap(frozenset(m.edges), frozenset(m.functions)),
        tuple(m.trace) if m.trace is not None else (),
        tuple(m.decisions) if m.decisions is not None else (),
        m.steps,
    )


def make_witness(program: A.Program, packets, engine: str = "",
                 config: ExecConfig = ExecConfig()) -> Optional[Witness]:
    """Re-run ``packets`` with tracing on; None when the session does not violate."""
    cfg = ExecConfig(config.step_limit, config.call_depth_limit, config.leak_check, record_trace=True)
    res = run_session(program, packets, cfg)
    if res.finding is None:
        return None
    return Witness(res.finding, tuple(bytes(p) for p in packets), res.trace, engine)


def replay_witness(program: A.Program, witness: Witness, config: ExecConfig = ExecConfig()) -> bool:
    """True iff re-executing the witness packets reproduces its (kind, stmt)."""
    try:
        res = run_session(program, witness.packets, config)
    except Exception as exc:  # corrupted witness data must not escape as a crash
        log.warning("witness replay raised %s", exc)
        return False
    if res.finding is None:
        log.info("replay completed without violation; expected %s", witness.key)
        return False
    if res.finding.key != witness.key:
        log.info("replay produced %s, expected %s", res.finding.key, witness.key)
        return False
    return True


__all__ = [
    "ExecConfig", "SessionResult", "run_session", "replay_witness", "make_witness",
    "merge_coverage", "initial_globals", "tdiv", "tmod",
]
