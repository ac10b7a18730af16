"""Bounded model checking by symbolic interpretation with state merging.

Both sides of every branch are interpreted and joined with ``ite`` terms;
loops are unrolled up to ``unwind`` times and calls are inlined.  Each
dangerous operation becomes the query ``guard & violation``; afterwards the
negated violation is assumed so later checks only see first violations.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

from .findings import DOUBLE_FREE, MEMORY_LEAK, STEP_EXHAUSTED, CoverageMap, Witness
from .packet import concretize_session
from .pil import ast as A
from .runtime import ExecConfig, initial_globals, make_witness, replay_witness
from .solver import Sat, Solver, Unknown, Unsat
from .solver import terms as T
from .symbolic import HeapView, Semantics, bytes_terms, coerce, packet_terms, store

log = logging.getLogger(__name__)

VIOLATION_FOUND = "violation found"
SAFE_UP_TO_BOUNDS = "safe up to bounds"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class BmcConfig:
    unwind: int = 128
    check_unwinding: bool = True
    solver_budget_ms: Optional[float] = None
    solver_budget_nodes: int = 20_000
    time_budget_ms: Optional[float] = None
    max_queries: Optional[int] = None
    exec_config: ExecConfig = ExecConfig()

    def __post_init__(self):
        if self.unwind < 1:
            raise ValueError("unwind must be >= 1")
        if self.max_queries is not None and self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")


@dataclass(frozen=True)
class BObj:
    data: tuple
    site: int
    alloc: T.Term  # guard under which the object exists
    freed: T.Term = T.FALSE


@dataclass
class MergedState:
    env: dict
    globals: dict
    heap: dict  # object id -> BObj, ids in allocation order
    guard: T.Term = T.TRUE

    def copy(self, guard: T.Term = None) -> "MergedState":
        return MergedState(dict(self.env), dict(self.globals), dict(self.heap),
                           self.guard if guard is None else guard)

    @property
    def dead(self) -> bool:
        return self.guard.hi == 0


@dataclass
class BmcResult:
    findings: list
    unwinding_incomplete: set
    queries: int
    unknowns: int
    coverage: CoverageMap
    discarded: int = 0
    budget_exhausted: bool = False
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        if self.findings:
            return VIOLATION_FOUND
        if self.unknowns or self.budget_exhausted:
            return INCONCLUSIVE
        return SAFE_UP_TO_BOUNDS

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "findings": [w.finding.to_json() for w in self.findings],
            "unwinding_incomplete": sorted(self.unwinding_incomplete),
            "queries": self.queries,
            "solver_unknowns": self.unknowns,
            "discarded_witnesses": self.discarded,
            "budget_exhausted": self.budget_exhausted,
        }


# -- merging -----------------------------------------------------------------


def merge_value(c: T.Term, a, b):
    if a is b:
        return a
    if isinstance(a, tuple):
        if a == b:
            return a
        return tuple(x if x is y else T.ite(c, x, y) for x, y in zip(a, b))
    return T.ite(c, a, b)


def _merge_dicts(c: T.Term, a: dict, b: dict) -> dict:
    out = dict(b)
    for k, va in a.items():
        vb = b.get(k)
        out[k] = va if vb is None else merge_value(c, va, vb)
    return out


def _merge_heaps(c: T.Term, a: dict, b: dict) -> dict:
    out = {}
    for k in sorted(set(a) | set(b)):
        oa, ob = a.get(k), b.get(k)
        if oa is None or ob is None or oa is ob:
            out[k] = oa if ob is None else ob
        else:
            out[k] = BObj(merge_value(c, oa.data, ob.data), oa.site,
                          T.ite(c, oa.alloc, ob.alloc), T.ite(c, oa.freed, ob.freed))
    return out


def _conjuncts(t: T.Term) -> list:
    return list(t.args) if t.op == "and" else [t]


def _delta(guard: T.Term, base: T.Term) -> T.Term:
    """``d`` with guard == base & d when guard extends base by conjunction."""
    if guard is base:
        return T.TRUE
    have = set(_conjuncts(guard))
    need = _conjuncts(base)
    if all(x in have for x in need):
        drop = set(need)
        return T.and_(*[x for x in _conjuncts(guard) if x not in drop])
    return guard


def merge(then_state: MergedState, else_state: MergedState, cond: T.Term,
          base_guard: T.Term = None) -> MergedState:
    """Join two successors of a branch on ``cond``.

    With ``base_guard`` (the guard before the branch) the merged guard is
    kept in the factored form ``base & ite(cond, d_then, d_else)``.
    """
    if then_state.dead:
        return else_state
    if else_state.dead:
        return then_state
    env = _merge_dicts(cond, then_state.env, else_state.env)
    glob = _merge_dicts(cond, then_state.globals, else_state.globals)
    heap = _merge_heaps(cond, then_state.heap, else_state.heap)
    if base_guard is not None:
        dt = _delta(then_state.guard, T.and_(base_guard, cond))
        de = _delta(else_state.guard, T.and_(base_guard, T.not_(cond)))
        guard = T.and_(base_guard, T.ite(cond, dt, de))
    else:
        guard = T.or_(then_state.guard, else_state.guard)
    return MergedState(env, glob, heap, guard)


def merge_all(states: list, base_guard: T.Term) -> MergedState:
    """Join pairwise-disjoint states, each guarded by ``base & delta_i``."""
    live = [s for s in states if not s.dead]
    if not live:
        return states[-1]
    acc = live[-1]
    acc_delta = _delta(acc.guard, base_guard)
    for s in reversed(live[:-1]):
        d = _delta(s.guard, base_guard)
        acc = MergedState(
            _merge_dicts(d, s.env, acc.env), _merge_dicts(d, s.globals, acc.globals),
            _merge_heaps(d, s.heap, acc.heap), T.TRUE,
        )
        acc_delta = T.or_(d, acc_delta)
    acc.guard = T.and_(base_guard, acc_delta)
    return acc


# -- the engine --------------------------------------------------------------


class _Timeout(Exception):
    pass


class _Frame:
    def __init__(self, fn: str):
        self.fn = fn
        self.returns = []  # (guard, value, globals, heap)


class BoundedModelChecker(Semantics):
    def __init__(self, program: A.Program, session: list, config: BmcConfig):
        self.program = program
        self.session = list(session)
        self.config = config
        self.solver = Solver(config.solver_budget_ms, config.solver_budget_nodes)
        self.st: Optional[MergedState] = None
        self.frames = []
        self.findings = {}
        self.incomplete = set()
        self.unknowns = 0
        self.discarded = 0
        self.edges = set()
        self.functions = set()
        self.deadline = None
        self.next_obj = 0
        self.base = {v: b for sp in self.session for v, b in sp.identity_model().items()}

    # Semantics hooks ---------------------------------------------------------

    def current_fn(self) -> str:
        return self.frames[-1].fn

    def lookup(self, name: str):
        if name in self.st.env:
            return self.st.env[name]
        return self.st.globals[name]

    def assign(self, name: str, value) -> None:
        if name in self.program.local_types[self.current_fn()]:
            self.st.env[name] = value
        else:
            self.st.globals[name] = value

    def candidates(self, h: T.Term) -> list:
        """Object ids a heapref term may denote (0 = null excluded)."""
        out = set()
        stack = [h]
        while stack:
            t = stack.pop()
            if t.op == "const":
                if t.val:
                    out.add(t.val)
            elif t.op == "ite":
                stack.extend(t.args[1:])
            else:
                raise AssertionError(f"unexpected heapref term {T.to_sexpr(t)}")
        return sorted(out)

    def heap_view(self, h: T.Term) -> HeapView:
        ids = self.candidates(h)
        if h.op == "const":
            if not ids:
                return HeapView((), T.Const(0), T.FALSE)
            o = self.st.heap[ids[0]]
            return HeapView(o.data, T.Const(len(o.data)), o.freed)
        width = max((len(self.st.heap[k].data) for k in ids), default=0)
        elems = [T.Const(0)] * width
        length = T.Const(0)
        freed = T.FALSE
        for k in ids:
            o = self.st.heap[k]
            sel = T.eq(h, T.Const(k))
            padded = o.data + (T.Const(0),) * (width - len(o.data))
            elems = [T.ite(sel, x, y) for x, y in zip(padded, elems)]
            length = T.ite(sel, T.Const(len(o.data)), length)
            freed = T.ite(sel, o.freed, freed)
        return HeapView(tuple(elems), length, freed)

    def solve(self, constraints):
        if self.config.max_queries is not None and self.solver.queries >= self.config.max_queries:
            raise _Timeout()
        r = self.solver.solve(constraints, self.base)
        if isinstance(r, Unknown):
            self.unknowns += 1
        return r

    def feasible(self, cond: T.Term) -> bool:
        if cond.hi == 0:
            return False
        if cond.lo == 1 and self.st.guard.lo == 1:
            return True
        return not isinstance(self.solve([self.st.guard, cond]), Unsat)

    def check(self, kind: str, sid: int, viol: T.Term, ctx: T.Term) -> None:
        st = self.st
        cond = T.and_(ctx, viol)
        if cond.hi == 0 or st.dead:
            return
        key = (kind, sid)
        if key not in self.findings:
            r = self.solve([st.guard, cond])
            if isinstance(r, Unsat):
                return
            if isinstance(r, Sat):
                self.record(key, r.model)
        st.guard = T.and_(st.guard, T.not_(cond))

    def record(self, key: tuple, model: dict):
        w = extract_witness(self.program, self.session, model, key, self.config.exec_config)
        if w is None:
            self.discarded += 1
            return None
        self.findings[key] = w
        return w

    def tick(self) -> None:
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise _Timeout()

    # statements --------------------------------------------------------------

    def block(self, body) -> None:
        for s in body:
            if self.st.dead:
                return
            self.tick()
            self.stmt(s)

    def stmt(self, s) -> None:
        st = self.st
        if isinstance(s, (A.VarDecl, A.Assign)):
            t = s.type if isinstance(s, A.VarDecl) else self.type_of(s.name)
            e = s.init if isinstance(s, A.VarDecl) else s.value
            if isinstance(e, A.Call):
                value = self.call(e, s.sid)
                if not self.st.dead:
                    self.assign(s.name, coerce(t, value))
            else:
                self.assign(s.name, self.initial_value(t, e, s.sid))
        elif isinstance(s, A.IndexAssign):
            i, v = self.store_checks(s)
            if self.type_of(s.name).kind == "heapref":
                h = self.lookup(s.name)
                for k in self.candidates(h):
                    o = st.heap[k]
                    sel = T.TRUE if h.op == "const" else T.eq(h, T.Const(k))
                    st.heap[k] = BObj(store(o.data, i, v, sel), o.site, o.alloc, o.freed)
            else:
                self.assign(s.name, store(self.lookup(s.name), i, v))
        elif isinstance(s, A.If):
            self.branch(s)
        elif isinstance(s, A.While):
            self.loop(s)
        elif isinstance(s, A.CallStmt):
            self.call(s.call, s.sid)
        elif isinstance(s, A.Return):
            value = self.eval_int(s.value, s.sid) if s.value is not None else T.Const(0)
            if not st.dead:
                self.frames[-1].returns.append((st.guard, value, st.globals, st.heap))
            st.guard = T.FALSE
        elif isinstance(s, A.Assert):
            self.check("ASSERT_FAIL", s.sid, T.not_(self.eval_bool(s.cond, s.sid)), T.TRUE)
        elif isinstance(s, A.Send):
            if isinstance(s.value, A.Var) and self.type_of(s.value.name).kind == "heapref":
                hv = self.heap_view(self.lookup(s.value.name))
                self.check("USE_AFTER_FREE", s.sid, hv.freed, T.TRUE)
        elif isinstance(s, A.Free):
            h = self.lookup(s.name)
            hv = self.heap_view(h)
            self.check(DOUBLE_FREE, s.sid, T.and_(T.ne(h, T.Const(0)), hv.freed), T.TRUE)
            for k in self.candidates(h):
                o = st.heap[k]
                sel = T.TRUE if h.op == "const" else T.eq(h, T.Const(k))
                st.heap[k] = BObj(o.data, o.site, o.alloc, T.or_(sel, o.freed))
        else:
            raise TypeError(f"unexpected statement {s!r}")

    def initial_value(self, t: A.Type, e, sid: int):
        if t.kind == "buf":
            data = e.value if e is not None else b""
            return bytes_terms(data.ljust(t.size, b"\0"))
        if t.kind == "heapref":
            if e is None:
                return T.Const(0)
            if isinstance(e, A.Alloc):
                n = self.concretize_int(self.alloc_size(e, sid))
                # ids are unique across branches so merged heaps never collide
                self.next_obj += 1
                k = self.next_obj
                self.st.heap[k] = BObj((T.Const(0),) * n, sid, self.st.guard)
                return T.Const(k)
            return self.lookup(e.name)
        if e is None:
            return T.Const(0)
        return coerce(t, self.eval(e, sid))

    def concretize_int(self, n: T.Term) -> int:
        if n.op == "const" or self.st.dead:
            return max(0, n.lo) if n.op != "const" else n.val
        r = self.solve([self.st.guard])
        if not isinstance(r, Sat):
            self.st.guard = T.FALSE
            return 0
        model = dict(self.base)
        model.update(r.model)
        val = T.eval_term(n, model)
        self.st.guard = T.and_(self.st.guard, T.eq(n, T.Const(val)))
        return val

    def branch(self, s: A.If) -> None:
        st = self.st
        c = self.eval_bool(s.cond, s.sid)
        if st.dead:
            return
        can_then = self.feasible(c)
        can_else = self.feasible(T.not_(c))
        if can_then:
            self.edges.add((s.sid, True))
        if can_else:
            self.edges.add((s.sid, False))
        if not can_then and not can_else:
            st.guard = T.FALSE
            return
        if not can_else:
            self.block(s.then_body)
            return
        if not can_then:
            if s.else_body is not None:
                self.block(s.else_body)
            return
        base = st.guard
        then_st = st.copy(T.and_(base, c))
        else_st = st.copy(T.and_(base, T.not_(c)))
        self.st = then_st
        self.block(s.then_body)
        then_st = self.st
        self.st = else_st
        if s.else_body is not None:
            self.block(s.else_body)
        else_st = self.st
        self.st = merge(then_st, else_st, c, base)

    def loop(self, s: A.While) -> None:
        base = self.st.guard
        exits = []
        for _ in range(self.config.unwind):
            st = self.st
            c = self.eval_bool(s.cond, s.sid)
            if st.dead:
                break
            can_stay = self.feasible(c)
            can_leave = self.feasible(T.not_(c))
            if can_stay:
                self.edges.add((s.sid, True))
            if can_leave:
                self.edges.add((s.sid, False))
            if not can_stay:
                if not can_leave:
                    st.guard = T.FALSE
                break
            if can_leave:
                exits.append(st.copy(T.and_(st.guard, T.not_(c))))
                st.guard = T.and_(st.guard, c)
            self.block(s.body)
        else:
            st = self.st
            c = self.eval_bool(s.cond, s.sid)
            if not st.dead and self.feasible(c):
                if self.config.check_unwinding:
                    self.incomplete.add(s.sid)
                st.guard = T.and_(st.guard, T.not_(c))
        exits.append(self.st)
        self.st = merge_all(exits, base)

    def call(self, c: A.Call, sid: int) -> T.Term:
        args = self.call_args(c, sid)
        if self.st.dead:
            return T.Const(0)
        if len(self.frames) + 1 > self.config.exec_config.call_depth_limit:
            self.check(STEP_EXHAUSTED, sid, T.TRUE, T.TRUE)
            self.st.guard = T.FALSE
            return T.Const(0)
        return self.invoke(c.name, args)

    def invoke(self, fn: str, args: list) -> T.Term:
        f = self.program.function(fn)
        st = self.st
        if fn not in self.functions and self.feasible(T.TRUE):
            self.functions.add(fn)
        saved_env = st.env
        base = st.guard
        st.env = {p.name: a for p, a in zip(f.params, args)}
        frame = _Frame(fn)
        self.frames.append(frame)
        self.block(f.body)
        self.frames.pop()
        st = self.st
        outs = frame.returns + [(st.guard, T.Const(0), st.globals, st.heap)]
        outs = [o for o in outs if o[0].hi != 0]
        if not outs:
            self.st = MergedState(saved_env, st.globals, st.heap, T.FALSE)
            return T.Const(0)
        g, value, glob, heap = outs[-1]
        d_acc = _delta(g, base)
        for g_i, v_i, glob_i, heap_i in reversed(outs[:-1]):
            d = _delta(g_i, base)
            value = T.ite(d, v_i, value)
            glob = _merge_dicts(d, glob_i, glob)
            heap = _merge_heaps(d, heap_i, heap)
            d_acc = T.or_(d, d_acc)
        self.st = MergedState(saved_env, glob, heap, T.and_(base, d_acc))
        return value

    # driver ------------------------------------------------------------------

    def run(self) -> BmcResult:
        if self.config.time_budget_ms is not None:
            self.deadline = time.monotonic() + self.config.time_budget_ms / 1000.0
        g = {}
        for name, v in initial_globals(self.program).items():
            g[name] = bytes_terms(v) if isinstance(v, (bytes, bytearray)) else T.Const(v)
        self.st = MergedState({}, g, {}, T.TRUE)
        budget_exhausted = False
        try:
            for sp in self.session:
                if self.st.dead:
                    break
                self.frames = [_Frame("<session>")]
                self.invoke(self.program.entry, [packet_terms(sp)])
            self.leak_checks()
        except _Timeout:
            budget_exhausted = True
        return BmcResult(
            list(self.findings.values()), self.incomplete, self.solver.queries, self.unknowns,
            CoverageMap(frozenset(self.edges), frozenset(self.functions)),
            self.discarded, budget_exhausted,
        )

    def leak_checks(self) -> None:
        if not self.config.exec_config.leak_check or self.st.dead:
            return
        earlier = T.FALSE
        for k in sorted(self.st.heap):
            o = self.st.heap[k]
            live = T.and_(o.alloc, T.not_(o.freed))
            key = (MEMORY_LEAK, o.site)
            viol = T.and_(live, T.not_(earlier))
            if key not in self.findings and viol.hi != 0:
                r = self.solve([self.st.guard, viol])
                if isinstance(r, Sat):
                    self.record(key, r.model)
            earlier = T.or_(earlier, live)


def extract_witness(program: A.Program, session: list, model: dict, key: tuple,
                    config: ExecConfig = ExecConfig()) -> Optional[Witness]:
    """Concretize a violation model and confirm it by concrete replay.

    Returns None (and logs) when the replay does not reproduce ``key``.
    """
    packets = concretize_session(session, model)
    w = make_witness(program, packets, "bmc", config)
    if w is None or w.key != key or not replay_witness(program, w, config):
        log.warning("bmc model for %s replays as %s; discarded", key, None if w is None else w.key)
        return None
    return w


def bmc_run(program: A.Program, session: list, config: BmcConfig = BmcConfig()) -> BmcResult:
    """Check every reachable operation of ``session`` (SymbolicPackets) up to the bounds."""
    return BoundedModelChecker(program, session, config).run()
