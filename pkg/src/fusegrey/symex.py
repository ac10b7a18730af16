"""Path-based symbolic execution with per-branch forking.

Each function body is lowered to a flat instruction list so a state is just
a stack of (function, instruction index, environment) frames and can be
copied at a fork.  Unmarked packet bytes stay constants, so only branches
that depend on marked fields fork.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .findings import MEMORY_LEAK, STEP_EXHAUSTED, CoverageMap
from .packet import concretize_session, write_corpus_dir
from .pil import ast as A
from .pil.callgraph import CallGraph, build_call_graph
from .runtime import ExecConfig, initial_globals, make_witness, run_session
from .solver import Sat, Solver, Unknown, Unsat
from .solver import terms as T
from .symbolic import HeapView, Semantics, bytes_terms, coerce, packet_terms, store

log = logging.getLogger(__name__)

STRATEGIES = ("dfs", "uncovered-first")


@dataclass(frozen=True)
class ExploreConfig:
    max_paths: int = 4096
    loop_bound: int = 64
    time_budget_ms: Optional[float] = None
    strategy: str = "uncovered-first"
    solver_budget_ms: Optional[float] = None
    solver_budget_nodes: int = 20_000
    exec_config: ExecConfig = ExecConfig()

    def __post_init__(self):
        if self.max_paths < 1 or self.loop_bound < 1:
            raise ValueError("max_paths and loop_bound must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")


# -- lowering ----------------------------------------------------------------


def lower_function(f: A.Function) -> list:
    """Instructions: ("exec", stmt) | ("call", stmt) | ("br", stmt, then, else)
    | ("jmp", target) | ("ret", stmt) | ("end",)."""
    code = []

    def block(body):
        for s in body:
            if isinstance(s, A.If):
                at = len(code)
                code.append(None)
                block(s.then_body)
                if s.else_body is not None:
                    jmp_at = len(code)
                    code.append(None)
                    else_at = len(code)
                    block(s.else_body)
                    code[jmp_at] = ("jmp", len(code))
                    code[at] = ("br", s, at + 1, else_at)
                else:
                    code[at] = ("br", s, at + 1, len(code))
            elif isinstance(s, A.While):
                head = len(code)
                code.append(None)
                block(s.body)
                code.append(("jmp", head))
                code[head] = ("br", s, head + 1, len(code))
            elif isinstance(s, A.Return):
                code.append(("ret", s))
            elif isinstance(s, A.CallStmt) or (
                    isinstance(s, (A.VarDecl, A.Assign))
                    and isinstance(s.init if isinstance(s, A.VarDecl) else s.value, A.Call)):
                code.append(("call", s))
            else:
                code.append(("exec", s))

    block(f.body)
    code.append(("end",))
    return code


def lower_program(program: A.Program) -> dict:
    cache = program.__dict__.get("_fusegrey_lowered")
    if cache is None:
        cache = {f.name: lower_function(f) for f in program.functions}
        program.__dict__["_fusegrey_lowered"] = cache
    return cache


def _successors(ins, pc: int) -> list:
    if ins[0] == "br":
        return [ins[2], ins[3]]
    if ins[0] == "jmp":
        return [ins[1]]
    if ins[0] in ("ret", "end"):
        return []
    return [pc + 1]


def point_distances(program: A.Program, graph: CallGraph, uncovered) -> dict:
    """Function -> list over instructions of the fewest call hops from that
    program point to an uncovered function (0 inside one, inf if none)."""
    code = lower_program(program)
    fdist = {f: graph.distance_to_any(f, uncovered) for f in code}
    out = {}
    for fn, ins_list in code.items():
        if fn in uncovered:
            out[fn] = [0] * len(ins_list)
            continue
        own = []
        for ins in ins_list:
            d = math.inf
            if ins[0] == "call":
                callee = _call_of(ins[1]).name
                d = 1 + fdist.get(callee, math.inf) if callee not in uncovered else 1
            own.append(d)
        dist = list(own)
        changed = True
        while changed:
            changed = False
            for pc in reversed(range(len(ins_list))):
                best = own[pc]
                for s in _successors(ins_list[pc], pc):
                    best = min(best, dist[s])
                if best < dist[pc]:
                    dist[pc] = best
                    changed = True
        out[fn] = dist
    return out


def _call_of(s) -> A.Call:
    if isinstance(s, A.CallStmt):
        return s.call
    return s.init if isinstance(s, A.VarDecl) else s.value


# -- state -------------------------------------------------------------------


@dataclass
class Frame:
    fn: str
    pc: int
    env: dict
    loops: dict = field(default_factory=dict)
    ret_to: Optional[tuple] = None  # (name, type) receiving the return value
    call_sid: int = -1

    def copy(self) -> "Frame":
        return Frame(self.fn, self.pc, dict(self.env), dict(self.loops), self.ret_to, self.call_sid)


@dataclass(frozen=True)
class HeapObj:
    data: tuple
    site: int
    freed: bool = False


@dataclass
class SymState:
    frames: list
    globals: dict
    heap: dict
    next_handle: int
    path_condition: list
    packet_cursor: int
    edges: set
    functions: set
    decisions: list
    steps: int = 0
    seq: int = 0
    unknown: bool = False

    @property
    def coverage(self) -> CoverageMap:
        return CoverageMap(frozenset(self.edges), frozenset(self.functions))

    @property
    def loop_total(self) -> int:
        return sum(sum(f.loops.values()) for f in self.frames)

    @property
    def current_function(self) -> Optional[str]:
        return self.frames[-1].fn if self.frames else None

    def fork(self, seq: int) -> "SymState":
        return SymState(
            [f.copy() for f in self.frames], dict(self.globals), dict(self.heap),
            self.next_handle, list(self.path_condition), self.packet_cursor,
            set(self.edges), set(self.functions), list(self.decisions),
            self.steps, seq, self.unknown,
        )


@dataclass
class PathResult:
    packets: Optional[tuple]  # None when the final path condition was Unknown
    outcome: str  # Completed | Violated | BoundExhausted | Unknown
    finding_key: Optional[tuple]
    path_condition_size: int
    decisions: tuple
    coverage: CoverageMap
    bisimilar: Optional[bool] = None
    unknown_fork: bool = False


@dataclass
class ExploreResult:
    paths: list
    findings: list  # Witness objects, first-found order
    coverage: CoverageMap
    bound_exhaustions: int = 0
    solver_unknowns: int = 0
    queries: int = 0
    replay_mismatches: int = 0
    halted: str = "exhausted"  # exhausted | max_paths | time

    def __iter__(self):
        return iter((self.paths, self.findings))

    def summary(self) -> dict:
        return {
            "paths": len(self.paths),
            "bound_exhaustions": self.bound_exhaustions,
            "solver_unknowns": self.solver_unknowns,
            "queries": self.queries,
            "findings": [w.finding.to_json() for w in self.findings],
            "halted": self.halted,
            "bisimulation_failures": sum(1 for p in self.paths if p.bisimilar is False),
        }


class _PathEnd(Exception):
    def __init__(self, outcome: str, key=None):
        self.outcome, self.key = outcome, key


# -- prioritisation ----------------------------------------------------------


def prioritize(frontier: list, graph: CallGraph, uncovered, program: A.Program = None,
               _dist: dict = None) -> list:
    """Order states by call-graph distance to the uncovered set, then by
    fewer loop iterations, then by insertion order."""
    uncovered = frozenset(uncovered)
    if not uncovered:
        return list(frontier)
    if _dist is None and program is not None:
        _dist = point_distances(program, graph, uncovered)

    def dist(st: SymState) -> float:
        if not st.frames:
            return math.inf
        if _dist is None:
            return graph.distance_to_any(st.current_function, uncovered)
        return min(_dist[f.fn][f.pc] for f in st.frames)

    return sorted(frontier, key=lambda st: (dist(st), st.loop_total, st.seq))


class _Frontier:
    """Pending states.  With a key, the smallest key comes out first (ties in
    insertion order); without one the newest state does.  ``rekey`` re-sorts
    everything when the priority changes."""

    def __init__(self):
        self.key = None
        self.items = []  # (n, state) stack, or a heap of (key, n, state)
        self.n = 0

    def __len__(self):
        return len(self.items)

    def push(self, st) -> None:
        self.n += 1
        if self.key is None:
            self.items.append((self.n, st))
        else:
            heapq.heappush(self.items, (self.key(st), self.n, st))

    def pop(self):
        if self.key is None:
            return self.items.pop()[1]
        return heapq.heappop(self.items)[2]

    def rekey(self, key) -> None:
        entries = [e[-2:] for e in self.items]
        entries.sort(key=lambda e: e[0])
        self.key = key
        if key is None:
            self.items = entries
        else:
            self.items = [(key(st), n, st) for n, st in entries]
            heapq.heapify(self.items)


# -- the engine --------------------------------------------------------------


class Explorer(Semantics):
    def __init__(self, program: A.Program, session: list, config: ExploreConfig,
                 priority_targets=frozenset()):
        self.program = program
        self.session = list(session)
        self.config = config
        self.code = lower_program(program)
        self.graph = build_call_graph(program)
        self.solver = Solver(config.solver_budget_ms, config.solver_budget_nodes)
        self.targets = frozenset(priority_targets)
        self.st: Optional[SymState] = None
        self.findings = {}
        self.seq = 0
        self.unknowns = 0
        self.mismatches = 0
        self.bound_exhaustions = 0
        self.covered_functions = set()
        self._dist_key = None
        self.base = {v: b for sp in self.session for v, b in sp.identity_model().items()}

    # Semantics hooks ---------------------------------------------------------

    def current_fn(self) -> str:
        return self.st.frames[-1].fn

    def lookup(self, name: str):
        fr = self.st.frames[-1]
        if name in fr.env:
            return fr.env[name]
        return self.st.globals[name]

    def assign(self, name: str, value) -> None:
        fr = self.st.frames[-1]
        if name in self.program.local_types[fr.fn]:
            fr.env[name] = value
        else:
            self.st.globals[name] = value

    def heap_view(self, h) -> HeapView:
        o = self.st.heap.get(h)
        if o is None:
            return HeapView((), T.Const(0), T.FALSE)
        return HeapView(o.data, T.Const(len(o.data)), T.Bool(o.freed))

    def solve(self, constraints):
        r = self.solver.solve(constraints, self.base)
        if isinstance(r, Unknown):
            self.unknowns += 1
        return r

    def check(self, kind: str, sid: int, viol: T.Term, ctx: T.Term) -> None:
        st = self.st
        cond = T.and_(ctx, viol)
        if cond.hi == 0:
            return
        key = (kind, sid)
        if cond.lo == 1:
            if key not in self.findings:
                self.record(key, self.solve(st.path_condition))
            raise _PathEnd("Violated", key)
        if key not in self.findings:
            r = self.solve(st.path_condition + [cond])
            if isinstance(r, Unsat):
                return
            self.record(key, r)
        rest = T.not_(cond)
        r = self.solve(st.path_condition + [rest])
        if isinstance(r, Unsat):
            raise _PathEnd("Violated", key)
        if isinstance(r, Unknown):
            st.unknown = True
        st.path_condition.append(rest)

    def record(self, key: tuple, result) -> None:
        if not isinstance(result, Sat):
            return
        packets = concretize_session(self.session, result.model)
        w = make_witness(self.program, packets, "symex", self.config.exec_config)
        if w is None or w.key != key:
            self.mismatches += 1
            log.warning("symex model for %s replays as %s; discarded", key, None if w is None else w.key)
            return
        self.findings[key] = w

    # execution ---------------------------------------------------------------

    def initial_state(self) -> SymState:
        g = {}
        for name, v in initial_globals(self.program).items():
            kind = self.program.global_types[name].kind
            if kind == "heapref":
                g[name] = v
            else:
                g[name] = bytes_terms(v) if isinstance(v, (bytes, bytearray)) else T.Const(v)
        return SymState([], g, {}, 1, [], 0, set(), set(), [])

    def enter(self, fn: str, args: list, ret_to, call_sid: int) -> None:
        st = self.st
        if len(st.frames) + 1 > self.config.exec_config.call_depth_limit:
            self.check(STEP_EXHAUSTED, call_sid, T.TRUE, T.TRUE)
        f = self.program.function(fn)
        env = {p.name: a for p, a in zip(f.params, args)}
        st.frames.append(Frame(fn, 0, env, {}, ret_to, call_sid))
        st.functions.add(fn)
        self.covered_functions.add(fn)

    def tick(self, sid: int) -> None:
        st = self.st
        st.steps += 1
        if st.steps > self.config.exec_config.step_limit:
            self.check(STEP_EXHAUSTED, sid, T.TRUE, T.TRUE)

    def run(self, st: SymState) -> list:
        """Advance ``st`` until it forks (returns successors) or ends
        (returns []; the terminal PathResult is appended to self.paths)."""
        self.st = st
        try:
            while True:
                if not st.frames:
                    if st.packet_cursor >= len(self.session):
                        self.session_end()
                        self.finish(st, "Completed", None)
                        return []
                    pkt = packet_terms(self.session[st.packet_cursor])
                    st.packet_cursor += 1
                    self.enter(self.program.entry, [pkt], None, -1)
                    continue
                fr = st.frames[-1]
                ins = self.code[fr.fn][fr.pc]
                op = ins[0]
                if op == "jmp":
                    fr.pc = ins[1]
                elif op == "exec":
                    self.tick(ins[1].sid)
                    self.exec_stmt(ins[1])
                    fr.pc += 1
                elif op == "call":
                    s = ins[1]
                    self.tick(s.sid)
                    c = _call_of(s)
                    args = self.call_args(c, s.sid)
                    ret_to = None
                    if not isinstance(s, A.CallStmt):
                        ret_to = (s.name, s.type if isinstance(s, A.VarDecl) else self.type_of(s.name))
                    fr.pc += 1
                    self.enter(c.name, args, ret_to, s.sid)
                elif op == "ret" or op == "end":
                    value = T.Const(0)
                    if op == "ret":
                        self.tick(ins[1].sid)
                        if ins[1].value is not None:
                            value = self.eval_int(ins[1].value, ins[1].sid)
                    done = st.frames.pop()
                    if done.ret_to is not None:
                        name, t = done.ret_to
                        self.assign(name, coerce(t, value))
                else:
                    succ = self.branch(fr, ins)
                    if succ is not None:
                        return succ
        except _PathEnd as end:
            self.finish(st, end.outcome, end.key)
            return []

    def branch(self, fr: Frame, ins):
        s, then_pc, else_pc = ins[1], ins[2], ins[3]
        st = self.st
        self.tick(s.sid)
        cond = self.eval_bool(s.cond, s.sid)
        is_loop = isinstance(s, A.While)
        if cond.lo == 1 or cond.hi == 0:
            self.take(st, st.frames[-1], s, cond.lo == 1, then_pc, else_pc, is_loop, symbolic=False)
            return None
        r_then = self.solve(st.path_condition + [cond])
        r_else = self.solve(st.path_condition + [T.not_(cond)])
        sides = []
        if not isinstance(r_then, Unsat):
            sides.append((True, cond, r_then))
        if not isinstance(r_else, Unsat):
            sides.append((False, T.not_(cond), r_else))
        if not sides:
            # the path condition itself went infeasible (only after Unknowns)
            raise _PathEnd("Unknown")
        if len(sides) == 1:
            taken = sides[0][0]
            self.take(st, st.frames[-1], s, taken, then_pc, else_pc, is_loop, symbolic=True)
            return None
        out = []
        for i, (taken, c, r) in enumerate(sides):
            child = st if i == len(sides) - 1 else st.fork(0)
            self.seq += 1
            child.seq = self.seq
            child.path_condition.append(c)
            if isinstance(r, Unknown):
                child.unknown = True
            self.st = child
            try:
                self.take(child, child.frames[-1], s, taken, then_pc, else_pc, is_loop, symbolic=True)
            except _PathEnd as end:
                self.finish(child, end.outcome, end.key)
                continue
            out.append(child)
        self.st = st
        return out

    def take(self, st, fr, s, taken, then_pc, else_pc, is_loop, symbolic) -> None:
        st.edges.add((s.sid, taken))
        st.decisions.append((s.sid, taken))
        if is_loop:
            if not taken:
                fr.loops.pop(s.sid, None)
            elif symbolic:
                n = fr.loops.get(s.sid, 0) + 1
                fr.loops[s.sid] = n
                if n > self.config.loop_bound:
                    raise _PathEnd("BoundExhausted")
        fr.pc = then_pc if taken else else_pc

    def exec_stmt(self, s) -> None:
        st = self.st
        if isinstance(s, (A.VarDecl, A.Assign)):
            t = s.type if isinstance(s, A.VarDecl) else self.type_of(s.name)
            e = s.init if isinstance(s, A.VarDecl) else s.value
            self.assign(s.name, self.initial_value(t, e, s.sid))
        elif isinstance(s, A.IndexAssign):
            i, v = self.store_checks(s)
            t = self.type_of(s.name)
            if t.kind == "heapref":
                h = self.lookup(s.name)
                o = st.heap[h]
                st.heap[h] = HeapObj(store(o.data, i, v), o.site, o.freed)
            else:
                self.assign(s.name, store(self.lookup(s.name), i, v))
        elif isinstance(s, A.Assert):
            self.check("ASSERT_FAIL", s.sid, T.not_(self.eval_bool(s.cond, s.sid)), T.TRUE)
        elif isinstance(s, A.Send):
            self.payload(s.value, s.sid)
        elif isinstance(s, A.Free):
            h = self.lookup(s.name)
            if h != 0:
                o = st.heap[h]
                self.check("DOUBLE_FREE", s.sid, T.Bool(o.freed), T.TRUE)
                st.heap[h] = HeapObj(o.data, o.site, True)
        else:
            raise TypeError(f"unexpected statement {s!r}")

    def initial_value(self, t: A.Type, e, sid: int):
        if t.kind == "buf":
            data = e.value if e is not None else b""
            return bytes_terms(data.ljust(t.size, b"\0"))
        if t.kind == "heapref":
            if e is None:
                return 0
            if isinstance(e, A.Alloc):
                n = self.alloc_size(e, sid)
                n = self.concretize_int(n)
                h = self.st.next_handle
                self.st.next_handle += 1
                self.st.heap[h] = HeapObj((T.Const(0),) * n, sid)
                return h
            return self.lookup(e.name)
        if e is None:
            return T.Const(0)
        return coerce(t, self.eval(e, sid))

    def concretize_int(self, n: T.Term) -> int:
        """Pin a symbolic integer to one feasible value on this path."""
        if n.op == "const":
            return n.val
        r = self.solve(self.st.path_condition)
        if not isinstance(r, Sat):
            raise _PathEnd("Unknown")
        full = {v: sp.identity_model().get(v) for sp in self.session for v in sp.variables}
        full.update(r.model)
        val = T.eval_term(n, full)
        self.st.path_condition.append(T.eq(n, T.Const(val)))
        return val

    def session_end(self) -> None:
        if not self.config.exec_config.leak_check:
            return
        live = sorted(h for h, o in self.st.heap.items() if not o.freed)
        if live:
            self.check(MEMORY_LEAK, self.st.heap[live[0]].site, T.TRUE, T.TRUE)

    # terminal paths ----------------------------------------------------------

    def finish(self, st: SymState, outcome: str, key) -> None:
        r = self.solve(st.path_condition)
        packets = None
        bisim = None
        if isinstance(r, Sat):
            packets = tuple(concretize_session(self.session, r.model))
            cfg = self.config.exec_config
            res = run_session(self.program, packets, ExecConfig(
                cfg.step_limit, cfg.call_depth_limit, cfg.leak_check, record_decisions=True))
            got = list(res.decisions)
            want = st.decisions
            if outcome == "BoundExhausted":
                bisim = got[:len(want)] == want
            else:
                bisim = got == want and (res.finding.key if res.finding else None) == key
            if not bisim:
                log.warning("path %d failed the bisimulation check", len(self.paths))
        elif isinstance(r, Unsat):
            outcome = "Infeasible"
        if outcome == "BoundExhausted":
            self.bound_exhaustions += 1
        if outcome != "Infeasible":
            self.paths.append(PathResult(
                packets, outcome if packets is not None else "Unknown", key,
                len(st.path_condition), tuple(st.decisions), st.coverage, bisim, st.unknown,
            ))

    # driver ------------------------------------------------------------------

    def pick(self, frontier: "_Frontier") -> SymState:
        if self.config.strategy != "dfs":
            uncovered = self.targets - self.covered_functions
            if uncovered != self._dist_key:
                self._dist_key = uncovered
                if uncovered:
                    dist = point_distances(self.program, self.graph, uncovered)
                    frontier.rekey(lambda st: (
                        min(dist[f.fn][f.pc] for f in st.frames) if st.frames else math.inf,
                        st.loop_total, st.seq))
                else:
                    frontier.rekey(None)
        return frontier.pop()

    def explore(self) -> ExploreResult:
        self.paths = []
        deadline = None
        if self.config.time_budget_ms is not None:
            deadline = time.monotonic() + self.config.time_budget_ms / 1000.0
        frontier = _Frontier()
        frontier.push(self.initial_state())
        halted = "exhausted"
        while frontier:
            if len(self.paths) >= self.config.max_paths:
                halted = "max_paths"
                break
            if deadline is not None and time.monotonic() > deadline:
                halted = "time"
                break
            st = self.pick(frontier)
            for child in self.run(st):
                frontier.push(child)
        cov = CoverageMap()
        for p in self.paths:
            cov = cov.merge(p.coverage)
        cov = cov.merge(CoverageMap(frozenset(), frozenset(self.covered_functions)))
        return ExploreResult(
            self.paths, list(self.findings.values()), cov, self.bound_exhaustions,
            self.unknowns, self.solver.queries, self.mismatches, halted,
        )


def explore(program: A.Program, session: list, config: ExploreConfig = ExploreConfig(),
            priority_targets=frozenset()) -> ExploreResult:
    """Symbolically execute ``session`` (a list of SymbolicPacket)."""
    return Explorer(program, session, config, priority_targets).explore()


def path_packet(explorer: Explorer, st: SymState):
    """Concrete session for a terminal state, or an Unknown result."""
    r = explorer.solver.solve(st.path_condition)
    if isinstance(r, Sat):
        return concretize_session(explorer.session, r.model)
    assert not isinstance(r, Unsat), "alive state with an unsatisfiable path condition"
    return r


def store_paths(result: ExploreResult, out_dir) -> None:
    """Write ``path_<n>_pkt_<m>.bin`` files plus ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n, p in enumerate(result.paths):
        if p.packets is not None:
            write_corpus_dir(out, p.packets, prefix=f"path_{n}_pkt_")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
