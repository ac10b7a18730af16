"""PIL expression semantics over solver terms, shared by symex and bmc.

Values: scalars are integer Terms (bytes already reduced to 0..255),
buffers are tuples of byte Terms, heaprefs are engine specific.  Every
dangerous operation goes through ``check(kind, sid, viol, ctx)`` where
``viol`` is the violation condition and ``ctx`` the short-circuit context
under which the operation is evaluated; it is evaluated in the exact order
the concrete interpreter uses, so the first violation on a path is the
one the interpreter reports.
"""

from __future__ import annotations

from .findings import (
    ARITH_OVERFLOW, ASSERT_FAIL, DIV_BY_ZERO, OOB_READ, OOB_WRITE, USE_AFTER_FREE,
)
from .pil import ast as A
from .solver import terms as T

ZERO = T.Const(0)
MAX_ALLOC = 65535


def bytes_terms(data: bytes) -> tuple:
    return tuple(T.Const(b) for b in data)


def packet_terms(sp) -> tuple:
    """Byte terms of a SymbolicPacket: marked indices become variables."""
    marks = sp.mark_map
    return tuple(T.Byte(marks[i]) if i in marks else T.Const(b) for i, b in enumerate(sp.base))


def index_range(i: T.Term, n: int) -> range:
    return range(max(0, i.lo), min(n - 1, i.hi) + 1)


def select(elems: tuple, i: T.Term) -> T.Term:
    """``elems[i]`` for a possibly symbolic index; out-of-range reads give 0."""
    n = len(elems)
    if i.op == "const":
        return elems[i.val] if 0 <= i.val < n else ZERO
    cand = index_range(i, n)
    if len(cand) == 0:
        return ZERO
    first = elems[cand[0]]
    if all(elems[j] is first or elems[j] == first for j in cand):
        return first
    out = elems[cand[-1]]
    for j in reversed(cand[:-1]):
        out = T.ite(T.eq(i, T.Const(j)), elems[j], out)
    return out


def store(elems: tuple, i: T.Term, v: T.Term, guard: T.Term = T.TRUE) -> tuple:
    """Functional update of ``elems[i] = v`` (only where ``guard`` holds)."""
    n = len(elems)
    out = list(elems)
    if i.op == "const":
        if 0 <= i.val < n:
            out[i.val] = v if guard is T.TRUE else T.ite(guard, v, elems[i.val])
        return tuple(out)
    for j in index_range(i, n):
        out[j] = T.ite(T.and_(guard, T.eq(i, T.Const(j))), v, elems[j])
    return tuple(out)


def coerce(t: A.Type, v: T.Term) -> T.Term:
    if t.kind == "byte":
        return T.byte_of(v)
    return T.to_int(v)


class HeapView:
    """What an access through a heapref sees: contents, length, freed flag."""

    __slots__ = ("elems", "length", "freed")

    def __init__(self, elems: tuple, length: T.Term, freed: T.Term):
        self.elems, self.length, self.freed = elems, length, freed


class Semantics:
    """Expression evaluator; engines supply state access and ``check``."""

    program: A.Program

    # engine hooks --------------------------------------------------------------

    def lookup(self, name: str):
        raise NotImplementedError

    def heap_view(self, h) -> HeapView:
        raise NotImplementedError

    def check(self, kind: str, sid: int, viol: T.Term, ctx: T.Term) -> None:
        raise NotImplementedError

    def current_fn(self) -> str:
        raise NotImplementedError

    # helpers -------------------------------------------------------------------

    def type_of(self, name: str) -> A.Type:
        return self.program.type_of(self.current_fn(), name)

    def guarded_check(self, kind, sid, viol, ctx):
        if viol.hi == 0 or ctx.hi == 0:
            return
        self.check(kind, sid, viol, ctx)

    def view(self, name: str, sid: int, ctx: T.Term):
        """(elems, length Term) of a buffer-like variable, after the UAF check."""
        t = self.type_of(name)
        v = self.lookup(name)
        if t.kind == "heapref":
            hv = self.heap_view(v)
            self.guarded_check(USE_AFTER_FREE, sid, hv.freed, ctx)
            return hv.elems, hv.length
        return v, T.Const(len(v))

    def payload(self, e, sid: int, ctx: T.Term = T.TRUE) -> tuple:
        if isinstance(e, A.StrLit):
            return bytes_terms(e.value)
        elems, length = self.view(e.name, sid, ctx)
        if length.op != "const":
            raise NotImplementedError("payload of symbolic length")
        return tuple(elems[:length.val])

    # expressions ---------------------------------------------------------------

    def eval(self, e, sid: int, ctx: T.Term = T.TRUE) -> T.Term:
        if isinstance(e, A.IntLit):
            return T.Const(e.value)
        if isinstance(e, A.Var):
            return self.lookup(e.name)
        if isinstance(e, A.Index):
            i = self.eval_int(e.index, sid, ctx)
            elems, length = self.view(e.name, sid, ctx)
            viol = T.or_(T.lt(i, ZERO), T.ge(i, length))
            self.guarded_check(OOB_READ, sid, viol, ctx)
            return select(elems, i)
        if isinstance(e, A.Len):
            if self.type_of(e.name).kind == "heapref":
                return self.heap_view(self.lookup(e.name)).length
            return T.Const(len(self.lookup(e.name)))
        if isinstance(e, A.Load):
            i = self.eval_int(e.offset, sid, ctx)
            elems, length = self.view(e.name, sid, ctx)
            w = e.width
            viol = T.or_(T.lt(i, ZERO), T.gt(i, T.sub(length, T.Const(w))))
            self.guarded_check(OOB_READ, sid, viol, ctx)
            return T.compose(*(select(elems, T.add(i, T.Const(k))) for k in range(w)))
        if isinstance(e, A.Unary):
            x = self.eval(e.operand, sid, ctx)
            if e.op == "!":
                return T.not_(T.to_bool(x))
            x = T.to_int(x)
            self.guarded_check(ARITH_OVERFLOW, sid, T.ovf_sub(ZERO, x), ctx)
            return T.neg(x)
        if isinstance(e, A.Binary):
            return self.binary(e, sid, ctx)
        raise TypeError(f"unexpected expression {e!r}")

    def eval_int(self, e, sid: int, ctx: T.Term = T.TRUE) -> T.Term:
        return T.to_int(self.eval(e, sid, ctx))

    def eval_bool(self, e, sid: int, ctx: T.Term = T.TRUE) -> T.Term:
        return T.to_bool(self.eval(e, sid, ctx))

    def binary(self, e: A.Binary, sid: int, ctx: T.Term) -> T.Term:
        op = e.op
        if op == "&&":
            a = self.eval_bool(e.left, sid, ctx)
            if a.hi == 0:
                return T.FALSE
            return T.and_(a, self.eval_bool(e.right, sid, T.and_(ctx, a)))
        if op == "||":
            a = self.eval_bool(e.left, sid, ctx)
            if a.lo == 1:
                return T.TRUE
            return T.or_(a, self.eval_bool(e.right, sid, T.and_(ctx, T.not_(a))))
        a = self.eval_int(e.left, sid, ctx)
        b = self.eval_int(e.right, sid, ctx)
        if op == "+":
            self.guarded_check(ARITH_OVERFLOW, sid, T.ovf_add(a, b), ctx)
            return T.add(a, b)
        if op == "-":
            self.guarded_check(ARITH_OVERFLOW, sid, T.ovf_sub(a, b), ctx)
            return T.sub(a, b)
        if op == "*":
            self.guarded_check(ARITH_OVERFLOW, sid, T.ovf_mul(a, b), ctx)
            return T.mul(a, b)
        if op in ("/", "%"):
            self.guarded_check(DIV_BY_ZERO, sid, T.eq(b, ZERO), ctx)
            if op == "/":
                ovf = T.and_(T.eq(a, T.Const(T.INT_MIN)), T.eq(b, T.Const(-1)))
                self.guarded_check(ARITH_OVERFLOW, sid, ovf, ctx)
                return T.div(a, b)
            return T.mod(a, b)
        return {
            "==": T.eq, "!=": T.ne, "<": T.lt, "<=": T.le, ">": T.gt, ">=": T.ge,
        }[op](a, b)

    # statement pieces shared by both engines -----------------------------------

    def alloc_size(self, e: A.Alloc, sid: int) -> T.Term:
        n = self.eval_int(e.size, sid)
        viol = T.or_(T.lt(n, ZERO), T.gt(n, T.Const(MAX_ALLOC)))
        self.guarded_check(ASSERT_FAIL, sid, viol, T.TRUE)
        return n

    def store_checks(self, s: A.IndexAssign):
        """Evaluate an index assignment up to the write: (index, byte value)."""
        i = self.eval_int(s.index, s.sid)
        v = T.byte_of(self.eval_int(s.value, s.sid))
        elems, length = self.view(s.name, s.sid, T.TRUE)
        viol = T.or_(T.lt(i, ZERO), T.ge(i, length))
        self.guarded_check(OOB_WRITE, s.sid, viol, T.TRUE)
        return i, v

    def call_args(self, c: A.Call, sid: int) -> list:
        params = self.program.function(c.name).params
        args = []
        for a, p in zip(c.args, params):
            k = p.type.kind
            if k == "bytes":
                args.append(self.payload(a, sid))
            elif k == "heapref":
                args.append(self.lookup(a.name))
            elif k == "byte":
                args.append(T.byte_of(self.eval_int(a, sid)))
            else:
                args.append(self.eval_int(a, sid))
        return args
