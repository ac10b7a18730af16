"""Term language for path conditions over symbolic packet bytes.

Integer terms denote int32 values with two's-complement wraparound; boolean
terms are truth values.  ``Div``/``Mod`` by zero produce a poison value that
makes every enclosing comparison false.  ``Ovf*`` predicates are exact.

Capitalised builders (``Add``, ``Eq``, ...) construct nodes verbatim.  The
lowercase builders (``add``, ``eq``, ...) fold constants, drop identities
and decide comparisons from cached value intervals; the engines only use
those.  ``simplify`` rebuilds a raw term through the lowercase builders.
"""

from __future__ import annotations

INT_MIN = -(2**31)
INT_MAX = 2**31 - 1

BOOL_OPS = frozenset({
    "bool", "eq", "ne", "lt", "le", "gt", "ge", "and", "or", "not",
    "ovf_add", "ovf_sub", "ovf_mul",
})
CMP_OPS = frozenset({"eq", "ne", "lt", "le", "gt", "ge"})


class _Poison:
    __slots__ = ()

    def __repr__(self) -> str:
        return "POISON"


POISON = _Poison()


def wrap(v: int) -> int:
    return ((v + 2**31) & 0xFFFFFFFF) - 2**31


def in_range(v: int) -> bool:
    return INT_MIN <= v <= INT_MAX


class Term:
    """Immutable expression node; ``lo``/``hi`` bound every non-poison value.

    For boolean nodes the interval is over {0, 1}: (1, 1) means provably true,
    (0, 0) provably false.
    """

    __slots__ = ("op", "args", "val", "lo", "hi", "poison", "is_bool", "_h", "_vars", "_size")

    def __init__(self, op: str, args: tuple = (), val=None):
        self.op = op
        self.args = args
        self.val = val
        self._h = hash((op, val) + args)
        self._vars = None
        self._size = None
        self.is_bool = op in BOOL_OPS or (op == "ite" and args[1].is_bool)
        self.lo, self.hi, self.poison = _bounds(self)

    @property
    def is_const(self) -> bool:
        return self.op in ("const", "bool")

    def __hash__(self) -> int:
        return self._h

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Term) or self._h != other._h:
            return False
        return self.op == other.op and self.val == other.val and self.args == other.args

    def __repr__(self) -> str:
        return to_sexpr(self)

    @property
    def vars(self) -> frozenset:
        if self._vars is None:
            out = set()
            seen = set()
            stack = [self]
            while stack:
                t = stack.pop()
                if id(t) in seen:
                    continue
                seen.add(id(t))
                if t._vars is not None:
                    out |= t._vars
                elif t.op == "byte":
                    out.add(t.val)
                else:
                    stack.extend(t.args)
            self._vars = frozenset(out)
        return self._vars

    @property
    def size(self) -> int:
        """Number of distinct DAG nodes."""
        if self._size is None:
            seen = set()
            stack = [self]
            while stack:
                t = stack.pop()
                if id(t) not in seen:
                    seen.add(id(t))
                    stack.extend(t.args)
            self._size = len(seen)
        return self._size


def _bounds(t: Term):
    a = t.args
    return node_interval(t.op, t.val, [(x.lo, x.hi) for x in a], [x.poison for x in a])


def node_interval(op: str, val, ivs: list, pois: list):
    """(lo, hi, may_poison) of a node from its children's intervals."""
    if op == "const":
        return val, val, False
    if op == "poison":
        return 0, 0, True
    if op == "bool":
        v = 1 if val else 0
        return v, v, False
    if op == "byte":
        return 0, 255, False
    if op in BOOL_OPS:
        return _bool_interval(op, ivs, pois) + (False,)
    poison = any(pois)
    if op == "add":
        (al, ah), (bl, bh) = ivs
        return _clip(al + bl, ah + bh) + (poison,)
    if op == "sub":
        (al, ah), (bl, bh) = ivs
        return _clip(al - bh, ah - bl) + (poison,)
    if op == "mul":
        (al, ah), (bl, bh) = ivs
        c = (al * bl, al * bh, ah * bl, ah * bh)
        return _clip(min(c), max(c)) + (poison,)
    if op == "div":
        (xl, xh), (yl, yh) = ivs
        poison = poison or (yl <= 0 <= yh)
        if xl >= 0 and yl > 0:
            return xl // yh, xh // yl, poison
        m = max(abs(xl), abs(xh))
        return max(-m, INT_MIN), min(m, INT_MAX), poison
    if op == "mod":
        (xl, xh), (yl, yh) = ivs
        poison = poison or (yl <= 0 <= yh)
        b = max(abs(yl), abs(yh)) - 1
        if b < 0:
            return 0, 0, True
        if xl >= 0:
            return 0, min(xh, b), poison
        if xh <= 0:
            return max(xl, -b), 0, poison
        return max(xl, -b), min(xh, b), poison
    if op == "ite":
        (cl, ch), (xl, xh), (yl, yh) = ivs
        if cl == 1:
            return xl, xh, pois[1]
        if ch == 0:
            return yl, yh, pois[2]
        return min(xl, yl), max(xh, yh), pois[1] or pois[2]
    if op == "compose":
        lo = hi = 0
        for i, (bl, bh) in enumerate(ivs):
            if not (0 <= bl and bh <= 255):
                bl, bh = 0, 255
            lo += bl << (8 * i)
            hi += bh << (8 * i)
        if hi <= INT_MAX:
            return lo, hi, poison
        if lo > INT_MAX:
            return lo - 2**32, hi - 2**32, poison
        return INT_MIN, INT_MAX, poison
    raise ValueError(f"unknown op {op}")


def _clip(lo: int, hi: int):
    if lo < INT_MIN or hi > INT_MAX:
        return INT_MIN, INT_MAX
    return lo, hi


def _bool_interval(op: str, ivs: list, pois: list):
    if op in CMP_OPS:
        (xl, xh), (yl, yh) = ivs
        safe = not (pois[0] or pois[1])
        if op == "gt":
            op, xl, xh, yl, yh = "lt", yl, yh, xl, xh
        elif op == "ge":
            op, xl, xh, yl, yh = "le", yl, yh, xl, xh
        if op == "lt":
            if xh < yl and safe:
                return 1, 1
            if xl >= yh:
                return 0, 0
        elif op == "le":
            if xh <= yl and safe:
                return 1, 1
            if xl > yh:
                return 0, 0
        elif op == "eq":
            if xh < yl or yh < xl:
                return 0, 0
            if xl == xh == yl == yh and safe:
                return 1, 1
        elif op == "ne":
            if (xh < yl or yh < xl) and safe:
                return 1, 1
            if xl == xh == yl == yh:
                return 0, 0
        return 0, 1
    if op == "and":
        if any(h == 0 for _, h in ivs):
            return 0, 0
        if all(l == 1 for l, _ in ivs):
            return 1, 1
        return 0, 1
    if op == "or":
        if any(l == 1 for l, _ in ivs):
            return 1, 1
        if all(h == 0 for _, h in ivs):
            return 0, 0
        return 0, 1
    if op == "not":
        (l, h), = ivs
        return 1 - h, 1 - l
    if op in ("ovf_add", "ovf_sub", "ovf_mul"):
        (xl, xh), (yl, yh) = ivs
        if op == "ovf_add":
            lo, hi = xl + yl, xh + yh
        elif op == "ovf_sub":
            lo, hi = xl - yh, xh - yl
        else:
            c = (xl * yl, xl * yh, xh * yl, xh * yh)
            lo, hi = min(c), max(c)
        if in_range(lo) and in_range(hi):
            return 0, 0
        if (hi < INT_MIN or lo > INT_MAX) and not (pois[0] or pois[1]):
            return 1, 1
        return 0, 1
    return 0, 1


# -- raw builders ------------------------------------------------------------

_CONSTS = {}


def Const(v: int) -> Term:
    v = wrap(int(v))
    t = _CONSTS.get(v)
    if t is None:
        t = Term("const", (), v)
        if -512 <= v <= 512:
            _CONSTS[v] = t
    return t


TRUE = Term("bool", (), True)
FALSE = Term("bool", (), False)
POISON_TERM = Term("poison")


def Bool(v: bool) -> Term:
    return TRUE if v else FALSE


def Byte(name: str) -> Term:
    return Term("byte", (), name)


def _raw(op):
    def build(*args):
        return Term(op, tuple(args))
    build.__name__ = op.capitalize()
    return build


Add, Sub, Mul, Div, Mod = _raw("add"), _raw("sub"), _raw("mul"), _raw("div"), _raw("mod")
Eq, Ne, Lt, Le, Gt, Ge = _raw("eq"), _raw("ne"), _raw("lt"), _raw("le"), _raw("gt"), _raw("ge")
And, Or, Not, Ite = _raw("and"), _raw("or"), _raw("not"), _raw("ite")
Compose = _raw("compose")
OvfAdd, OvfSub, OvfMul = _raw("ovf_add"), _raw("ovf_sub"), _raw("ovf_mul")


# -- simplifying builders ----------------------------------------------------


def const(v: int) -> Term:
    return Const(v)


def _fold(t: Term) -> Term:
    """Replace a node whose interval is a single point by a constant."""
    if t.is_bool:
        if t.lo == t.hi:
            return Bool(t.lo == 1)
        return t
    if t.lo == t.hi and not t.poison:
        return Const(t.lo)
    return t


def add(a: Term, b: Term) -> Term:
    if a.op == "const" and b.op != "const":
        a, b = b, a
    if b.op == "const":
        if a.op == "const":
            return Const(a.val + b.val)
        if b.val == 0:
            return a
        if a.op == "add" and a.args[1].op == "const":
            return add(a.args[0], Const(a.args[1].val + b.val))
    return _fold(Term("add", (a, b)))


def sub(a: Term, b: Term) -> Term:
    if b.op == "const":
        if a.op == "const":
            return Const(a.val - b.val)
        return add(a, Const(-b.val))
    if a is b and not a.poison:
        return Const(0)
    return _fold(Term("sub", (a, b)))


def mul(a: Term, b: Term) -> Term:
    if a.op == "const" and b.op != "const":
        a, b = b, a
    if b.op == "const":
        if a.op == "const":
            return Const(a.val * b.val)
        if b.val == 1:
            return a
        if b.val == 0 and not a.poison:
            return b
    return _fold(Term("mul", (a, b)))


def neg(a: Term) -> Term:
    return sub(Const(0), a)


def div(a: Term, b: Term) -> Term:
    if b.op == "const":
        if b.val == 0:
            return POISON_TERM
        if a.op == "const":
            return Const(_tdiv(a.val, b.val))
        if b.val == 1:
            return a
    if a.op == "poison" or b.op == "poison":
        return POISON_TERM
    return _fold(Term("div", (a, b)))


def mod(a: Term, b: Term) -> Term:
    if b.op == "const":
        if b.val == 0:
            return POISON_TERM
        if a.op == "const":
            return Const(a.val - b.val * _tdiv(a.val, b.val))
        if b.val in (1, -1) and not a.poison:
            return Const(0)
    if a.op == "poison" or b.op == "poison":
        return POISON_TERM
    return _fold(Term("mod", (a, b)))


def _tdiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _cmp(op: str, a: Term, b: Term) -> Term:
    if a.op == "poison" or b.op == "poison":
        return FALSE
    if op == "gt":
        op, a, b = "lt", b, a
    elif op == "ge":
        op, a, b = "le", b, a
    if a.op == "const" and b.op == "const":
        x, y = a.val, b.val
        return Bool({"eq": x == y, "ne": x != y, "lt": x < y, "le": x <= y}[op])
    if a is b and not a.poison:
        return Bool(op in ("eq", "le"))
    if op in ("eq", "ne") and a.op == "const":
        a, b = b, a
    return _fold(Term(op, (a, b)))


def eq(a, b):
    return _cmp("eq", a, b)


def ne(a, b):
    return _cmp("ne", a, b)


def lt(a, b):
    return _cmp("lt", a, b)


def le(a, b):
    return _cmp("le", a, b)


def gt(a, b):
    return _cmp("gt", a, b)


def ge(a, b):
    return _cmp("ge", a, b)


def and_(*args) -> Term:
    out = []
    seen = set()
    for a in args:
        parts = a.args if a.op == "and" else (a,)
        for p in parts:
            if p.hi == 0:
                return FALSE
            if p.lo == 1 and not p.poison:
                continue
            if p not in seen:
                seen.add(p)
                out.append(p)
    if not out:
        return TRUE
    if len(out) == 1:
        return out[0]
    return Term("and", tuple(out))


def or_(*args) -> Term:
    out = []
    seen = set()
    for a in args:
        parts = a.args if a.op == "or" else (a,)
        for p in parts:
            if p.lo == 1:
                return TRUE
            if p.hi == 0:
                continue
            if p not in seen:
                seen.add(p)
                out.append(p)
    if not out:
        return FALSE
    if len(out) == 1:
        return out[0]
    return Term("or", tuple(out))


def not_(a: Term) -> Term:
    if a.op == "bool":
        return Bool(not a.val)
    if a.op == "not":
        return a.args[0]
    return _fold(Term("not", (a,)))


def implies(a: Term, b: Term) -> Term:
    return or_(not_(a), b)


def ite(c: Term, a: Term, b: Term) -> Term:
    if c.lo == 1:
        return a
    if c.hi == 0:
        return b
    if a is b or a == b:
        return a
    if c.op == "not":
        c, a, b = c.args[0], b, a
    if a.is_bool:
        if a.op == "bool" and b.op == "bool":
            return c if a.val else not_(c)
        if b.op == "bool" and not b.val:
            return and_(c, a)
        if a.op == "bool" and a.val:
            return or_(c, b)
    return _fold(Term("ite", (c, a, b)))


def compose(*bs: Term) -> Term:
    if not 1 <= len(bs) <= 4:
        raise ValueError("compose takes 1 to 4 byte terms")
    if all(b.op == "const" for b in bs):
        v = sum((b.val & 0xFF) << (8 * i) for i, b in enumerate(bs))
        return Const(v)
    return _fold(Term("compose", tuple(bs)))


def _ovf(op: str, a: Term, b: Term) -> Term:
    if a.op == "poison" or b.op == "poison":
        return FALSE
    if a.op == "const" and b.op == "const":
        x, y = a.val, b.val
        r = x + y if op == "ovf_add" else x - y if op == "ovf_sub" else x * y
        return Bool(not in_range(r))
    return _fold(Term(op, (a, b)))


def ovf_add(a, b):
    return _ovf("ovf_add", a, b)


def ovf_sub(a, b):
    return _ovf("ovf_sub", a, b)


def ovf_mul(a, b):
    return _ovf("ovf_mul", a, b)


def to_bool(t: Term) -> Term:
    """Truthiness of a term (nonzero integers are true)."""
    return t if t.is_bool else ne(t, Const(0))


def to_int(t: Term) -> Term:
    return ite(t, Const(1), Const(0)) if t.is_bool else t


def byte_of(t: Term) -> Term:
    """Low byte of an integer term, as the unsigned value 0..255."""
    t = to_int(t)
    if 0 <= t.lo and t.hi <= 255:
        return t
    return mod(add(mod(t, Const(256)), Const(256)), Const(256))


_SMART = {
    "add": add, "sub": sub, "mul": mul, "div": div, "mod": mod,
    "eq": eq, "ne": ne, "lt": lt, "le": le, "gt": gt, "ge": ge,
    "and": and_, "or": or_, "not": not_, "ite": ite, "compose": compose,
    "ovf_add": ovf_add, "ovf_sub": ovf_sub, "ovf_mul": ovf_mul,
}


def rebuild(t: Term, fn, memo: dict) -> Term:
    """Bottom-up rebuild of a DAG, mapping leaves through ``fn``."""
    r = memo.get(id(t))
    if r is not None:
        return r
    if not t.args:
        r = fn(t)
    else:
        args = [rebuild(a, fn, memo) for a in t.args]
        r = _SMART[t.op](*args)
    memo[id(t)] = r
    return r


def simplify(t: Term) -> Term:
    """Constant folding and identity elimination; preserves ``eval_term``."""
    return rebuild(t, lambda leaf: leaf, {})


def substitute(t: Term, model: dict) -> Term:
    """Replace assigned byte variables by constants and re-simplify."""

    def leaf(x):
        if x.op == "byte" and x.val in model:
            return Const(model[x.val])
        return x
    return rebuild(t, leaf, {})


# -- evaluation --------------------------------------------------------------


def eval_term(t: Term, model: dict, memo: dict = None):
    """Ground evaluation; returns an int, a bool, or POISON."""
    if memo is None:
        memo = {}
    return _ev(t, model, memo)


def _ev(t: Term, model: dict, memo: dict):
    key = id(t)
    if key in memo:
        return memo[key]
    op = t.op
    if op == "const":
        r = t.val
    elif op == "bool":
        r = t.val
    elif op == "byte":
        r = model[t.val] & 0xFF
    elif op == "poison":
        r = POISON
    elif op == "ite":
        c = _ev(t.args[0], model, memo)
        r = _ev(t.args[1] if c else t.args[2], model, memo)
    elif op == "and":
        r = all(_ev(a, model, memo) for a in t.args)
    elif op == "or":
        r = any(_ev(a, model, memo) for a in t.args)
    elif op == "not":
        r = not _ev(t.args[0], model, memo)
    else:
        vals = [_ev(a, model, memo) for a in t.args]
        r = _apply(op, vals)
    memo[key] = r
    return r


def _apply(op: str, v: list):
    if op in CMP_OPS or op.startswith("ovf_"):
        if any(x is POISON for x in v):
            return False
        x, y = v
        if op == "eq":
            return x == y
        if op == "ne":
            return x != y
        if op == "lt":
            return x < y
        if op == "le":
            return x <= y
        if op == "gt":
            return x > y
        if op == "ge":
            return x >= y
        if op == "ovf_add":
            return not in_range(x + y)
        if op == "ovf_sub":
            return not in_range(x - y)
        return not in_range(x * y)
    if any(x is POISON for x in v):
        return POISON
    if op == "add":
        return wrap(v[0] + v[1])
    if op == "sub":
        return wrap(v[0] - v[1])
    if op == "mul":
        return wrap(v[0] * v[1])
    if op == "div":
        if v[1] == 0:
            return POISON
        return wrap(_tdiv(v[0], v[1]))
    if op == "mod":
        if v[1] == 0:
            return POISON
        return v[0] - v[1] * _tdiv(v[0], v[1])
    if op == "compose":
        return wrap(sum((b & 0xFF) << (8 * i) for i, b in enumerate(v)))
    raise ValueError(f"cannot evaluate op {op}")


# -- debug dump --------------------------------------------------------------


def to_sexpr(t: Term, limit: int = 2000) -> str:
    """S-expression rendering, truncated after ``limit`` characters."""
    out = []
    budget = [limit]

    def emit(x):
        if budget[0] <= 0:
            return
        if x.op == "const":
            s = str(x.val)
        elif x.op == "bool":
            s = "true" if x.val else "false"
        elif x.op == "byte":
            s = x.val
        elif x.op == "poison":
            s = "poison"
        else:
            out.append("(" + x.op)
            budget[0] -= len(x.op) + 1
            for a in x.args:
                out.append(" ")
                emit(a)
            out.append(")")
            return
        out.append(s)
        budget[0] -= len(s)

    emit(t)
    s = "".join(out)
    return s if budget[0] > 0 else s + " ..."


def dump_constraints(constraints) -> str:
    return "".join(f"(assert {to_sexpr(c, 100_000)})\n" for c in constraints)
