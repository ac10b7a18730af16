"""AST node classes for PIL programs.

Nodes are frozen dataclasses. Source positions are carried in ``line``/``col``
fields excluded from equality, so two parses of equivalent text compare equal
even when whitespace differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Union

ENTRY = "handle"

INT_MIN = -(2**31)
INT_MAX = 2**31 - 1


@dataclass(frozen=True)
class Type:
    kind: str  # int | byte | bytes | buf | heapref
    size: Optional[int] = None

    def __str__(self) -> str:
        if self.kind == "buf":
            return f"bytes[{self.size}]"
        return self.kind

    @property
    def is_scalar(self) -> bool:
        return self.kind in ("int", "byte")

    @property
    def is_buffer(self) -> bool:
        return self.kind in ("buf", "bytes")


INT = Type("int")
BYTE = Type("byte")
BYTES = Type("bytes")
HEAPREF = Type("heapref")


def buf(n: int) -> Type:
    return Type("buf", n)


def _pos():
    return field(default=0, compare=False, repr=False)


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class IntLit:
    value: int
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class StrLit:
    value: bytes
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Var:
    name: str
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Index:
    name: str
    index: "Expr"
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Len:
    name: str
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Alloc:
    size: "Expr"
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Load:
    """Little-endian multi-byte read: ``le16(buf, off)`` / ``le32(buf, off)``."""

    width: int
    name: str
    offset: "Expr"
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Unary:
    op: str  # "!" or "-"
    operand: "Expr"
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    line: int = _pos()
    col: int = _pos()


Expr = Union[IntLit, StrLit, Var, Index, Len, Alloc, Load, Binary, Unary, Call]

ARITH_OPS = ("+", "-", "*", "/", "%")
CMP_OPS = ("==", "!=", "<", "<=", ">", ">=")
LOGIC_OPS = ("&&", "||")


# -- statements --------------------------------------------------------------


@dataclass(frozen=True)
class VarDecl:
    sid: int
    name: str
    type: Type
    init: Optional[Expr]
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Assign:
    sid: int
    name: str
    value: Expr
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class IndexAssign:
    sid: int
    name: str
    index: Expr
    value: Expr
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class If:
    sid: int
    cond: Expr
    then_body: tuple
    else_body: Optional[tuple]
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class While:
    sid: int
    cond: Expr
    body: tuple
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class CallStmt:
    sid: int
    call: Call
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Return:
    sid: int
    value: Optional[Expr]
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Assert:
    sid: int
    cond: Expr
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Send:
    sid: int
    value: Expr
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Free:
    sid: int
    name: str
    line: int = _pos()
    col: int = _pos()


Stmt = Union[VarDecl, Assign, IndexAssign, If, While, CallStmt, Return, Assert, Send, Free]


# -- top level ---------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    type: Type


@dataclass(frozen=True)
class GlobalDecl:
    name: str
    type: Type
    init: Expr
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple
    body: tuple
    line: int = _pos()
    col: int = _pos()


@dataclass(frozen=True)
class Program:
    globals: tuple
    functions: tuple
    entry: str = ENTRY

    def function(self, name: str) -> Function:
        return self.function_map[name]

    @cached_property
    def function_map(self) -> dict:
        return {f.name: f for f in self.functions}

    @cached_property
    def global_types(self) -> dict:
        return {g.name: g.type for g in self.globals}

    @cached_property
    def statements(self) -> dict:
        """StmtId -> (function name, statement)."""
        out = {}
        for f in self.functions:
            for s in walk_stmts(f.body):
                out[s.sid] = (f.name, s)
        return out

    @cached_property
    def local_types(self) -> dict:
        """Function name -> {variable name: Type} for params and locals."""
        out = {}
        for f in self.functions:
            scope = {p.name: p.type for p in f.params}
            for s in walk_stmts(f.body):
                if isinstance(s, VarDecl):
                    scope.setdefault(s.name, s.type)
            out[f.name] = scope
        return out

    def type_of(self, fn: str, name: str) -> Optional[Type]:
        t = self.local_types.get(fn, {}).get(name)
        if t is None:
            t = self.global_types.get(name)
        return t

    def function_of(self, sid: int) -> str:
        return self.statements[sid][0]

    @property
    def stmt_count(self) -> int:
        return len(self.statements)


def walk_stmts(body) -> Iterator:
    """Preorder walk over a statement list (the same order as StmtId assignment)."""
    for s in body:
        yield s
        if isinstance(s, If):
            yield from walk_stmts(s.then_body)
            if s.else_body is not None:
                yield from walk_stmts(s.else_body)
        elif isinstance(s, While):
            yield from walk_stmts(s.body)


def walk_expr(e) -> Iterator:
    yield e
    if isinstance(e, (Index,)):
        yield from walk_expr(e.index)
    elif isinstance(e, Alloc):
        yield from walk_expr(e.size)
    elif isinstance(e, Load):
        yield from walk_expr(e.offset)
    elif isinstance(e, Binary):
        yield from walk_expr(e.left)
        yield from walk_expr(e.right)
    elif isinstance(e, Unary):
        yield from walk_expr(e.operand)
    elif isinstance(e, Call):
        for a in e.args:
            yield from walk_expr(a)


def stmt_exprs(s) -> list:
    """Top-level expressions directly owned by a statement."""
    if isinstance(s, VarDecl):
        return [s.init] if s.init is not None else []
    if isinstance(s, Assign):
        return [s.value]
    if isinstance(s, IndexAssign):
        return [s.index, s.value]
    if isinstance(s, (If, While, Assert)):
        return [s.cond]
    if isinstance(s, CallStmt):
        return [s.call]
    if isinstance(s, Return):
        return [s.value] if s.value is not None else []
    if isinstance(s, Send):
        return [s.value]
    return []


def call_sites(f: Function) -> Iterator[Call]:
    for s in walk_stmts(f.body):
        for e in stmt_exprs(s):
            for sub in walk_expr(e):
                if isinstance(sub, Call):
                    yield sub
