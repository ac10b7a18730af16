"""Static checks for PIL programs: name resolution, typing, entry signature."""

from __future__ import annotations

from dataclasses import dataclass

from . import ast as A

MAX_BUFFER = 65535
PARAM_KINDS = ("int", "byte", "bytes", "heapref")
LOCAL_KINDS = ("int", "byte", "buf", "heapref")

# expression "sorts" used only inside the checker
SCALAR = ("int", "byte", "bool")


@dataclass(frozen=True)
class StaticError:
    message: str
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class _Checker:
    def __init__(self, program: A.Program):
        self.p = program
        self.errors: list = []
        self.funcs = {}
        self.globals = {}

    def err(self, msg: str, node=None) -> None:
        self.errors.append(StaticError(msg, getattr(node, "line", 0), getattr(node, "col", 0)))

    def run(self) -> list:
        for g in self.p.globals:
            if g.name in self.globals:
                self.err(f"duplicate global '{g.name}'", g)
            self.globals[g.name] = g.type
            self.check_global(g)
        for f in self.p.functions:
            if f.name in self.funcs:
                self.err(f"duplicate function '{f.name}'", f)
            elif f.name in self.globals:
                self.err(f"function '{f.name}' clashes with a global", f)
            self.funcs.setdefault(f.name, f)
        entry = self.funcs.get(self.p.entry)
        if entry is None:
            self.err(f"no entry handler: function '{self.p.entry}' is missing")
        elif len(entry.params) != 1 or entry.params[0].type != A.BYTES:
            self.err(f"entry handler '{self.p.entry}' must take exactly one 'bytes' parameter", entry)
        for f in self.p.functions:
            self.check_function(f)
        return self.errors

    def check_global(self, g: A.GlobalDecl) -> None:
        t = g.type
        if t.kind == "bytes":
            self.err(f"global '{g.name}' cannot have type 'bytes'", g)
            return
        if t.kind == "buf":
            self.check_buf_size(t, g)
            if isinstance(g.init, A.StrLit):
                if len(g.init.value) > (t.size or 0):
                    self.err(f"initializer of '{g.name}' longer than buffer", g)
            elif not (isinstance(g.init, A.IntLit) and g.init.value == 0):
                self.err(f"type mismatch: buffer '{g.name}' needs a string or 0 initializer", g)
            return
        if not isinstance(g.init, A.IntLit):
            self.err(f"type mismatch: '{g.name}' needs an integer initializer", g)
            return
        if t.kind == "heapref" and g.init.value != 0:
            self.err(f"heapref global '{g.name}' must start as 0", g)
        elif t.kind == "byte" and not 0 <= g.init.value <= 255:
            self.err(f"byte initializer of '{g.name}' out of range", g)
        elif not A.INT_MIN <= g.init.value <= A.INT_MAX:
            self.err(f"integer literal out of range in '{g.name}'", g)

    def check_buf_size(self, t: A.Type, node) -> None:
        if t.size is None or not 1 <= t.size <= MAX_BUFFER:
            self.err(f"buffer size must be between 1 and {MAX_BUFFER}", node)

    # -- functions -----------------------------------------------------------

    def check_function(self, f: A.Function) -> None:
        self.fn = f
        self.declared = set()
        scope = {}
        for p in f.params:
            if p.name in scope:
                self.err(f"duplicate parameter '{p.name}' in '{f.name}'", f)
            if p.type.kind not in PARAM_KINDS:
                self.err(f"parameter '{p.name}' cannot have type {p.type}", f)
            if p.name in self.globals:
                self.err(f"parameter '{p.name}' shadows a global", f)
            scope[p.name] = p.type
            self.declared.add(p.name)
        self.block(f.body, [scope])

    def lookup(self, scopes, name):
        for s in reversed(scopes):
            if name in s:
                return s[name]
        return self.globals.get(name)

    def block(self, body, scopes) -> None:
        scopes = scopes + [{}]
        for s in body:
            self.stmt(s, scopes)

    def stmt(self, s, scopes) -> None:
        if isinstance(s, A.VarDecl):
            if s.name in self.declared:
                self.err(f"'{s.name}' already declared in '{self.fn.name}'", s)
            elif s.name in self.globals:
                self.err(f"local '{s.name}' shadows a global", s)
            elif s.name in self.funcs:
                self.err(f"local '{s.name}' clashes with a function", s)
            t = s.type
            if t.kind not in LOCAL_KINDS:
                self.err(f"local '{s.name}' cannot have type {t}", s)
            if t.kind == "buf":
                self.check_buf_size(t, s)
            if s.init is not None:
                self.check_init(t, s.init, scopes, s)
            self.declared.add(s.name)
            scopes[-1][s.name] = t
        elif isinstance(s, A.Assign):
            t = self.lookup(scopes, s.name)
            if t is None:
                self.err(f"undefined variable '{s.name}'", s)
                return
            if t.is_buffer:
                self.err(f"cannot assign whole buffer '{s.name}'", s)
                return
            self.check_init(t, s.value, scopes, s)
        elif isinstance(s, A.IndexAssign):
            t = self.lookup(scopes, s.name)
            if t is None:
                self.err(f"undefined variable '{s.name}'", s)
            elif t.kind == "bytes":
                self.err(f"'{s.name}' is read-only", s)
            elif t.kind not in ("buf", "heapref"):
                self.err(f"'{s.name}' is not indexable", s)
            self.scalar(s.index, scopes)
            self.scalar(s.value, scopes)
        elif isinstance(s, A.If):
            self.scalar(s.cond, scopes)
            self.block(s.then_body, scopes)
            if s.else_body is not None:
                self.block(s.else_body, scopes)
        elif isinstance(s, A.While):
            self.scalar(s.cond, scopes)
            self.block(s.body, scopes)
        elif isinstance(s, A.CallStmt):
            self.call(s.call, scopes)
        elif isinstance(s, A.Return):
            if s.value is not None:
                if isinstance(s.value, A.Call):
                    self.err("call not allowed inside 'return'; assign it first", s)
                else:
                    self.scalar(s.value, scopes)
        elif isinstance(s, A.Assert):
            self.scalar(s.cond, scopes)
        elif isinstance(s, A.Send):
            v = s.value
            if isinstance(v, A.StrLit):
                return
            if isinstance(v, A.Var):
                t = self.lookup(scopes, v.name)
                if t is None:
                    self.err(f"undefined variable '{v.name}'", v)
                elif not (t.is_buffer or t.kind == "heapref"):
                    self.err("send() needs a buffer, heapref or string", v)
                return
            self.err("send() needs a buffer, heapref or string", s)
        elif isinstance(s, A.Free):
            t = self.lookup(scopes, s.name)
            if t is None:
                self.err(f"undefined variable '{s.name}'", s)
            elif t.kind != "heapref":
                self.err(f"free() needs a heapref, '{s.name}' is {t}", s)

    def check_init(self, t: A.Type, e, scopes, node) -> None:
        if isinstance(e, A.Call):
            self.call(e, scopes)
            if t.kind not in ("int", "byte"):
                self.err(f"type mismatch: call result is int, target is {t}", node)
            return
        if t.kind == "buf":
            if isinstance(e, A.StrLit):
                if len(e.value) > (t.size or 0):
                    self.err("string initializer longer than buffer", node)
            else:
                self.err("type mismatch: buffer needs a string initializer", node)
            return
        if t.kind == "heapref":
            if isinstance(e, A.Alloc):
                self.scalar(e.size, scopes)
            elif isinstance(e, A.Var) and self.lookup(scopes, e.name) == A.HEAPREF:
                pass
            else:
                self.err("type mismatch: heapref needs alloc(...) or another heapref", node)
            return
        self.scalar(e, scopes)

    def call(self, c: A.Call, scopes) -> None:
        f = self.funcs.get(c.name)
        if f is None:
            self.err(f"undefined function '{c.name}'", c)
            for a in c.args:
                self.expr(a, scopes)
            return
        if len(c.args) != len(f.params):
            self.err(f"'{c.name}' expects {len(f.params)} arguments, got {len(c.args)}", c)
            return
        for a, p in zip(c.args, f.params):
            k = p.type.kind
            if k in ("int", "byte"):
                self.scalar(a, scopes)
            elif k == "bytes":
                if isinstance(a, A.StrLit):
                    continue
                t = self.lookup(scopes, a.name) if isinstance(a, A.Var) else None
                if t is None or not (t.is_buffer or t.kind == "heapref"):
                    self.err(f"argument for '{p.name}' must be a buffer or string", a)
            elif k == "heapref":
                t = self.lookup(scopes, a.name) if isinstance(a, A.Var) else None
                if t != A.HEAPREF:
                    self.err(f"argument for '{p.name}' must be a heapref variable", a)

    # -- expressions ---------------------------------------------------------

    def scalar(self, e, scopes) -> None:
        sort = self.expr(e, scopes)
        if sort is not None and sort not in SCALAR:
            self.err(f"type mismatch: expected a scalar, found {sort}", e)

    def expr(self, e, scopes):
        """Return the sort of ``e`` or None after reporting an error."""
        if isinstance(e, A.IntLit):
            if not A.INT_MIN <= e.value <= A.INT_MAX:
                self.err("integer literal out of range", e)
            return "int"
        if isinstance(e, A.StrLit):
            return "string"
        if isinstance(e, A.Var):
            t = self.lookup(scopes, e.name)
            if t is None:
                self.err(f"undefined variable '{e.name}'", e)
                return None
            return "buffer" if t.is_buffer else t.kind
        if isinstance(e, A.Index):
            t = self.lookup(scopes, e.name)
            if t is None:
                self.err(f"undefined variable '{e.name}'", e)
            elif not (t.is_buffer or t.kind == "heapref"):
                self.err(f"'{e.name}' is not indexable", e)
            self.scalar(e.index, scopes)
            return "byte"
        if isinstance(e, A.Len):
            t = self.lookup(scopes, e.name)
            if t is None:
                self.err(f"undefined variable '{e.name}'", e)
            elif not (t.is_buffer or t.kind == "heapref"):
                self.err(f"len() needs a buffer, '{e.name}' is {t}", e)
            return "int"
        if isinstance(e, A.Load):
            t = self.lookup(scopes, e.name)
            if t is None:
                self.err(f"undefined variable '{e.name}'", e)
            elif not (t.is_buffer or t.kind == "heapref"):
                self.err(f"'{e.name}' is not indexable", e)
            self.scalar(e.offset, scopes)
            return "int"
        if isinstance(e, A.Alloc):
            self.err("alloc() only allowed as a heapref initializer", e)
            return None
        if isinstance(e, A.Call):
            self.err("call not allowed inside an expression; assign it to a variable", e)
            return None
        if isinstance(e, A.Unary):
            self.scalar(e.operand, scopes)
            return "bool" if e.op == "!" else "int"
        if isinstance(e, A.Binary):
            self.scalar(e.left, scopes)
            self.scalar(e.right, scopes)
            return "int" if e.op in A.ARITH_OPS else "bool"
        self.err(f"unknown expression {type(e).__name__}", e)
        return None


def validate(program: A.Program) -> list:
    """Return the list of static errors (empty when the program is well formed)."""
    return _Checker(program).run()
