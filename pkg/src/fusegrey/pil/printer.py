"""Canonical pretty printer; ``parse_program(pretty(p)) == p`` for valid programs."""

from __future__ import annotations

from . import ast as A

_INDENT = "    "


def _str_lit(value: bytes) -> str:
    out = []
    for b in value:
        if b == 0x22:
            out.append('\\"')
        elif b == 0x5C:
            out.append("\\\\")
        elif 0x20 <= b < 0x7F:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return '"' + "".join(out) + '"'


def format_expr(e) -> str:
    if isinstance(e, A.IntLit):
        return str(e.value)
    if isinstance(e, A.StrLit):
        return _str_lit(e.value)
    if isinstance(e, A.Var):
        return e.name
    if isinstance(e, A.Index):
        return f"{e.name}[{format_expr(e.index)}]"
    if isinstance(e, A.Len):
        return f"len({e.name})"
    if isinstance(e, A.Alloc):
        return f"alloc({format_expr(e.size)})"
    if isinstance(e, A.Load):
        return f"le{8 * e.width}({e.name}, {format_expr(e.offset)})"
    if isinstance(e, A.Call):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, A.Unary):
        inner = format_expr(e.operand)
        if isinstance(e.operand, (A.Binary, A.Unary)) or (
            isinstance(e.operand, A.IntLit) and e.operand.value < 0
        ):
            inner = f"({inner})"
        return f"{e.op}{inner}"
    if isinstance(e, A.Binary):
        return f"{_operand(e.left)} {e.op} {_operand(e.right)}"
    raise TypeError(f"not an expression: {e!r}")


def _operand(e) -> str:
    s = format_expr(e)
    if isinstance(e, A.Binary) or (isinstance(e, A.IntLit) and e.value < 0):
        return f"({s})"
    return s


def _block(body, depth: int, out: list) -> None:
    for s in body:
        _stmt(s, depth, out)


def _stmt(s, depth: int, out: list) -> None:
    pad = _INDENT * depth
    if isinstance(s, A.VarDecl):
        init = f" = {format_expr(s.init)}" if s.init is not None else ""
        out.append(f"{pad}var {s.name}: {s.type}{init};")
    elif isinstance(s, A.Assign):
        out.append(f"{pad}{s.name} = {format_expr(s.value)};")
    elif isinstance(s, A.IndexAssign):
        out.append(f"{pad}{s.name}[{format_expr(s.index)}] = {format_expr(s.value)};")
    elif isinstance(s, A.If):
        out.append(f"{pad}if ({format_expr(s.cond)}) {{")
        _block(s.then_body, depth + 1, out)
        if s.else_body is not None:
            out.append(f"{pad}}} else {{")
            _block(s.else_body, depth + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, A.While):
        out.append(f"{pad}while ({format_expr(s.cond)}) {{")
        _block(s.body, depth + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, A.CallStmt):
        out.append(f"{pad}{format_expr(s.call)};")
    elif isinstance(s, A.Return):
        out.append(f"{pad}return {format_expr(s.value)};" if s.value is not None else f"{pad}return;")
    elif isinstance(s, A.Assert):
        out.append(f"{pad}assert({format_expr(s.cond)});")
    elif isinstance(s, A.Send):
        out.append(f"{pad}send({format_expr(s.value)});")
    elif isinstance(s, A.Free):
        out.append(f"{pad}free({s.name});")
    else:
        raise TypeError(f"not a statement: {s!r}")


def pretty(program: A.Program) -> str:
    out = []
    for g in program.globals:
        out.append(f"global {g.name}: {g.type} = {format_expr(g.init)};")
    if program.globals:
        out.append("")
    for f in program.functions:
        params = ", ".join(f"{p.name}: {p.type}" for p in f.params)
        out.append(f"fn {f.name}({params}) {{")
        _block(f.body, 1, out)
        out.append("}")
        out.append("")
    return "\n".join(out)
