"""Recursive-descent parser for PIL source text."""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import ast as A

KEYWORDS = {
    "fn", "global", "var", "if", "else", "while", "return", "assert", "send",
    "free", "int", "byte", "bytes", "heapref", "len", "alloc", "le16", "le32",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<hex>0[xX][0-9a-fA-F]+)
  | (?P<int>[0-9]+)
  | (?P<char>'(?:\\.|\\x[0-9a-fA-F]{2}|[^'\\\n])')
  | (?P<str>"(?:\\.|[^"\\\n])*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|&&|\|\||[-+*/%<>=!(){}\[\];:,])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": 10, "r": 13, "t": 9, "0": 0, "\\": 92, "'": 39, '"': 34}


class ParseError(ValueError):
    """Syntax error with a 1-based source position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def _unescape(body: str, line: int, col: int) -> bytes:
    out = bytearray()
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.extend(ch.encode("utf-8"))
            i += 1
            continue
        nxt = body[i + 1]
        if nxt == "x":
            out.append(int(body[i + 2:i + 4], 16))
            i += 4
        elif nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            raise ParseError(f"unknown escape '\\{nxt}'", line, col)
    return bytes(out)


def tokenize(text: str) -> list:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        col = pos - line_start + 1
        if kind not in ("ws", "comment"):
            if kind == "ident" and chunk in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


_BINARY_LEVELS = [
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/", "%"),
]


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.next_sid = 0

    # -- token helpers -------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("op", "kw")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.tok
        if not self.at(text):
            shown = t.text or "end of input"
            raise ParseError(f"expected '{text}', found '{shown}'", t.line, t.col)
        self.i += 1
        return t

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident":
            shown = t.text or "end of input"
            raise ParseError(f"expected identifier, found '{shown}'", t.line, t.col)
        self.i += 1
        return t

    def sid(self) -> int:
        n = self.next_sid
        self.next_sid += 1
        return n

    # -- top level -----------------------------------------------------------

    def program(self) -> A.Program:
        globals_, functions = [], []
        while self.tok.kind != "eof":
            if self.at("global"):
                globals_.append(self.global_decl())
            elif self.at("fn"):
                functions.append(self.function())
            else:
                t = self.tok
                raise ParseError(f"expected 'fn' or 'global', found '{t.text}'", t.line, t.col)
        return A.Program(tuple(globals_), tuple(functions))

    def global_decl(self) -> A.GlobalDecl:
        start = self.expect("global")
        name = self.ident().text
        self.expect(":")
        ty = self.type_()
        self.expect("=")
        init = self.constant()
        self.expect(";")
        return A.GlobalDecl(name, ty, init, start.line, start.col)

    def constant(self):
        t = self.tok
        neg = self.accept("-")
        e = self.primary()
        if not isinstance(e, (A.IntLit, A.StrLit)) or (neg and not isinstance(e, A.IntLit)):
            raise ParseError("global initializer must be a constant", t.line, t.col)
        if neg:
            return A.IntLit(-e.value, t.line, t.col)
        return e

    def type_(self) -> A.Type:
        t = self.tok
        if self.accept("int"):
            return A.INT
        if self.accept("byte"):
            return A.BYTE
        if self.accept("heapref"):
            return A.HEAPREF
        if self.accept("bytes"):
            if self.accept("["):
                n = self.tok
                if n.kind not in ("int", "hex"):
                    raise ParseError("buffer size must be an integer constant", n.line, n.col)
                self.i += 1
                self.expect("]")
                return A.buf(int(n.text, 0))
            return A.BYTES
        raise ParseError(f"expected a type, found '{t.text}'", t.line, t.col)

    def function(self) -> A.Function:
        start = self.expect("fn")
        name = self.ident().text
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                pname = self.ident().text
                self.expect(":")
                params.append(A.Param(pname, self.type_()))
                if not self.accept(","):
                    break
        self.expect(")")
        body = self.block()
        return A.Function(name, tuple(params), body, start.line, start.col)

    def block(self) -> tuple:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise ParseError("unterminated block", self.tok.line, self.tok.col)
            stmts.append(self.statement())
        self.expect("}")
        return tuple(stmts)

    # -- statements ----------------------------------------------------------

    def statement(self):
        t = self.tok
        ln, co = t.line, t.col
        if self.accept("var"):
            sid = self.sid()
            name = self.ident().text
            self.expect(":")
            ty = self.type_()
            init = self.expr() if self.accept("=") else None
            self.expect(";")
            return A.VarDecl(sid, name, ty, init, ln, co)
        if self.accept("if"):
            return self.if_rest(ln, co)
        if self.accept("while"):
            sid = self.sid()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            return A.While(sid, cond, self.block(), ln, co)
        if self.accept("return"):
            sid = self.sid()
            value = None if self.at(";") else self.expr()
            self.expect(";")
            return A.Return(sid, value, ln, co)
        if self.accept("assert"):
            sid = self.sid()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            self.expect(";")
            return A.Assert(sid, cond, ln, co)
        if self.accept("send"):
            sid = self.sid()
            self.expect("(")
            value = self.expr()
            self.expect(")")
            self.expect(";")
            return A.Send(sid, value, ln, co)
        if self.accept("free"):
            sid = self.sid()
            self.expect("(")
            name = self.ident().text
            self.expect(")")
            self.expect(";")
            return A.Free(sid, name, ln, co)
        if t.kind == "ident":
            sid = self.sid()
            name = self.ident().text
            if self.accept("="):
                value = self.expr()
                self.expect(";")
                return A.Assign(sid, name, value, ln, co)
            if self.accept("["):
                index = self.expr()
                self.expect("]")
                self.expect("=")
                value = self.expr()
                self.expect(";")
                return A.IndexAssign(sid, name, index, value, ln, co)
            if self.at("("):
                call = self.call_rest(name, ln, co)
                self.expect(";")
                return A.CallStmt(sid, call, ln, co)
            raise ParseError(f"expected '=', '[' or '(' after '{name}'", self.tok.line, self.tok.col)
        raise ParseError(f"expected a statement, found '{t.text or 'end of input'}'", ln, co)

    def if_rest(self, ln: int, co: int) -> A.If:
        sid = self.sid()
        self.expect("(")
        cond = self.expr()
        self.expect(")")
        then_body = self.block()
        else_body = None
        if self.accept("else"):
            if self.at("if"):
                t = self.tok
                self.i += 1
                else_body = (self.if_rest(t.line, t.col),)
            else:
                else_body = self.block()
        return A.If(sid, cond, then_body, else_body, ln, co)

    # -- expressions ---------------------------------------------------------

    def expr(self, level: int = 0):
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        ops = _BINARY_LEVELS[level]
        while self.tok.kind == "op" and self.tok.text in ops:
            t = self.tok
            self.i += 1
            right = self.expr(level + 1)
            left = A.Binary(t.text, left, right, t.line, t.col)
        return left

    def unary(self):
        t = self.tok
        if self.accept("!"):
            return A.Unary("!", self.unary(), t.line, t.col)
        if self.accept("-"):
            operand = self.unary()
            if isinstance(operand, A.IntLit):
                return A.IntLit(-operand.value, t.line, t.col)
            return A.Unary("-", operand, t.line, t.col)
        return self.primary()

    def primary(self):
        t = self.tok
        if t.kind in ("int", "hex"):
            self.i += 1
            return A.IntLit(int(t.text, 0), t.line, t.col)
        if t.kind == "char":
            self.i += 1
            raw = _unescape(t.text[1:-1], t.line, t.col)
            if len(raw) != 1:
                raise ParseError("character literal must denote one byte", t.line, t.col)
            return A.IntLit(raw[0], t.line, t.col)
        if t.kind == "str":
            self.i += 1
            return A.StrLit(_unescape(t.text[1:-1], t.line, t.col), t.line, t.col)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.accept("len"):
            self.expect("(")
            name = self.ident().text
            self.expect(")")
            return A.Len(name, t.line, t.col)
        if self.accept("alloc"):
            self.expect("(")
            size = self.expr()
            self.expect(")")
            return A.Alloc(size, t.line, t.col)
        if self.at("le16") or self.at("le32"):
            width = 2 if t.text == "le16" else 4
            self.i += 1
            self.expect("(")
            name = self.ident().text
            self.expect(",")
            off = self.expr()
            self.expect(")")
            return A.Load(width, name, off, t.line, t.col)
        if t.kind == "ident":
            self.i += 1
            if self.at("("):
                return self.call_rest(t.text, t.line, t.col)
            if self.accept("["):
                index = self.expr()
                self.expect("]")
                return A.Index(t.text, index, t.line, t.col)
            return A.Var(t.text, t.line, t.col)
        raise ParseError(f"expected an expression, found '{t.text or 'end of input'}'", t.line, t.col)

    def call_rest(self, name: str, ln: int, co: int) -> A.Call:
        self.expect("(")
        args = []
        if not self.at(")"):
            while True:
                args.append(self.expr())
                if not self.accept(","):
                    break
        self.expect(")")
        return A.Call(name, tuple(args), ln, co)


def parse_program(text: str) -> A.Program:
    """Parse PIL text into a :class:`Program`; raises :class:`ParseError`."""
    if text.startswith("﻿"):
        text = text[1:]
    return Parser(text).program()
