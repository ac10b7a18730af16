"""PIL: the small protocol-implementation language the engines analyse."""

from .ast import Program, Function, Type
from .callgraph import CallGraph, build_call_graph
from .parser import ParseError, parse_program
from .printer import pretty
from .validator import StaticError, validate


def load_program(text: str) -> Program:
    """Parse and validate; raises ParseError or ValueError listing static errors."""
    program = parse_program(text)
    errors = validate(program)
    if errors:
        raise ValueError("invalid PIL program:\n" + "\n".join(str(e) for e in errors))
    return program


__all__ = [
    "CallGraph", "Function", "ParseError", "Program", "StaticError", "Type",
    "build_call_graph", "load_program", "parse_program", "pretty", "validate",
]
