"""Byte-domain constraint terms and the finite-domain solver."""

from .terms import (
    FALSE, INT_MAX, INT_MIN, POISON, TRUE, Term,
    Add, And, Bool, Byte, Compose, Const, Div, Eq, Ge, Gt, Ite, Le, Lt, Mod, Mul,
    Ne, Not, Or, OvfAdd, OvfMul, OvfSub, Sub,
    dump_constraints, eval_term, simplify, substitute, to_sexpr,
)
from .search import Sat, Solver, Unknown, Unsat, solve

__all__ = [
    "FALSE", "INT_MAX", "INT_MIN", "POISON", "TRUE", "Term",
    "Add", "And", "Bool", "Byte", "Compose", "Const", "Div", "Eq", "Ge", "Gt", "Ite",
    "Le", "Lt", "Mod", "Mul", "Ne", "Not", "Or", "OvfAdd", "OvfMul", "OvfSub", "Sub",
    "Sat", "Solver", "Unknown", "Unsat",
    "dump_constraints", "eval_term", "simplify", "solve", "substitute", "to_sexpr",
]
