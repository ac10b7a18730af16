"""Random term generator and a brute-force oracle used by the solver tests."""

import functools
import random

import numpy as np

from fusegrey.solver import terms as T

INT_OPS = ("add", "sub", "mul", "div", "mod")
CMP_OPS = ("eq", "ne", "lt", "le", "gt", "ge")
_RAW = {
    "add": T.Add, "sub": T.Sub, "mul": T.Mul, "div": T.Div, "mod": T.Mod,
    "eq": T.Eq, "ne": T.Ne, "lt": T.Lt, "le": T.Le, "gt": T.Gt, "ge": T.Ge,
}
_CONSTS = (0, 1, 2, 3, 7, 10, 48, 65, 100, 127, 128, 200, 255, 256, 1000, -1, -5, 65535, 2**31 - 1, -(2**31))


def rand_int(rng: random.Random, names, depth: int):
    r = rng.random()
    if depth <= 0 or r < 0.3:
        if rng.random() < 0.55:
            return T.Byte(rng.choice(names))
        return T.Const(rng.choice(_CONSTS) if rng.random() < 0.6 else rng.randint(-300, 300))
    if r < 0.4:
        return T.Compose(*(T.Byte(rng.choice(names)) for _ in range(rng.randint(1, 4))))
    if r < 0.5:
        return T.Ite(rand_bool(rng, names, depth - 1), rand_int(rng, names, depth - 1),
                     rand_int(rng, names, depth - 1))
    op = rng.choice(INT_OPS)
    return _RAW[op](rand_int(rng, names, depth - 1), rand_int(rng, names, depth - 1))


def rand_bool(rng: random.Random, names, depth: int):
    r = rng.random()
    if depth > 0 and r < 0.15:
        return T.And(rand_bool(rng, names, depth - 1), rand_bool(rng, names, depth - 1))
    if depth > 0 and r < 0.25:
        return T.Or(rand_bool(rng, names, depth - 1), rand_bool(rng, names, depth - 1))
    if depth > 0 and r < 0.3:
        return T.Not(rand_bool(rng, names, depth - 1))
    if r < 0.36:
        op = rng.choice((T.OvfAdd, T.OvfSub, T.OvfMul))
        return op(rand_int(rng, names, depth - 1), rand_int(rng, names, depth - 1))
    op = rng.choice(CMP_OPS)
    return _RAW[op](rand_int(rng, names, depth - 1), rand_int(rng, names, depth - 1))


def rand_constraints(rng: random.Random):
    k = rng.randint(1, 3)
    names = [f"v{i}" for i in range(k)]
    return [rand_bool(rng, names, rng.randint(1, 3)) for _ in range(rng.randint(1, 4))]


def brute_force_sat(constraints) -> bool:
    """Exhaustive enumeration over every byte assignment, one slice of the
    first variable at a time."""
    names = sorted(set().union(*(c.vars for c in constraints)))
    if not names:
        return all(T.eval_term(c, {}) is True for c in constraints)
    rest = names[1:]
    grids = np.meshgrid(*([np.arange(256, dtype=np.int64)] * len(rest)), indexing="ij")
    base = {n: g.ravel() for n, g in zip(rest, grids)}
    size = 256 ** len(rest)
    step = 16 if len(names) == 3 else 256
    for start in range(0, 256, step):
        cols = {n: np.tile(col, step) for n, col in base.items()}
        cols[names[0]] = np.repeat(np.arange(start, start + step, dtype=np.int64), size)
        for c in constraints:
            ok = np.broadcast_to(_ev(c, cols, {}), cols[names[0]].shape)
            if not ok.any():
                break
            cols = {n: col[ok] for n, col in cols.items()}
        else:
            return True
    return False


def _wrap(v):
    return ((v + 2**31) & 0xFFFFFFFF) - 2**31


def _ev(t, cols, memo):
    """Independent evaluator: returns (value, poison) for ints, mask for bools."""
    k = id(t)
    if k in memo:
        return memo[k]
    op = t.op
    if op == "const":
        r = (np.int64(t.val), np.bool_(False))
    elif op == "bool":
        r = np.bool_(t.val)
    elif op == "byte":
        r = (cols[t.val], np.bool_(False))
    elif op == "and":
        r = functools.reduce(np.logical_and, [_ev(a, cols, memo) for a in t.args], np.bool_(True))
    elif op == "or":
        r = functools.reduce(np.logical_or, [_ev(a, cols, memo) for a in t.args], np.bool_(False))
    elif op == "not":
        r = np.logical_not(_ev(t.args[0], cols, memo))
    elif op == "ite":
        c = _ev(t.args[0], cols, memo)
        a, b = _ev(t.args[1], cols, memo), _ev(t.args[2], cols, memo)
        r = (np.where(c, a[0], b[0]), np.where(c, a[1], b[1]))
    elif op == "compose":
        v, p = np.int64(0), np.bool_(False)
        for i, a in enumerate(t.args):
            av, ap = _ev(a, cols, memo)
            v = v + np.mod(av, 256) * (256 ** i)
            p = p | ap
        r = (_wrap(v), p)
    else:
        (a, pa), (b, pb) = _ev(t.args[0], cols, memo), _ev(t.args[1], cols, memo)
        p = pa | pb
        if op in CMP_OPS or op.startswith("ovf"):
            if op.startswith("ovf"):
                e = {"ovf_add": a + b, "ovf_sub": a - b, "ovf_mul": a * b}[op]
                m = (e < -(2**31)) | (e > 2**31 - 1)
            else:
                m = {"eq": a == b, "ne": a != b, "lt": a < b, "le": a <= b,
                     "gt": a > b, "ge": a >= b}[op]
            r = m & ~p
        elif op in ("add", "sub", "mul"):
            r = (_wrap({"add": a + b, "sub": a - b, "mul": a * b}[op]), p)
        else:
            z = b == 0
            bb = np.where(z, 1, b)
            q = _trunc_div(a, bb)
            v = _wrap(q) if op == "div" else a - bb * q
            r = (v, p | z)
    memo[k] = r
    return r


def _trunc_div(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    q = np.floor_divide(a, b)
    fix = (q < 0) & (q * b != a)
    return q + fix
