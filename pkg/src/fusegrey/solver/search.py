"""Finite-domain satisfiability over byte variables.

Every symbolic leaf is a packet byte, so each variable ranges over 0..255.
``solve`` splits the query into variable-independent components and runs,
per component, propagation followed by backtracking:

* bounds propagation over shared sub-terms (forward interval evaluation,
  backward narrowing through comparisons, ``+``/``-``/``*`` by constants,
  ``ite`` and the boolean connectives);
* value classes: two values of a variable are interchangeable when every
  maximal sub-term mentioning only that variable evaluates the same on both,
  so each domain is cut down to one representative per class;
* exact domain filtering of every constraint with at most two unfixed
  variables, by vectorised enumeration of their joint domain;
* vectorised enumeration once the remaining joint domain is small, else
  case splits on undecided disjunctions, else search with
  smallest-domain-first variable order and ascending values (hint first).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import terms as T
from .terms import INT_MAX, INT_MIN, Term, eval_term, in_range

DEFAULT_BUDGET_MS = 5000
DEFAULT_BUDGET_NODES = 2_000_000
_PAIR_LIMIT = 65536
_ENUM_LIMIT = 65536
_PROBES = 256
_MAX_SPLIT = 64
_PLAIN_NODES = 300
_SWEEP_LIMIT = 1 << 24  # joint domains this small are swept exhaustively
_SWEEP_CHUNK = 1 << 16
_ALL_BYTES = np.arange(256, dtype=np.int64)


@dataclass(frozen=True)
class Sat:
    model: dict


@dataclass(frozen=True)
class Unsat:
    pass


@dataclass(frozen=True)
class Unknown:
    reason: str = "budget exhausted"


class _OutOfBudget(Exception):
    pass


class _PhaseOver(Exception):
    pass


class _Budget:
    def __init__(self, ms, nodes):
        self.deadline = None if ms is None else time.monotonic() + ms / 1000.0
        self.nodes_left = nodes
        self.used = 0
        self.cap = None  # soft limit on ``used`` for the current search phase

    def tick(self) -> None:
        self.used += 1
        self.nodes_left -= 1
        if self.nodes_left < 0:
            raise _OutOfBudget("node budget exhausted")
        if self.cap is not None and self.used > self.cap:
            raise _PhaseOver()
        if self.deadline is not None and self.used % 64 == 0 and time.monotonic() > self.deadline:
            raise _OutOfBudget("time budget exhausted")


# -- vectorised evaluation ---------------------------------------------------


def _wrap(x):
    return np.asarray(x, dtype=np.int64).astype(np.int32).astype(np.int64)


def _tdiv(a, b):
    # operands are below 2**32 in magnitude, where the rounded float quotient
    # always truncates to the exact integer quotient
    return np.trunc(np.true_divide(a, b)).astype(np.int64)


def veval(t: Term, cols: dict, memo: dict):
    """Evaluate over numpy columns.

    Integer nodes yield ``(values, poison)`` with ``poison`` a bool array or
    None; boolean nodes yield a bool array (or numpy bool scalar).
    """
    key = id(t)
    r = memo.get(key)
    if r is not None:
        return r
    op = t.op
    if op == "const":
        r = (np.int64(t.val), None)
    elif op == "bool":
        r = np.bool_(t.val)
    elif op == "byte":
        r = (cols[t.val], None)
    elif op == "poison":
        r = (np.int64(0), np.bool_(True))
    elif op == "and":
        r = np.bool_(True)
        for a in t.args:
            r = r & veval(a, cols, memo)
    elif op == "or":
        r = np.bool_(False)
        for a in t.args:
            r = r | veval(a, cols, memo)
    elif op == "not":
        r = ~veval(t.args[0], cols, memo)
    elif op == "ite":
        c = veval(t.args[0], cols, memo)
        a = veval(t.args[1], cols, memo)
        b = veval(t.args[2], cols, memo)
        if t.is_bool:
            r = np.where(c, a, b)
        else:
            pa, pb = a[1], b[1]
            pois = None
            if pa is not None or pb is not None:
                pois = np.where(c, False if pa is None else pa, False if pb is None else pb)
            r = (np.where(c, a[0], b[0]), pois)
    elif op == "compose":
        v = np.int64(0)
        pois = None
        for i, a in enumerate(t.args):
            av, ap = veval(a, cols, memo)
            v = v + ((av & 0xFF) << (8 * i))
            pois = _por(pois, ap)
        r = (_wrap(v), pois)
    else:
        (a, pa), (b, pb) = veval(t.args[0], cols, memo), veval(t.args[1], cols, memo)
        pois = _por(pa, pb)
        if op in T.CMP_OPS:
            if op == "eq":
                v = a == b
            elif op == "ne":
                v = a != b
            elif op == "lt":
                v = a < b
            elif op == "le":
                v = a <= b
            elif op == "gt":
                v = a > b
            else:
                v = a >= b
            r = v if pois is None else v & ~pois
        elif op.startswith("ovf_"):
            e = a + b if op == "ovf_add" else a - b if op == "ovf_sub" else a * b
            v = (e < INT_MIN) | (e > INT_MAX)
            r = v if pois is None else v & ~pois
        elif op == "add":
            r = (_wrap(a + b), pois)
        elif op == "sub":
            r = (_wrap(a - b), pois)
        elif op == "mul":
            r = (_wrap(a * b), pois)
        elif op in ("div", "mod"):
            zero = b == 0
            safe = np.where(zero, 1, b)
            q = _tdiv(a, safe)
            v = _wrap(q) if op == "div" else a - safe * q
            r = (v, _por(pois, zero))
        else:
            raise ValueError(f"cannot evaluate op {op}")
    memo[key] = r
    return r


def _por(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a | b


# -- bounds propagation ------------------------------------------------------

_NEGATE = {"eq": "ne", "ne": "eq", "lt": "ge", "le": "gt", "gt": "le", "ge": "lt"}


class _Bounds:
    """One round of forward/backward interval reasoning over a constraint set."""

    def __init__(self, var_iv: dict):
        self.var_iv = var_iv
        self.iv = {}

    def fwd(self, t: Term):
        k = id(t)
        r = self.iv.get(k)
        if r is not None:
            return r
        if t.op == "byte":
            r = self.var_iv.get(t.val, (0, 255))
        elif not t.args:
            r = (t.lo, t.hi)
        else:
            ivs = [self.fwd(a) for a in t.args]
            lo, hi, _ = T.node_interval(t.op, t.val, ivs, [a.poison for a in t.args])
            r = (lo, hi)
        self.iv[k] = r
        return r

    def assert_true(self, t: Term) -> bool:
        return self.nb(t, True)

    def nb(self, t: Term, want: bool) -> bool:
        lo, hi = self.fwd(t)
        w = 1 if want else 0
        if not lo <= w <= hi:
            return False
        if lo == hi:
            return True
        self.iv[id(t)] = (w, w)
        op = t.op
        if op == "and" or op == "or":
            forced = want if op == "and" else not want
            if forced:
                return all(self.nb(a, want) for a in t.args)
            open_ = [a for a in t.args if self.fwd(a) != ((1, 1) if op == "and" else (0, 0))]
            if not open_:
                return False
            if len(open_) == 1:
                return self.nb(open_[0], want)
            return True
        if op == "not":
            return self.nb(t.args[0], not want)
        if op in T.CMP_OPS:
            x, y = t.args
            if not want:
                if x.poison or y.poison:
                    return True
                op = _NEGATE[op]
            return self.relate(op, x, y)
        if op == "ite":
            return self._ite(t, (w, w), lambda a: self.nb(a, want))
        return True

    def relate(self, op: str, x: Term, y: Term) -> bool:
        if op == "gt":
            op, x, y = "lt", y, x
        elif op == "ge":
            op, x, y = "le", y, x
        xl, xh = self.fwd(x)
        yl, yh = self.fwd(y)
        if op == "lt":
            return self.ni(x, INT_MIN, yh - 1) and self.ni(y, self.fwd(x)[0] + 1, INT_MAX)
        if op == "le":
            return self.ni(x, INT_MIN, yh) and self.ni(y, self.fwd(x)[0], INT_MAX)
        if op == "eq":
            lo, hi = max(xl, yl), min(xh, yh)
            return self.ni(x, lo, hi) and self.ni(y, lo, hi)
        # ne: only a singleton on one side touching the other's bound narrows
        if yl == yh:
            if xl == yl:
                return self.ni(x, xl + 1, xh)
            if xh == yl:
                return self.ni(x, xl, xh - 1)
        if xl == xh:
            if yl == xl:
                return self.ni(y, yl + 1, yh)
            if yh == xl:
                return self.ni(y, yl, yh - 1)
        return True

    def ni(self, t: Term, lo: int, hi: int) -> bool:
        cl, ch = self.fwd(t)
        nl, nh = max(cl, lo), min(ch, hi)
        if nl > nh:
            return False
        if nl == cl and nh == ch:
            return True
        self.iv[id(t)] = (nl, nh)
        op = t.op
        if op == "byte":
            self.var_iv[t.val] = (nl, nh)
            return True
        if op == "add" or op == "sub":
            x, y = t.args
            xl, xh = self.fwd(x)
            yl, yh = self.fwd(y)
            if op == "add":
                if not (in_range(xl + yl) and in_range(xh + yh)):
                    return True
                return self.ni(x, nl - yh, nh - yl) and self.ni(y, nl - self.fwd(x)[1], nh - self.fwd(x)[0])
            if not (in_range(xl - yh) and in_range(xh - yl)):
                return True
            return self.ni(x, nl + yl, nh + yh) and self.ni(y, self.fwd(x)[0] - nh, self.fwd(x)[1] - nl)
        if op == "mul":
            x, y = t.args
            if x.op == "const":
                x, y = y, x
            if y.op != "const" or y.val == 0:
                return True
            c = y.val
            xl, xh = self.fwd(x)
            corners = (xl * c, xh * c)
            if not (in_range(min(corners)) and in_range(max(corners))):
                return True
            if c > 0:
                return self.ni(x, -((-nl) // c), nh // c)
            return self.ni(x, -((-nh) // c), nl // c)
        if op == "ite":
            return self._ite(t, (nl, nh), lambda a: self.ni(a, nl, nh))
        if op == "compose" and len(t.args) == 1:
            return self.ni(t.args[0], nl, nh)
        return True

    def _ite(self, t: Term, target, narrow_branch) -> bool:
        c, a, b = t.args
        cl, ch = self.fwd(c)
        if cl == 1:
            return narrow_branch(a)
        if ch == 0:
            return narrow_branch(b)
        lo, hi = target
        al, ah = self.fwd(a)
        bl, bh = self.fwd(b)
        a_ok = not (ah < lo or al > hi)
        b_ok = not (bh < lo or bl > hi)
        if not a_ok and not b_ok:
            return False
        if not a_ok:
            return self.nb(c, False) and narrow_branch(b)
        if not b_ok:
            return self.nb(c, True) and narrow_branch(a)
        return True


# -- search ------------------------------------------------------------------


class _Component:
    def __init__(self, constraints: list, variables: list, budget: _Budget, hint=None):
        self.cons = constraints
        self.vars = variables
        self.budget = budget
        self.hint = hint or {}
        self.cvars = [sorted(c.vars) for c in constraints]

    def propagate(self, domains: dict, touched=None) -> bool:
        """Narrow ``domains`` in place; False when some domain empties.

        Only constraints over a variable in ``touched`` (None = all) are
        domain-filtered in the first round, later rounds follow changes.
        """
        for _ in range(64):
            changed = set()
            var_iv = {v: (int(d[0]), int(d[-1])) for v, d in domains.items()}
            b = _Bounds(var_iv)
            for c in self.cons:
                if not b.assert_true(c):
                    return False
            for v, (lo, hi) in var_iv.items():
                d = domains[v]
                if lo > d[0] or hi < d[-1]:
                    d = d[(d >= lo) & (d <= hi)]
                    if len(d) == 0:
                        return False
                    domains[v] = d
                    changed.add(v)
            for c, cv in zip(self.cons, self.cvars):
                if touched is not None and not touched.intersection(cv):
                    continue
                free = [v for v in cv if len(domains[v]) > 1]
                size = 1
                for v in free:
                    size *= len(domains[v])
                if size > _PAIR_LIMIT:
                    continue
                res = self._filter(c, cv, free, domains)
                if res is None:
                    return False
                changed |= res
            if not changed:
                return True
            touched = changed
        return True

    def _filter(self, c: Term, cv: list, free: list, domains: dict):
        """Domain-filter one constraint over the joint domain of its free
        variables; None on wipe-out, else the set of narrowed variables."""
        self.budget.tick()
        cols = {v: domains[v][0] for v in cv if v not in free}
        if not free:
            return set() if bool(veval(c, cols, {})) else None
        doms = [domains[v] for v in free]
        shape = tuple(len(d) for d in doms)
        grids = np.meshgrid(*doms, indexing="ij")
        for v, g in zip(free, grids):
            cols[v] = g.ravel()
        mask = np.broadcast_to(veval(c, cols, {}), (grids[0].size,)).reshape(shape)
        if mask.all():
            return set()
        if not mask.any():
            return None
        out = set()
        for ax, (v, d) in enumerate(zip(free, doms)):
            others = tuple(a for a in range(len(free)) if a != ax)
            support = mask.any(axis=others) if others else mask
            if not support.all():
                domains[v] = d[support]
                out.add(v)
        return out

    def probe(self, domains: dict):
        """Try a fixed pseudo-random sample of points at once.

        Point k keeps each hinted variable at its hint with probability
        k / _PROBES and otherwise draws from the domain, so the sample spans
        from pure noise to small perturbations of the hint.
        """
        self.budget.tick()
        rng = np.random.default_rng(len(self.vars))
        keep = np.arange(_PROBES) / _PROBES
        cols = {}
        for v in self.vars:
            d = domains[v]
            col = d[rng.integers(0, len(d), _PROBES)]
            if v in self.hint:
                col = np.where(rng.random(_PROBES) < keep, self.hint[v], col)
                col[-1] = self.hint[v]
            col[0] = d[0]
            cols[v] = col
        memo = {}
        mask = np.ones(_PROBES, dtype=bool)
        for c in self.cons:
            mask &= np.broadcast_to(veval(c, cols, memo), mask.shape)
            if not mask.any():
                return None
        k = int(np.argmax(mask))
        return {v: int(cols[v][k]) for v in self.vars}

    def solve(self):
        domains = value_classes(self.cons, self.vars)
        model = self.probe(domains)
        if model is not None:
            return model
        if not self.propagate(domains):
            return None
        # plain value search settles most queries quickly; when it stalls,
        # restart with case splits on wide disjunctions
        self.budget.cap = self.budget.used + _PLAIN_NODES
        try:
            return self._search(dict(domains), False)
        except _PhaseOver:
            pass
        finally:
            self.budget.cap = None
        size = 1
        for v in self.vars:
            size *= len(domains[v])
        if size <= _SWEEP_LIMIT:
            return self._sweep(domains)
        return self._search(domains, True)

    def _sweep(self, domains: dict):
        """Exhaustive row-major scan in slices of the first variable;
        decides any component whose joint domain fits under _SWEEP_LIMIT."""
        first, rest = self.vars[0], self.vars[1:]
        grids = np.meshgrid(*(domains[v] for v in rest), indexing="ij") if rest else []
        base = {v: g.ravel() for v, g in zip(rest, grids)}
        inner = grids[0].size if rest else 1
        d0 = domains[first]
        step = max(1, _SWEEP_CHUNK // inner)
        for start in range(0, len(d0), step):
            self.budget.tick()
            head = d0[start:start + step]
            cols = {v: np.tile(col, len(head)) for v, col in base.items()}
            cols[first] = np.repeat(head, inner)
            for c in self.cons:
                ok = np.broadcast_to(veval(c, cols, {}), cols[first].shape)
                if not ok.any():
                    break
                cols = {v: col[ok] for v, col in cols.items()}
            else:
                return {v: int(cols[v][0]) for v in self.vars}
        return None

    def _enumerate(self, domains: dict):
        """First satisfying point of the (small) joint domain, in row-major order."""
        self.budget.tick()
        grids = np.meshgrid(*(domains[v] for v in self.vars), indexing="ij")
        cols = {v: g.ravel() for v, g in zip(self.vars, grids)}
        size = cols[self.vars[0]].shape
        memo = {}
        mask = np.ones(size, dtype=bool)
        for c in self.cons:
            mask &= np.broadcast_to(veval(c, cols, memo), size)
            if not mask.any():
                return None
        k = int(np.argmax(mask))
        return {v: int(cols[v][k]) for v in self.vars}

    def _open_disjunction(self, domains: dict):
        """The undecided top-level ``or`` with the fewest disjuncts, among
        those too wide for exact domain filtering."""
        b = _Bounds({v: (int(d[0]), int(d[-1])) for v, d in domains.items()})
        best = None
        for c, cv in zip(self.cons, self.cvars):
            if c.op != "or" or len(c.args) > _MAX_SPLIT:
                continue
            size = 1
            for v in cv:
                size *= len(domains[v])
            if size <= _PAIR_LIMIT:
                continue
            if b.fwd(c) != (0, 1) or any(b.fwd(a) == (1, 1) for a in c.args):
                continue
            if best is None or len(c.args) < len(best.args):
                best = c
        return best

    def _search(self, domains: dict, split: bool):
        free = [v for v in self.vars if len(domains[v]) > 1]
        if not free:
            model = {v: int(d[0]) for v, d in domains.items()}
            if all(eval_term(c, model) is True for c in self.cons):
                return model
            return None
        total = 1
        for v in free:
            total *= len(domains[v])
        if total <= _ENUM_LIMIT:
            return self._enumerate(domains)
        disj = self._open_disjunction(domains) if split else None
        if disj is not None:
            for d in disj.args:
                self.budget.tick()
                sub = _Component(self.cons + _flatten([d]), self.vars, self.budget, self.hint)
                d2 = dict(domains)
                if sub.propagate(d2):
                    model = sub._search(d2, split)
                    if model is not None:
                        return model
            return None
        var = min(free, key=lambda v: (len(domains[v]), v))
        values = domains[var]
        h = self.hint.get(var)
        if h is not None and h in values:
            values = [h] + [x for x in values if x != h]
        for val in values:
            self.budget.tick()
            d2 = dict(domains)
            d2[var] = np.array([val], dtype=np.int64)
            if self.propagate(d2, {var}):
                model = self._search(d2, split)
                if model is not None:
                    return model
        return None


def _single_var_roots(constraints: list) -> dict:
    """Maximal sub-terms that mention exactly one variable, grouped by it."""
    out = {}
    seen = set()
    stack = list(constraints)
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        vs = t.vars
        if len(vs) == 1:
            out.setdefault(next(iter(vs)), []).append(t)
        elif vs:
            stack.extend(t.args)
    return out


def value_classes(constraints: list, variables: list) -> dict:
    """Per variable, the smallest value of each interchangeability class."""
    roots = _single_var_roots(constraints)
    domains = {}
    for v in variables:
        cols = {v: _ALL_BYTES}
        memo = {}
        rows = []
        for t in roots.get(v, ()):
            r = veval(t, cols, memo)
            if isinstance(r, tuple):
                rows.append(np.broadcast_to(r[0], _ALL_BYTES.shape))
                if r[1] is not None:
                    rows.append(np.broadcast_to(r[1], _ALL_BYTES.shape).astype(np.int64))
            else:
                rows.append(np.broadcast_to(r, _ALL_BYTES.shape).astype(np.int64))
        if not rows:
            domains[v] = _ALL_BYTES[:1]
            continue
        _, first = np.unique(np.stack(rows, axis=1), axis=0, return_index=True)
        domains[v] = _ALL_BYTES[np.sort(first)]
    return domains


def _components(constraints: list) -> list:
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in constraints:
        vs = sorted(c.vars)
        for v in vs:
            parent.setdefault(v, v)
        for v in vs[1:]:
            ra, rb = find(vs[0]), find(v)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for c in constraints:
        root = find(min(c.vars))
        groups.setdefault(root, []).append(c)
    return [groups[k] for k in sorted(groups)]


def _flatten(constraints) -> list:
    out = []
    seen = set()
    stack = list(reversed(list(constraints)))
    while stack:
        c = stack.pop()
        if not c.is_bool:
            c = T.to_bool(c)
        if c.op == "and":
            stack.extend(reversed(c.args))
            continue
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


@dataclass
class Solver:
    """Stateful front end: per-instance result cache and query statistics."""

    budget_ms: float = DEFAULT_BUDGET_MS
    budget_nodes: int = DEFAULT_BUDGET_NODES
    cache: dict = field(default_factory=dict, repr=False)
    queries: int = 0
    unknowns: int = 0
    nodes: int = 0

    def solve(self, constraints, hint: dict = None):
        """Sat/Unsat/Unknown for the conjunction; ``hint`` is a candidate
        assignment tried before any search."""
        self.queries += 1
        cons = flat = _flatten(constraints)
        if any(c.hi == 0 for c in cons):
            return Unsat()
        cons = [c for c in cons if c.lo != 1]
        ground = [c for c in cons if not c.vars]
        for c in ground:
            if eval_term(c, {}) is not True:
                return Unsat()
        cons = [c for c in cons if c.vars]
        budget = _Budget(self.budget_ms, self.budget_nodes)
        model = {}
        unknown = None
        for comp in _components(cons):
            key = frozenset(comp)
            hit = self.cache.get(key)
            if hit is None:
                variables = sorted(set().union(*(c.vars for c in comp)))
                try:
                    found = _Component(comp, variables, budget, hint).solve()
                except _OutOfBudget as exc:
                    unknown = str(exc)
                    continue
                if found is not None:
                    # components are variable-disjoint, so checking each on its own suffices
                    for c in comp:
                        if eval_term(c, found) is not True:
                            raise AssertionError(f"solver produced a non-model for {T.to_sexpr(c)}")
                hit = Unsat() if found is None else Sat(found)
                self.cache[key] = hit
            if isinstance(hit, Unsat):
                self.nodes += budget.used
                return hit
            model.update(hit.model)
        self.nodes += budget.used
        if unknown is not None:
            self.unknowns += 1
            return Unknown(unknown)
        for c in flat:
            for v in c.vars:
                model.setdefault(v, 0)  # only in constraints that always hold
        return Sat(model)


def solve(constraints, budget_ms: float = DEFAULT_BUDGET_MS,
          budget_nodes: int = DEFAULT_BUDGET_NODES, hint: dict = None):
    """Decide a conjunction of boolean terms over byte variables."""
    return Solver(budget_ms, budget_nodes).solve(constraints, hint)
