"""Bundled PIL targets.

Each ``.pil`` file carries its own metadata in comment directives::

    // template: ftp
    // seed: "USER anonymous\\r\\n"      (one line per packet of the seed session)
    ... statement ...  // expect: OOB_WRITE

``expect`` marks the statement on that line as a known violation site.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from ..pil import Program, load_program

NAMES = ("ftp-vuln", "ftp-safe", "vulnserver", "arith-demo", "leak-demo")

_DIRECTIVE = re.compile(r"//\s*(template|seed|expect):\s*(.*?)\s*$")


class TargetError(ValueError):
    pass


@dataclass(frozen=True)
class Target:
    name: str
    text: str
    program: Program
    template: Optional[str]
    seeds: tuple
    expected: frozenset  # {(kind, stmt)}

    @property
    def expected_kinds(self) -> set:
        return {k for k, _ in self.expected}


def _directives(text: str):
    template = None
    seeds = []
    expects = []
    for lineno, line in enumerate(text.splitlines(), 1):
        m = _DIRECTIVE.search(line)
        if m is None:
            continue
        key, value = m.groups()
        if key == "template":
            template = value
        elif key == "seed":
            try:
                seeds.append(ast.literal_eval("b" + value))
            except (ValueError, SyntaxError) as exc:
                raise TargetError(f"line {lineno}: bad seed literal {value!r}") from exc
        else:
            expects.append((lineno, value))
    return template, tuple(seeds), expects


def expected_findings(program: Program, expects) -> frozenset:
    by_line = {}
    for sid, (_, s) in program.statements.items():
        by_line.setdefault(s.line, []).append(sid)
    out = set()
    for lineno, kind in expects:
        sids = by_line.get(lineno)
        if not sids:
            raise TargetError(f"line {lineno}: 'expect' is not on a statement")
        out.add((kind, min(sids)))
    return frozenset(out)


def parse_target(name: str, text: str) -> Target:
    program = load_program(text)
    template, seeds, expects = _directives(text)
    return Target(name, text, program, template, seeds, expected_findings(program, expects))


def builtin_text(name: str) -> str:
    if name not in NAMES:
        raise TargetError(f"unknown builtin target {name!r} (have: {', '.join(NAMES)})")
    return resources.files(__name__).joinpath(f"{name}.pil").read_text(encoding="utf-8")


def get_target(name: str) -> Target:
    return parse_target(name, builtin_text(name))


def load_target_file(path) -> Target:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise TargetError(f"cannot read target {path}: {exc}") from exc
    return parse_target(p.stem, text)


def bundled_targets() -> list:
    """``(name, PIL text, expected findings)`` for every bundled target."""
    out = []
    for name in NAMES:
        t = get_target(name)
        out.append((t.name, t.text, t.expected))
    return out
