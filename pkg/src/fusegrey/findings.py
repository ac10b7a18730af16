"""Values shared by every engine: findings, coverage maps, traces, witnesses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

OOB_READ = "OOB_READ"
OOB_WRITE = "OOB_WRITE"
ARITH_OVERFLOW = "ARITH_OVERFLOW"
DIV_BY_ZERO = "DIV_BY_ZERO"
MEMORY_LEAK = "MEMORY_LEAK"
ASSERT_FAIL = "ASSERT_FAIL"
USE_AFTER_FREE = "USE_AFTER_FREE"
DOUBLE_FREE = "DOUBLE_FREE"
STEP_EXHAUSTED = "STEP_EXHAUSTED"

KINDS = (
    OOB_READ, OOB_WRITE, ARITH_OVERFLOW, DIV_BY_ZERO, MEMORY_LEAK,
    ASSERT_FAIL, USE_AFTER_FREE, DOUBLE_FREE, STEP_EXHAUSTED,
)


@dataclass(frozen=True)
class Finding:
    kind: str
    stmt: int
    function: str
    message: str
    packets: tuple = ()
    index: Optional[int] = None
    length: Optional[int] = None

    @property
    def key(self) -> tuple:
        return (self.kind, self.stmt)

    def to_json(self) -> dict:
        d = {"kind": self.kind, "stmt": self.stmt, "function": self.function, "message": self.message}
        if self.index is not None:
            d["index"] = self.index
            d["length"] = self.length
        return d


@dataclass(frozen=True)
class CoverageMap:
    edges: frozenset = frozenset()  # {(branch StmtId, taken)}
    functions: frozenset = frozenset()

    def merge(self, other: "CoverageMap") -> "CoverageMap":
        return merge_coverage(self, other)

    def summary(self, total_functions: int) -> dict:
        return {
            "functions_covered": sorted(self.functions),
            "functions_total": total_functions,
            "edges": len(self.edges),
        }


EMPTY_COVERAGE = CoverageMap()


def merge_coverage(a: CoverageMap, b: CoverageMap) -> CoverageMap:
    return CoverageMap(a.edges | b.edges, a.functions | b.functions)


@dataclass(frozen=True)
class TraceStep:
    stmt: int
    fn: str
    vars: dict = field(default_factory=dict, compare=True, hash=False)

    def to_json(self) -> dict:
        return {"stmt": self.stmt, "fn": self.fn, "vars": self.vars}


def trace_to_jsonl(trace) -> str:
    return "".join(json.dumps(s.to_json(), sort_keys=True) + "\n" for s in trace)


def trace_from_jsonl(text: str) -> list:
    steps = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            steps.append(TraceStep(d["stmt"], d["fn"], d["vars"]))
    return steps


@dataclass(frozen=True)
class Witness:
    """A finding plus the packet session and stage-by-stage trace reproducing it."""

    finding: Finding
    packets: tuple
    trace: tuple = ()
    engine: str = ""

    @property
    def key(self) -> tuple:
        return self.finding.key
