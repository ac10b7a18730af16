from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from . import ast as A

UNREACHABLE = float("inf")


@dataclass(frozen=True)
class CallGraph:
    nodes: tuple
    edges: frozenset
    distances: dict  # (src, dst) -> hop count; missing pairs are unreachable

    def distance(self, src: str, dst: str) -> float:
        return self.distances.get((src, dst), UNREACHABLE)

    def callees(self, name: str) -> list:
        return sorted(d for s, d in self.edges if s == name)

    def out_degree(self, name: str) -> int:
        return len(self.callees(name))

    def distance_to_any(self, src: str, targets) -> float:
        return min((self.distance(src, t) for t in targets), default=UNREACHABLE)


def build_call_graph(program: A.Program) -> CallGraph:
    nodes = tuple(f.name for f in program.functions)
    edges = set()
    for f in program.functions:
        for c in A.call_sites(f):
            if c.name in program.function_map:
                edges.add((f.name, c.name))
    adj = {n: sorted(d for s, d in edges if s == n) for n in nodes}
    dist = {}
    for src in nodes:
        dist[(src, src)] = 0
        q = deque([src])
        while q:
            cur = q.popleft()
            for nxt in adj[cur]:
                if (src, nxt) not in dist:
                    dist[(src, nxt)] = dist[(src, cur)] + 1
                    q.append(nxt)
    return CallGraph(nodes, frozenset(edges), dist)
