"""Coverage-guided mutational fuzzer over packet sessions.

The queue holds sessions that reached at least one new branch edge.  Each
cycle walks the queue in order and spends an entry's energy on mutated
candidates; every candidate runs through the concrete runtime.
"""

from __future__ import annotations

import hashlib
import logging
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .findings import EMPTY_COVERAGE, CoverageMap
from .packet import read_corpus_dir, write_corpus_dir
from .pil import Program
from .runtime import ExecConfig, make_witness, run_session

log = logging.getLogger(__name__)

BASE_ENERGY = 64
FAVORED_FACTOR = 2
MAX_SESSION_PACKETS = 16
PACKET_OP_RATE = 1 / 16  # chance a candidate also dups or drops a whole packet

INTERESTING = (0, 1, 0x7F, 0xFF, 0x7FFF, 0x7FFFFFFF)
MUTATORS = ("bitflip", "byteflip", "arith", "interesting", "dup_block", "del_block", "splice", "havoc")
DEFAULT_WEIGHTS = {m: 1.0 for m in MUTATORS}
DEFAULT_WEIGHTS["havoc"] = 2.0


def _le(v: int) -> bytes:
    return v.to_bytes(max(1, (v.bit_length() + 7) // 8), "little")


INTERESTING_BYTES = tuple(_le(v) for v in INTERESTING)


def edge_signature(edges) -> str:
    h = hashlib.sha256()
    for sid, taken in sorted(edges):
        h.update(f"{sid}:{int(taken)};".encode())
    return h.hexdigest()[:16]


@dataclass
class QueueEntry:
    packets: tuple
    cov_signature: str
    energy: int
    favored: bool
    new_edges: frozenset = frozenset()
    coverage: CoverageMap = EMPTY_COVERAGE

    def __post_init__(self):
        if self.energy < 0:
            raise ValueError("energy must be >= 0")


@dataclass(frozen=True)
class FuzzConfig:
    rng_seed: int = 0
    budget_execs: Optional[int] = 10_000
    budget_ms: Optional[int] = None
    max_packet_len: int = 4096
    weights: tuple = tuple(DEFAULT_WEIGHTS.items())
    exec_config: ExecConfig = ExecConfig(step_limit=200_000)

    def __post_init__(self):
        if self.budget_execs is None and self.budget_ms is None:
            raise ValueError("FuzzConfig needs budget_execs or budget_ms")
        if self.max_packet_len < 1:
            raise ValueError("max_packet_len must be >= 1")
        names = [n for n, _ in self.weights]
        if any(n not in MUTATORS for n in names) or not any(w > 0 for _, w in self.weights):
            raise ValueError(f"weights must name mutators from {MUTATORS} with one positive")


@dataclass
class FuzzReport:
    findings: list  # Witness, one per (kind, stmt), in discovery order
    coverage: CoverageMap
    corpus: list  # QueueEntry
    executions: int
    wall_ms: float = 0.0
    budget_hit: str = "execs"

    def summary(self, total_functions: int) -> dict:
        return {
            "findings": [w.finding.to_json() for w in self.findings],
            "coverage": self.coverage.summary(total_functions),
            "executions": self.executions,
            "corpus_size": len(self.corpus),
        }


# -- byte-level mutators -------------------------------------------------------


def _bitflip(rng, data: bytearray, cfg, pool) -> None:
    if data:
        data[rng.randrange(len(data))] ^= 1 << rng.randrange(8)


def _byteflip(rng, data: bytearray, cfg, pool) -> None:
    if data:
        data[rng.randrange(len(data))] ^= 0xFF


def _arith(rng, data: bytearray, cfg, pool) -> None:
    if data:
        i = rng.randrange(len(data))
        delta = rng.randint(1, 35)
        data[i] = (data[i] + (delta if rng.random() < 0.5 else -delta)) & 0xFF


def _interesting(rng, data: bytearray, cfg, pool) -> None:
    if data:
        v = INTERESTING_BYTES[rng.randrange(len(INTERESTING_BYTES))]
        i = rng.randrange(len(data))
        chunk = v[:len(data) - i]
        data[i:i + len(chunk)] = chunk


def _dup_block(rng, data: bytearray, cfg, pool) -> None:
    room = cfg.max_packet_len - len(data)
    if room <= 0:
        return
    if not data:
        # nothing to copy yet: grow by one random byte
        data.append(rng.randrange(256))
        return
    start = rng.randrange(len(data))
    n = min(rng.randint(1, len(data) - start), room)
    at = rng.randint(0, len(data))
    data[at:at] = data[start:start + n]


def _del_block(rng, data: bytearray, cfg, pool) -> None:
    if len(data) > 1:
        start = rng.randrange(len(data))
        n = rng.randint(1, len(data) - start)
        del data[start:start + n]


def _splice(rng, data: bytearray, cfg, pool) -> None:
    donors = [p for p in pool if p and p != data]
    if not donors:
        return
    other = donors[rng.randrange(len(donors))]
    cut = rng.randint(0, len(data))
    cut2 = rng.randrange(len(other))
    data[cut:] = other[cut2:]
    del data[cfg.max_packet_len:]


_BASIC = {
    "bitflip": _bitflip, "byteflip": _byteflip, "arith": _arith, "interesting": _interesting,
    "dup_block": _dup_block, "del_block": _del_block, "splice": _splice,
}
_HAVOC_OPS = tuple(_BASIC.values())


def _havoc(rng, data: bytearray, cfg, pool) -> None:
    for _ in range(rng.randint(2, 64)):
        _HAVOC_OPS[rng.randrange(len(_HAVOC_OPS))](rng, data, cfg, pool)


_ALL = dict(_BASIC, havoc=_havoc)


def mutate_packets(packets, rng: random.Random, config: FuzzConfig, pool=()) -> tuple:
    """One candidate session derived from ``packets``."""
    names = [n for n, w in config.weights if w > 0]
    weights = [w for _, w in config.weights if w > 0]
    session = [bytes(p) for p in packets] or [b""]
    if rng.random() < PACKET_OP_RATE:
        j = rng.randrange(len(session))
        if (rng.random() < 0.5 or len(session) == 1) and len(session) < MAX_SESSION_PACKETS:
            session.insert(rng.randint(0, len(session)), session[j])
        elif len(session) > 1:
            del session[j]
    j = rng.randrange(len(session))
    data = bytearray(session[j])
    name = rng.choices(names, weights)[0]
    _ALL[name](rng, data, config, pool)
    del data[config.max_packet_len:]
    session[j] = bytes(data)
    return tuple(session)


def mutate(entry: QueueEntry, rng: random.Random, config: FuzzConfig = FuzzConfig(), pool=()) -> list:
    """``entry.energy`` candidate sessions; ``pool`` holds donor packets for splicing."""
    return [mutate_packets(entry.packets, rng, config, pool) for _ in range(entry.energy)]


# -- the loop ------------------------------------------------------------------


class _Campaign:
    def __init__(self, program: Program, config: FuzzConfig):
        self.program = program
        self.config = config
        self.queue = []
        self.seen = set()  # packet tuples ever admitted
        self.edges = set()
        self.functions = set()
        self.findings = {}
        self.execs = 0
        self.pool = []

    def execute(self, packets: tuple, seed: bool = False) -> None:
        self.execs += 1
        res = run_session(self.program, packets, self.config.exec_config)
        new = res.coverage.edges - self.edges
        self.edges |= res.coverage.edges
        self.functions |= res.coverage.functions
        if res.finding is not None:
            if res.finding.key not in self.findings:
                w = make_witness(self.program, packets, "fuzz", self.config.exec_config)
                if w is not None and w.key == res.finding.key:
                    self.findings[res.finding.key] = w
            return
        if packets in self.seen:
            return
        if new or (seed and not self.queue):
            energy = BASE_ENERGY * FAVORED_FACTOR if new else BASE_ENERGY
            self.queue.append(QueueEntry(packets, edge_signature(new), energy, bool(new),
                                         frozenset(new), res.coverage))
            self.seen.add(packets)
            self.pool.extend(p for p in packets if p not in self.pool)

    @property
    def coverage(self) -> CoverageMap:
        return CoverageMap(frozenset(self.edges), frozenset(self.functions))


def fuzz_loop(program: Program, seeds, config: FuzzConfig = FuzzConfig()) -> FuzzReport:
    """Fuzz from ``seeds`` (a list of packet sessions) until the budget runs out."""
    seeds = [tuple(bytes(p) for p in s) for s in seeds]
    if not seeds:
        raise ValueError("fuzz_loop needs at least one seed session")
    rng = random.Random(config.rng_seed)
    c = _Campaign(program, config)
    t0 = time.monotonic()
    deadline = None if config.budget_ms is None else t0 + config.budget_ms / 1000
    limit = config.budget_execs

    def spent() -> Optional[str]:
        if limit is not None and c.execs >= limit:
            return "execs"
        if deadline is not None and time.monotonic() >= deadline:
            return "ms"
        return None

    hit = None
    for s in seeds:
        hit = spent()
        if hit:
            break
        c.execute(s, seed=True)
    if not c.queue and not hit:
        # every seed violated: mutate the first one anyway
        c.queue.append(QueueEntry(seeds[0], edge_signature(()), BASE_ENERGY, False))
    while not hit:
        i = 0
        while i < len(c.queue) and not hit:
            entry = c.queue[i]
            for _ in range(entry.energy):
                hit = spent()
                if hit:
                    break
                c.execute(mutate_packets(entry.packets, rng, config, c.pool))
            i += 1
    wall = (time.monotonic() - t0) * 1000
    log.info("fuzz: %d execs, %d edges, %d queue entries, %d findings",
             c.execs, len(c.edges), len(c.queue), len(c.findings))
    return FuzzReport(list(c.findings.values()), c.coverage, c.queue, c.execs, wall, hit)


def uncovered_functions(program: Program, coverage: CoverageMap) -> set:
    return {f.name for f in program.functions} - set(coverage.functions)


# -- corpus persistence --------------------------------------------------------


def save_corpus(corpus, path) -> list:
    """One subdirectory per queue entry, each holding that session's packet files."""
    root = Path(path)
    names = []
    for i, e in enumerate(corpus):
        name = f"entry_{i:05d}"
        write_corpus_dir(root / name, e.packets)
        names.append(name)
    return names


def load_corpus(path) -> list:
    root = Path(path)
    return [tuple(read_corpus_dir(d)) for d in sorted(root.iterdir()) if d.is_dir()]
