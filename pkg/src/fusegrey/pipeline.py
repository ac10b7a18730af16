"""Hybrid campaign: seeds and template, fuzz, hand uncovered functions to the
symbolic engines, then aggregate findings, witnesses and the JSON report.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .bmc import BmcConfig, bmc_run
from .findings import EMPTY_COVERAGE, Finding, Witness, merge_coverage, trace_from_jsonl, trace_to_jsonl
from .fuzzer import FuzzConfig, fuzz_loop, uncovered_functions
from .packet import (
    FormatError, TemplateError, get_template, load_seed_session, mark_session, write_corpus_dir,
)
from .runtime import replay_witness
from .symex import ExploreConfig, explore
from .targets import NAMES as BUILTIN_NAMES
from .targets import Target, TargetError, get_target, load_target_file

log = logging.getLogger(__name__)

ENGINES = ("fuzz", "symex", "bmc")
SHARES = {"fuzz": 0.50, "symex": 0.25, "bmc": 0.25}
DEFAULT_TOTAL_EXECS = 20_000
# exec-equivalents charged per unit of each engine's work (exec, path, solver query)
UNIT_COST = {"fuzz": 1, "symex": 10, "bmc": 1}
REPORT_NAME = "report.json"


class CampaignError(ValueError):
    """Bad configuration or target; raised before any phase runs."""


@dataclass(frozen=True)
class CampaignConfig:
    target: str  # PIL path or bundled name
    seeds: Optional[str] = None  # pcap file or packet dir; None = the target's own seeds
    template: Optional[str] = None
    mark: Optional[tuple] = None  # None = every template field
    budget_execs: Optional[int] = None  # total across engines
    budget_ms: Optional[int] = None
    unwind: int = 128
    max_paths: Optional[int] = None
    engines: tuple = ENGINES
    rng_seed: int = 0
    out_dir: Optional[str] = None
    fuzz: Optional[FuzzConfig] = None  # explicit per-engine configs override the split
    explore: Optional[ExploreConfig] = None
    bmc: Optional[BmcConfig] = None

    def __post_init__(self):
        if not self.engines:
            raise CampaignError("at least one engine must be enabled")
        bad = [e for e in self.engines if e not in ENGINES]
        if bad:
            raise CampaignError(f"unknown engine(s) {bad}; choose from {list(ENGINES)}")
        for name in ("budget_execs", "budget_ms", "max_paths"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise CampaignError(f"{name} must be >= 1")
        if self.unwind < 1:
            raise CampaignError("unwind must be >= 1")

    def echo(self) -> dict:
        """Config as it appears in the report (the output directory is left out)."""
        return {
            "target": self.target,
            "seeds": self.seeds,
            "template": self.template,
            "mark": None if self.mark is None else list(self.mark),
            "budget_execs": self.budget_execs,
            "budget_ms": self.budget_ms,
            "unwind": self.unwind,
            "max_paths": self.max_paths,
            "engines": [e for e in ENGINES if e in self.engines],
            "rng_seed": self.rng_seed,
        }


def split_budget(config: CampaignConfig) -> dict:
    """Per-engine (work units, ms) shares of the campaign budget over the enabled engines.

    Work units are fuzz executions, symex paths and bmc solver queries.
    """
    enabled = [e for e in ENGINES if e in config.engines]
    total = sum(SHARES[e] for e in enabled)
    execs = config.budget_execs
    if execs is None and config.budget_ms is None:
        execs = DEFAULT_TOTAL_EXECS
    out = {}
    for e in enabled:
        share = SHARES[e] / total
        out[e] = (
            None if execs is None else max(1, int(execs * share) // UNIT_COST[e]),
            None if config.budget_ms is None else config.budget_ms * share,
        )
    return out


def engine_configs(config: CampaignConfig) -> dict:
    budgets = split_budget(config)
    out = {}
    if "fuzz" in budgets:
        n, ms = budgets["fuzz"]
        out["fuzz"] = config.fuzz or FuzzConfig(rng_seed=config.rng_seed, budget_execs=n, budget_ms=ms)
    if "symex" in budgets:
        n, ms = budgets["symex"]
        paths = config.max_paths or n or ExploreConfig.max_paths
        out["symex"] = config.explore or ExploreConfig(max_paths=paths, time_budget_ms=ms)
    if "bmc" in budgets:
        n, ms = budgets["bmc"]
        out["bmc"] = config.bmc or BmcConfig(unwind=config.unwind, max_queries=n, time_budget_ms=ms)
    return out


def target_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def resolve_target(spec: str) -> Target:
    if spec in BUILTIN_NAMES:
        return get_target(spec)
    if Path(spec).is_file():
        return load_target_file(spec)
    raise TargetError(f"target {spec!r} is neither a bundled name ({', '.join(BUILTIN_NAMES)}) nor a file")


@dataclass
class _Plan:
    target: Target
    seeds: list
    template: object
    mark: tuple
    configs: dict


def _plan(config: CampaignConfig) -> _Plan:
    try:
        target = resolve_target(config.target)
    except (TargetError, ValueError) as exc:
        raise CampaignError(str(exc)) from exc
    if config.seeds is not None:
        try:
            seeds = load_seed_session(config.seeds)
        except (OSError, FormatError) as exc:
            raise CampaignError(f"cannot load seeds from {config.seeds}: {exc}") from exc
        if not seeds:
            raise CampaignError(f"no packets in {config.seeds}")
    else:
        seeds = list(target.seeds) or [b""]
    symbolic = any(e in config.engines for e in ("symex", "bmc"))
    template = None
    tname = config.template or target.template
    if tname is not None:
        try:
            template = get_template(tname)
        except (TemplateError, OSError) as exc:
            raise CampaignError(str(exc)) from exc
    mark = ()
    if symbolic:
        if template is None:
            raise CampaignError("symbolic engines need a template (--template or a '// template:' directive)")
        fields = list(template.field_names)
        mark = tuple(fields) if config.mark is None else tuple(config.mark)
        missing = [m for m in mark if m not in fields]
        if missing:
            raise CampaignError(f"mark field(s) {missing} not in template {template.name!r} {fields}")
    return _Plan(target, seeds, template, mark, engine_configs(config))


# -- witnesses -----------------------------------------------------------------


def write_witness(w: Witness, target: Target, path) -> None:
    p = Path(path)
    if p.exists():
        shutil.rmtree(p)
    names = write_corpus_dir(p, w.packets)
    (p / "trace.jsonl").write_text(trace_to_jsonl(w.trace))
    record = {
        "finding": w.finding.to_json(),
        "engine": w.engine,
        "packets": names,
        "target": target.name,
        "target_sha256": target_hash(target.text),
    }
    (p / "finding.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def read_witness(path) -> tuple:
    """``(Witness, record dict)`` from a witness directory."""
    p = Path(path)
    record = json.loads((p / "finding.json").read_text())
    packets = tuple((p / n).read_bytes() for n in record["packets"])
    f = record["finding"]
    finding = Finding(f["kind"], f["stmt"], f["function"], f["message"], packets,
                      f.get("index"), f.get("length"))
    trace_file = p / "trace.jsonl"
    trace = tuple(trace_from_jsonl(trace_file.read_text())) if trace_file.exists() else ()
    return Witness(finding, packets, trace, record.get("engine", "")), record


@dataclass(frozen=True)
class Verdict:
    confirmed: bool
    reason: str
    key: Optional[tuple] = None

    def __bool__(self):
        return self.confirmed


def validate_witness(target, witness_dir) -> Verdict:
    """Confirm a serialized witness against ``target`` (path, bundled name or Target)."""
    try:
        t = target if isinstance(target, Target) else resolve_target(str(target))
    except (TargetError, ValueError) as exc:
        return Verdict(False, f"target error: {exc}")
    try:
        w, record = read_witness(witness_dir)
    except (OSError, KeyError, ValueError) as exc:
        return Verdict(False, f"unreadable witness: {exc}")
    want = record.get("target_sha256")
    have = target_hash(t.text)
    if want != have:
        return Verdict(False, f"target hash mismatch: witness is for {want}, target is {have}", w.key)
    if not replay_witness(t.program, w):
        return Verdict(False, f"replay did not reproduce {w.key[0]} at stmt {w.key[1]}", w.key)
    return Verdict(True, "confirmed", w.key)


# -- report --------------------------------------------------------------------


@dataclass
class Report:
    data: dict
    witnesses: dict = field(default_factory=dict)  # witness ref -> Witness
    target: Optional[Target] = None

    @property
    def findings(self) -> list:
        return self.data["findings"]

    @property
    def exit_code(self) -> int:
        return 1 if self.findings else 0

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def without_timing(self) -> dict:
        d = json.loads(self.to_json())
        d.pop("timing", None)
        return d

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for old in out.glob("witness_*"):
            if old.is_dir():
                shutil.rmtree(old)
        for ref, w in self.witnesses.items():
            write_witness(w, self.target, out / ref)
        path = out / REPORT_NAME
        path.write_text(self.to_json())
        return path


def _coverage(cov, total: int) -> dict:
    return cov.summary(total)


def run_hybrid(config: CampaignConfig) -> Report:
    plan = _plan(config)
    program = plan.target.program
    nfun = len(program.functions)
    engines = {}
    errors = []
    timing = {}
    found = {}  # (kind, stmt) -> {engine: Witness}
    coverage = EMPTY_COVERAGE
    uncovered = None
    session = None
    t_start = time.monotonic()

    def collect(engine: str, witnesses) -> None:
        for w in witnesses:
            found.setdefault(w.key, {}).setdefault(engine, w)

    if "fuzz" in plan.configs:
        t0 = time.monotonic()
        try:
            fr = fuzz_loop(program, [plan.seeds], plan.configs["fuzz"])
            collect("fuzz", fr.findings)
            coverage = merge_coverage(coverage, fr.coverage)
            uncovered = uncovered_functions(program, fr.coverage)
            engines["fuzz"] = dict(fr.summary(nfun), budget_hit=fr.budget_hit)
        except Exception as exc:  # keep earlier phases' results
            log.exception("fuzz phase failed")
            errors.append({"engine": "fuzz", "error": f"{type(exc).__name__}: {exc}"})
        timing["fuzz_ms"] = (time.monotonic() - t0) * 1000

    if "symex" in plan.configs or "bmc" in plan.configs:
        session = mark_session(plan.seeds, plan.template, list(plan.mark))

    if "symex" in plan.configs:
        t0 = time.monotonic()
        targets = uncovered if uncovered is not None else {f.name for f in program.functions}
        try:
            er = explore(program, session, plan.configs["symex"], frozenset(targets))
            collect("symex", er.findings)
            coverage = merge_coverage(coverage, er.coverage)
            s = er.summary()
            s["coverage"] = _coverage(er.coverage, nfun)
            s["priority_targets"] = sorted(targets)
            engines["symex"] = s
        except Exception as exc:
            log.exception("symex phase failed")
            errors.append({"engine": "symex", "error": f"{type(exc).__name__}: {exc}"})
        timing["symex_ms"] = (time.monotonic() - t0) * 1000

    if "bmc" in plan.configs:
        t0 = time.monotonic()
        try:
            br = bmc_run(program, session, plan.configs["bmc"])
            collect("bmc", br.findings)
            coverage = merge_coverage(coverage, br.coverage)
            s = br.summary()
            s["coverage"] = _coverage(br.coverage, nfun)
            engines["bmc"] = s
        except Exception as exc:
            log.exception("bmc phase failed")
            errors.append({"engine": "bmc", "error": f"{type(exc).__name__}: {exc}"})
        timing["bmc_ms"] = (time.monotonic() - t0) * 1000

    merged = []
    witnesses = {}
    for key in sorted(found):
        by_engine = found[key]
        order = [e for e in ENGINES if e in by_engine]
        first = by_engine[order[0]].finding
        refs = []
        for e in order:
            ref = f"witness_{len(witnesses)}"
            witnesses[ref] = by_engine[e]
            refs.append({"engine": e, "witness": ref,
                         "validated": replay_witness(program, by_engine[e])})
        merged.append({
            "kind": key[0], "stmt": key[1], "function": first.function, "message": first.message,
            "found_by": order, "witnesses": refs,
        })

    incomplete = {}
    if "symex" in engines:
        s = engines["symex"]
        incomplete["symex_halted"] = s["halted"]
        incomplete["symex_bound_exhaustions"] = s["bound_exhaustions"]
        incomplete["symex_solver_unknowns"] = s["solver_unknowns"]
    if "bmc" in engines:
        s = engines["bmc"]
        incomplete["bmc_unwinding_incomplete"] = s["unwinding_incomplete"]
        incomplete["bmc_budget_exhausted"] = s["budget_exhausted"]
        incomplete["bmc_solver_unknowns"] = s["solver_unknowns"]
    if "fuzz" in engines:
        incomplete["fuzz_budget_hit"] = engines["fuzz"]["budget_hit"]

    timing["total_ms"] = (time.monotonic() - t_start) * 1000
    data = {
        "tool": {"name": "fusegrey", "version": __version__},
        "config": config.echo(),
        "resolved": {
            "template": None if plan.template is None else plan.template.name,
            "mark": list(plan.mark),
            "seed_packets": len(plan.seeds),
            "budgets": {e: {"units": n, "ms": ms} for e, (n, ms) in split_budget(config).items()},
        },
        "target": {
            "name": plan.target.name,
            "sha256": target_hash(plan.target.text),
            "functions_total": nfun,
            "statements": len(program.statements),
        },
        "engines": engines,
        "uncovered_after_fuzz": None if uncovered is None else sorted(uncovered),
        "coverage": _coverage(coverage, nfun),
        "findings": merged,
        "incomplete": incomplete,
        "errors": errors,
        "timing": {k: round(v, 3) for k, v in timing.items()},
    }
    report = Report(data, witnesses, plan.target)
    if config.out_dir is not None:
        report.write(config.out_dir)
    return report


def load_report(out_dir) -> dict:
    return json.loads((Path(out_dir) / REPORT_NAME).read_text())


def validate_report(target, out_dir) -> list:
    """Validate every witness referenced by a written report; returns (ref, Verdict) pairs."""
    data = load_report(out_dir)
    out = []
    for f in data["findings"]:
        for r in f["witnesses"]:
            out.append((r["witness"], validate_witness(target, Path(out_dir) / r["witness"])))
    return out


__all__ = [
    "CampaignConfig", "CampaignError", "Report", "Verdict", "run_hybrid", "validate_witness",
    "validate_report", "write_witness", "read_witness", "split_budget", "engine_configs",
    "resolve_target", "target_hash", "ENGINES",
]
