"""``fusegrey`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .pipeline import (
    ENGINES, REPORT_NAME, CampaignConfig, CampaignError, run_hybrid, validate_witness,
)
from .targets import NAMES, TargetError, get_target

EXIT_CLEAN, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2


def _csv(text: str) -> tuple:
    items = tuple(s.strip() for s in text.split(",") if s.strip())
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _target_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--target", metavar="PATH", help="PIL source file")
    g.add_argument("--builtin", metavar="NAME", choices=NAMES, help=f"bundled target: {', '.join(NAMES)}")


def _campaign_args(p: argparse.ArgumentParser, with_engines: bool) -> None:
    _target_args(p)
    s = p.add_mutually_exclusive_group()
    s.add_argument("--pcap", metavar="FILE", help="seed session from a pcap capture")
    s.add_argument("--seeds", metavar="DIR", help="seed session from a directory of packet files")
    p.add_argument("--template", metavar="NAME", help="packet template name or template file")
    p.add_argument("--mark", type=_csv, metavar="FIELD[,FIELD...]",
                   help="template fields made symbolic (default: all)")
    p.add_argument("--budget-execs", type=_positive, metavar="N",
                   help="total work budget in execution equivalents (default 20000)")
    p.add_argument("--budget-ms", type=_positive, metavar="N", help="total wall-clock budget")
    p.add_argument("--unwind", type=_positive, default=128, metavar="K", help="bmc loop bound (default 128)")
    p.add_argument("--max-paths", type=_positive, metavar="N", help="symex path limit")
    p.add_argument("--rng-seed", type=int, default=0, metavar="N")
    p.add_argument("--out", default="out", metavar="DIR", help="output directory (default ./out)")
    if with_engines:
        p.add_argument("--engines", type=_csv, default=ENGINES, metavar="LIST",
                       help="subset of fuzz,symex,bmc (default: all)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fusegrey", description="Hybrid fuzzing and bounded verification of PIL protocol servers.")
    ap.add_argument("--version", action="version", version=f"fusegrey {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _campaign_args(sub.add_parser("hybrid", help="fuzz, then symex and bmc on what fuzzing missed"), True)
    for name, text in (("fuzz", "coverage-guided fuzzing only"),
                       ("symex", "symbolic execution only"),
                       ("bmc", "bounded model checking only")):
        _campaign_args(sub.add_parser(name, help=text), False)

    rp = sub.add_parser("replay", help="validate witness directories or a whole campaign output")
    _target_args(rp)
    rp.add_argument("paths", nargs="+", metavar="DIR", help="witness_<n> directory or campaign --out directory")

    tp = sub.add_parser("targets", help="list bundled targets")
    tp.add_argument("--show", metavar="NAME", choices=NAMES, help="print a target's PIL source")
    return ap


def _print_report(report, out: Path) -> None:
    d = report.data
    print(f"target {d['target']['name']} ({d['target']['functions_total']} functions)")
    for e, s in d["engines"].items():
        cov = s["coverage"]
        extra = s.get("verdict") or s.get("halted") or f"{s.get('executions', 0)} execs"
        print(f"  {e:<6} {len(cov['functions_covered']):>3}/{cov['functions_total']} functions, "
              f"{cov['edges']} edges, {len(s['findings'])} finding(s) [{extra}]")
    for err in d["errors"]:
        print(f"  {err['engine']} failed: {err['error']}")
    for f in d["findings"]:
        refs = ", ".join(r["witness"] for r in f["witnesses"])
        print(f"{f['kind']} at stmt {f['stmt']} in {f['function']}: {f['message']} "
              f"(found by {', '.join(f['found_by'])}; {refs})")
    if not d["findings"]:
        print("no findings")
    print(f"report: {out / REPORT_NAME}")


def _campaign(args) -> int:
    engines = tuple(args.engines) if args.command == "hybrid" else (args.command,)
    seeds = args.pcap or args.seeds
    try:
        config = CampaignConfig(
            target=args.builtin or args.target, seeds=seeds, template=args.template,
            mark=args.mark, budget_execs=args.budget_execs, budget_ms=args.budget_ms,
            unwind=args.unwind, max_paths=args.max_paths, engines=engines,
            rng_seed=args.rng_seed, out_dir=args.out,
        )
        report = run_hybrid(config)
    except CampaignError as exc:
        print(f"fusegrey: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _print_report(report, Path(args.out))
    return report.exit_code


def _replay(args) -> int:
    target = args.builtin or args.target
    try:
        if args.builtin:
            get_target(args.builtin)
        elif not Path(args.target).is_file():
            raise TargetError(f"no such target file {args.target}")
    except TargetError as exc:
        print(f"fusegrey: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dirs = []
    for p in map(Path, args.paths):
        if (p / REPORT_NAME).is_file():
            data = json.loads((p / REPORT_NAME).read_text())
            dirs.extend(p / r["witness"] for f in data["findings"] for r in f["witnesses"])
        elif (p / "finding.json").is_file():
            dirs.append(p)
        else:
            print(f"fusegrey: {p} is neither a witness nor a campaign directory", file=sys.stderr)
            return EXIT_USAGE
    rejected = 0
    for d in dirs:
        v = validate_witness(target, d)
        label = "confirmed" if v.confirmed else "REJECTED"
        key = f" {v.key[0]}@{v.key[1]}" if v.key else ""
        print(f"{d}: {label}{key}" + ("" if v.confirmed else f" ({v.reason})"))
        rejected += not v.confirmed
    return EXIT_FINDINGS if rejected else EXIT_CLEAN


def _targets(args) -> int:
    if args.show:
        sys.stdout.write(get_target(args.show).text)
        return EXIT_CLEAN
    for name in NAMES:
        t = get_target(name)
        exp = ", ".join(f"{k}@{s}" for k, s in sorted(t.expected)) or "none"
        print(f"{name:<11} {len(t.program.functions):>3} functions  template={t.template}  expected: {exp}")
    return EXIT_CLEAN


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "replay":
        return _replay(args)
    if args.command == "targets":
        return _targets(args)
    return _campaign(args)


if __name__ == "__main__":
    sys.exit(main())
