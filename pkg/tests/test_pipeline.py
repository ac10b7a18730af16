import json
import shutil
from pathlib import Path

import jsonschema
import pytest

import fusegrey.pipeline as pipeline
from fusegrey.fuzzer import FuzzConfig, fuzz_loop
from fusegrey.pipeline import (
    CampaignConfig, CampaignError, load_report, run_hybrid, split_budget, validate_report, validate_witness,
)
from fusegrey.targets import builtin_text

from conftest import target

SCHEMA = json.loads((Path(__file__).parents[1] / "docs" / "report-schema.json").read_text())


def _units(**kw):
    return {e: n for e, (n, _) in split_budget(CampaignConfig("arith-demo", **kw)).items()}


def test_budget_split():
    assert _units() == {"fuzz": 10_000, "symex": 500, "bmc": 5000}
    assert _units(budget_execs=4000, engines=("fuzz",)) == {"fuzz": 4000}
    assert _units(budget_execs=4000, engines=("symex", "bmc")) == {"symex": 200, "bmc": 2000}
    ms = split_budget(CampaignConfig("arith-demo", budget_ms=1000))
    assert {e: v[1] for e, v in ms.items()} == {"fuzz": 500, "symex": 250, "bmc": 250}
    assert all(v[0] is None for v in ms.values())


@pytest.mark.parametrize("kw", [
    {"engines": ()},
    {"engines": ("afl",)},
    {"budget_execs": 0},
    {"unwind": 0},
])
def test_bad_config(kw):
    with pytest.raises(CampaignError):
        CampaignConfig("arith-demo", **kw)


def test_errors_before_any_phase(tmp_path, monkeypatch):
    calls = []
    monkeypatch.setattr(pipeline, "fuzz_loop", lambda *a: calls.append(a))
    with pytest.raises(CampaignError):
        run_hybrid(CampaignConfig("ftp-vuln", mark=("id",)))
    with pytest.raises(CampaignError):
        run_hybrid(CampaignConfig("no-such-target"))
    with pytest.raises(CampaignError):
        run_hybrid(CampaignConfig("ftp-vuln", seeds=str(tmp_path / "missing")))
    f = tmp_path / "t.pil"
    f.write_text("fn handle(pkt: bytes) { return; }\n")
    with pytest.raises(CampaignError):
        run_hybrid(CampaignConfig(str(f), engines=("bmc",)))
    assert calls == []


def test_fuzz_only_is_fuzz_loop_in_schema():
    t = target("vulnserver")
    rep = run_hybrid(CampaignConfig("vulnserver", engines=("fuzz",), budget_execs=3000, rng_seed=1))
    direct = fuzz_loop(t.program, [list(t.seeds)], FuzzConfig(rng_seed=1, budget_execs=3000))
    jsonschema.validate(rep.data, SCHEMA)
    assert rep.data["engines"]["fuzz"]["executions"] == direct.executions
    assert rep.data["engines"]["fuzz"]["findings"] == [w.finding.to_json() for w in direct.findings]
    assert rep.data["coverage"] == direct.coverage.summary(len(t.program.functions))
    assert sorted((f["kind"], f["stmt"]) for f in rep.findings) == sorted(w.key for w in direct.findings)
    assert set(rep.data["engines"]) == {"fuzz"}


def test_vulnerable_ftp_defaults(tmp_path):
    rep = run_hybrid(CampaignConfig("ftp-vuln", out_dir=str(tmp_path)))
    jsonschema.validate(rep.data, SCHEMA)
    keys = {(f["kind"], f["stmt"]) for f in rep.findings}
    assert keys == set(target("ftp-vuln").expected)
    (f,) = rep.findings
    assert "bmc" in f["found_by"]
    assert all(r["validated"] for r in f["witnesses"])
    assert all(v for _, v in validate_report("ftp-vuln", tmp_path))
    assert rep.exit_code == 1


def test_safe_ftp_all_engines(tmp_path):
    rep = run_hybrid(CampaignConfig("ftp-safe", budget_execs=6000, out_dir=str(tmp_path)))
    jsonschema.validate(rep.data, SCHEMA)
    assert rep.findings == []
    assert rep.exit_code == 0
    assert rep.data["coverage"]["functions_total"] == len(target("ftp-safe").program.functions)
    assert rep.data["engines"]["bmc"]["verdict"] in ("safe up to bounds", "inconclusive")
    assert not list(tmp_path.glob("witness_*"))


@pytest.fixture(scope="module")
def arith_campaign(tmp_path_factory):
    out = tmp_path_factory.mktemp("arith")
    rep = run_hybrid(CampaignConfig("arith-demo", budget_execs=3000, out_dir=str(out)))
    return rep, out


def test_report_integrity(arith_campaign):
    rep, out = arith_campaign
    jsonschema.validate(load_report(out), SCHEMA)
    assert load_report(out) == rep.data
    for f in rep.findings:
        assert f["found_by"] == [r["engine"] for r in f["witnesses"]]
        for r in f["witnesses"]:
            d = out / r["witness"]
            assert (d / "finding.json").is_file() and (d / "trace.jsonl").is_file()
            assert list(d.glob("pkt_*.bin"))
            assert validate_witness("arith-demo", d)
    keys = [(f["kind"], f["stmt"]) for f in rep.findings]
    assert keys == sorted(set(keys))


def test_cross_engine_witnesses(arith_campaign):
    rep, out = arith_campaign
    engines = {r["engine"] for f in rep.findings for r in f["witnesses"]}
    assert engines == {"fuzz", "symex", "bmc"}
    t = target("arith-demo")
    for f in rep.findings:
        for r in f["witnesses"]:
            v = validate_witness(t, out / r["witness"])
            assert v.confirmed and v.key == (f["kind"], f["stmt"])


def test_witness_against_edited_target(arith_campaign, tmp_path):
    rep, out = arith_campaign
    edited = tmp_path / "arith.pil"
    edited.write_text(builtin_text("arith-demo") + "\n// edited\n")
    v = validate_witness(str(edited), out / "witness_0")
    assert not v
    assert "hash mismatch" in v.reason


def test_tampered_packets_rejected(arith_campaign, tmp_path):
    _, out = arith_campaign
    w = tmp_path / "w"
    shutil.copytree(out / "witness_0", w)
    for p in w.glob("pkt_*.bin"):
        p.write_bytes(b"")
    v = validate_witness("arith-demo", w)
    assert not v and "replay" in v.reason
    assert not validate_witness("arith-demo", tmp_path / "nothing")


def test_phase_failure_keeps_earlier_results(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(pipeline, "bmc_run", boom)
    rep = run_hybrid(CampaignConfig("arith-demo", budget_execs=2000))
    jsonschema.validate(rep.data, SCHEMA)
    assert rep.data["errors"] == [{"engine": "bmc", "error": "RuntimeError: solver exploded"}]
    assert set(rep.data["engines"]) == {"fuzz", "symex"}
    assert rep.findings


def test_rerun_is_identical_modulo_timing(tmp_path):
    cfg = dict(budget_execs=3000, rng_seed=5)
    a = run_hybrid(CampaignConfig("leak-demo", out_dir=str(tmp_path / "a"), **cfg))
    b = run_hybrid(CampaignConfig("leak-demo", out_dir=str(tmp_path / "b"), **cfg))
    assert a.without_timing() == b.without_timing()
    for ref in a.witnesses:
        for f in (tmp_path / "a" / ref).iterdir():
            assert f.read_bytes() == (tmp_path / "b" / ref / f.name).read_bytes()


def test_rewrite_clears_stale_witnesses(tmp_path):
    run_hybrid(CampaignConfig("arith-demo", budget_execs=2000, out_dir=str(tmp_path)))
    assert (tmp_path / "witness_5").is_dir()
    run_hybrid(CampaignConfig("arith-demo", budget_execs=2000, engines=("bmc",), out_dir=str(tmp_path)))
    assert sorted(p.name for p in tmp_path.glob("witness_*")) == ["witness_0", "witness_1"]


def test_pcap_seeds(tmp_path):
    from pcaputil import pcap_bytes, tcp_frame
    cap = tmp_path / "s.pcap"
    cap.write_bytes(pcap_bytes([tcp_frame(b"", flags=0x02),
                                tcp_frame(b"USER anonymous\r\n")], ">"))
    rep = run_hybrid(CampaignConfig("ftp-vuln", seeds=str(cap), engines=("bmc",), mark=("arg",)))
    assert rep.data["resolved"]["seed_packets"] == 1
    assert rep.data["config"]["seeds"] == str(cap)
    assert {(f["kind"], f["stmt"]) for f in rep.findings} == set(target("ftp-vuln").expected)
