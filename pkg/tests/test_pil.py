from pathlib import Path

import pytest
from hypothesis import given, settings

from fusegrey.pil import ParseError, build_call_graph, load_program, parse_program, pretty, validate
from fusegrey.targets import NAMES, builtin_text

from randprog import programs

NEGATIVE = sorted((Path(__file__).parent / "data" / "negative").glob("*.pil"))


def test_minimal_program():
    p = parse_program("fn handle(pkt: bytes) { return; }")
    assert len(p.functions) == 1
    assert len(p.statements) == 1
    assert validate(p) == []


def test_buffer_indexing_is_well_formed():
    p = parse_program("fn handle(pkt: bytes) { var b: bytes[4]; b[0] = pkt[0]; }")
    assert validate(p) == []
    assert len(p.statements) == 2


def test_ftp_target_scale():
    p = load_program(builtin_text("ftp-vuln"))
    assert len(p.functions) >= 8
    assert 300 <= len(p.statements) <= 400


def test_missing_handler():
    errs = validate(parse_program("fn main(pkt: bytes) { return; }"))
    assert any("no entry handler" in e.message for e in errs)


def test_type_mismatch():
    errs = validate(parse_program('fn handle(pkt: bytes) { var x: int = "AB"; }'))
    assert any("type mismatch" in e.message for e in errs)


@pytest.mark.parametrize("name", NAMES)
def test_bundled_targets_validate(name):
    assert validate(parse_program(builtin_text(name))) == []


@pytest.mark.parametrize("path", NEGATIVE, ids=lambda p: p.stem)
def test_negative_corpus(path):
    text = path.read_text()
    try:
        p = parse_program(text)
    except ParseError as exc:
        assert exc.line >= 1
        return
    assert validate(p), f"{path.name} should be rejected"


def test_parse_error_has_position():
    with pytest.raises(ParseError) as info:
        parse_program("fn handle(pkt: bytes) {\n    var x: int = 1\n}\n")
    assert info.value.line == 3
    assert str(info.value).startswith("3:")


def test_stmt_ids_dense_and_stable():
    text = builtin_text("vulnserver")
    a, b = parse_program(text), parse_program(text)
    assert sorted(a.statements) == list(range(len(a.statements)))
    assert {k: v[0] for k, v in a.statements.items()} == {k: v[0] for k, v in b.statements.items()}


@pytest.mark.parametrize("name", NAMES)
def test_round_trip_bundled(name):
    p = parse_program(builtin_text(name))
    assert parse_program(pretty(p)) == p


@settings(max_examples=60, deadline=None)
@given(programs())
def test_round_trip_random(text):
    p = parse_program(text)
    assert validate(p) == []
    assert parse_program(pretty(p)) == p


def test_crlf_and_comments():
    text = "// header\r\nfn handle(pkt: bytes) {\r\n    return; // done\r\n}\r\n"
    assert len(parse_program(text).statements) == 1


def test_call_graph_chain_and_recursion():
    p = load_program("""
fn g() { return 0; }
fn f() { var r: int = g(); return r; }
fn rec(n: int) { if (n > 0) { var k: int = rec(n - 1); } return 0; }
fn handle(pkt: bytes) { var x: int = f(); var y: int = rec(2); }
""")
    cg = build_call_graph(p)
    assert cg.distance("handle", "g") == 2
    assert ("rec", "rec") in cg.edges
    assert cg.distance("rec", "rec") == 0
    assert cg.distance("g", "handle") == float("inf")


def test_ftp_dispatch_out_degree():
    cg = build_call_graph(load_program(builtin_text("ftp-vuln")))
    assert cg.out_degree("dispatch") >= 4
    assert {"cmd_user", "cmd_pass", "cmd_quit", "cmd_unknown"} <= set(cg.callees("dispatch"))
