import json
from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from fusegrey.findings import (
    ARITH_OVERFLOW, ASSERT_FAIL, DIV_BY_ZERO, DOUBLE_FREE, EMPTY_COVERAGE, MEMORY_LEAK, OOB_READ,
    OOB_WRITE, STEP_EXHAUSTED, USE_AFTER_FREE, CoverageMap, Witness, trace_from_jsonl, trace_to_jsonl,
)
from fusegrey.runtime import ExecConfig, make_witness, merge_coverage, replay_witness, run_session

from conftest import prog, target

INT_MIN, INT_MAX = -(2**31), 2**31 - 1


def test_one_past_end_write():
    p = prog("fn handle(pkt: bytes) { var b: bytes[4]; b[4] = 1; }")
    f = run_session(p, [b"x"]).finding
    assert (f.kind, f.index, f.length) == (OOB_WRITE, 4, 4)
    assert f.stmt == 1


def test_int_max_plus_one():
    p = prog("fn handle(pkt: bytes) { var x: int = 2147483647; var y: int = x + 1; }")
    res = run_session(p, [b""])
    assert res.finding.kind == ARITH_OVERFLOW
    assert res.outcome[0] == "Violated"


def test_long_user_overflows_ftp():
    t = target("ftp-vuln")
    f = run_session(t.program, [b"USER " + b"A" * 200 + b"\r\n"]).finding
    assert f.kind == OOB_WRITE
    assert f.function == "cmd_user"
    assert (f.kind, f.stmt) in t.expected


def test_normal_ftp_session_completes():
    t = target("ftp-vuln")
    res = run_session(t.program, [b"USER anonymous\r\n", b"PASS me@x\r\n", b"PWD\r\n", b"QUIT\r\n"])
    assert res.finding is None
    assert b"230 User logged in" in res.responses
    assert b"221" in res.responses


def test_globals_persist_across_packets():
    p = prog("""
global n: int = 0;
fn handle(pkt: bytes) {
    n = n + 1;
    if (n == 3) { send("third"); }
}
""")
    assert run_session(p, [b"a", b"b", b"c"]).responses == b"third"
    assert run_session(p, [b"a", b"b"]).responses == b""


def test_oob_read_and_use_after_free():
    p = prog("fn handle(pkt: bytes) { var x: int = pkt[5]; }")
    f = run_session(p, [b"abc"]).finding
    assert (f.kind, f.index, f.length) == (OOB_READ, 5, 3)
    p = prog("""
fn handle(pkt: bytes) {
    var h: heapref = alloc(4);
    free(h);
    h[0] = 1;
}
""")
    assert run_session(p, [b""]).finding.kind == USE_AFTER_FREE
    p = prog("fn handle(pkt: bytes) { var h: heapref = alloc(4); free(h); free(h); }")
    assert run_session(p, [b""]).finding.kind == DOUBLE_FREE


def test_step_and_depth_limits():
    p = prog("fn handle(pkt: bytes) { var i: int = 0; while (1) { i = 0; } }")
    f = run_session(p, [b""], ExecConfig(step_limit=500)).finding
    assert f.kind == STEP_EXHAUSTED
    p = prog("fn f(n: int) { var r: int = f(n + 1); return r; }\nfn handle(pkt: bytes) { var r: int = f(0); }")
    assert run_session(p, [b""], ExecConfig(call_depth_limit=50)).finding.kind == STEP_EXHAUSTED


def test_trace_ends_at_violation_and_round_trips():
    p = prog("fn handle(pkt: bytes) { var b: bytes[2]; var i: int = pkt[0]; b[i] = 7; }")
    w = make_witness(p, [b"\x09"])
    assert w.trace[-1].stmt == w.finding.stmt == 2
    assert w.trace[-1].vars["i"] == 9
    text = trace_to_jsonl(w.trace)
    assert all(set(json.loads(line)) == {"stmt", "fn", "vars"} for line in text.splitlines())
    assert [s.stmt for s in trace_from_jsonl(text)] == [s.stmt for s in w.trace]


def test_determinism():
    t = target("ftp-vuln")
    pk = [b"USER x\r\n", b"PASS abcd\r\n", b"CWD pub\r\n", b"PORT 1,2,3,4,5,6\r\n"]
    cfg = ExecConfig(record_trace=True)
    a, b = run_session(t.program, pk, cfg), run_session(t.program, pk, cfg)
    assert (a.outcome, a.coverage, a.trace) == (b.outcome, b.coverage, b.trace)


# -- replay --------------------------------------------------------------------


def test_replay_accepts_fresh_and_rejects_truncated():
    t = target("vulnserver")
    w = make_witness(t.program, [b"TRUN ." + b"A" * 60 + b"\r\n"], "fuzz")
    assert w is not None and w.key in t.expected
    assert replay_witness(t.program, w)
    assert not replay_witness(t.program, Witness(w.finding, (), w.trace))
    assert not replay_witness(t.program, Witness(w.finding, (b"",), w.trace))


def test_replay_rejects_other_location():
    p = prog("fn handle(pkt: bytes) { var b: bytes[1]; b[pkt[0]] = 1; var c: bytes[1]; c[pkt[1]] = 1; }")
    w = make_witness(p, [b"\x00\x05"])
    moved = Witness(w.finding.__class__(w.finding.kind, 0, "handle", ""), w.packets)
    assert replay_witness(p, w)
    assert not replay_witness(p, moved)


# -- coverage ------------------------------------------------------------------


def test_merge_coverage_laws():
    x = CoverageMap(frozenset({(1, True)}), frozenset({"handle"}))
    y = CoverageMap(frozenset({(2, False)}), frozenset({"f"}))
    assert merge_coverage(x, EMPTY_COVERAGE) == x
    assert merge_coverage(x, y) == merge_coverage(y, x)
    assert merge_coverage(x, x) == x


def test_user_and_quit_runs_cover_both_handlers():
    t = target("ftp-vuln")
    a = run_session(t.program, [b"USER bob\r\n"]).coverage
    b = run_session(t.program, [b"QUIT\r\n"]).coverage
    assert "cmd_quit" not in a.functions and "cmd_user" not in b.functions
    assert {"cmd_user", "cmd_quit"} <= merge_coverage(a, b).functions


def test_edge_functions_are_entered():
    t = target("ftp-vuln")
    res = run_session(t.program, [b"USER bob\r\n", b"PASS secret\r\n", b"TYPE I\r\n"])
    owners = {t.program.function_of(sid) for sid, _ in res.coverage.edges}
    assert owners <= res.coverage.functions


# -- properties ----------------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 8), st.integers(0, 255), st.integers(0, 12), st.booleans())
def test_monitor_flags_exactly_out_of_bounds(n, byte, bias, write):
    access = "b[i] = 1;" if write else "var v: int = b[i];"
    p = prog(f"fn handle(pkt: bytes) {{ var b: bytes[{n}]; var i: int = pkt[0] - {bias}; {access} }}")
    i = byte - bias
    f = run_session(p, [bytes([byte])]).finding
    if 0 <= i < n:
        assert f is None
    else:
        assert f is not None and f.stmt == 2
        assert f.kind == (OOB_WRITE if write else OOB_READ)
        assert (f.index, f.length) == (i, n)


def _oracle(op, a, b):
    if op in "/%" and b == 0:
        return DIV_BY_ZERO
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    else:
        q = int(Fraction(a, b))  # truncates toward zero
        r = q if op == "/" else a - b * q
    return r if INT_MIN <= r <= INT_MAX else ARITH_OVERFLOW


_int32 = st.one_of(st.integers(INT_MIN, INT_MAX), st.integers(-70000, 70000), st.sampled_from([0, 1, -1, INT_MIN, INT_MAX]))


@settings(max_examples=300, deadline=None)
@given(st.sampled_from("+-*/%"), _int32, _int32)
def test_arithmetic_matches_unbounded_math(op, a, b):
    want = _oracle(op, a, b)
    check = f"assert(z == {want});" if isinstance(want, int) and want != INT_MIN else ""
    p = prog(f"""
global a: int = {a};
global b: int = {b};
fn handle(pkt: bytes) {{
    var z: int = a {op} b;
    {check}
}}
""")
    f = run_session(p, [b""]).finding
    if isinstance(want, str):
        assert f is not None and f.kind == want
    else:
        assert f is None, f


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.booleans())
def test_leak_law(allocs, frees, leak_check):
    frees = min(frees, allocs)
    body = [f"var h{k}: heapref = alloc(8);" for k in range(allocs)]
    body += [f"free(h{k});" for k in range(frees)]
    p = prog("fn handle(pkt: bytes) { " + " ".join(body) + " }")
    f = run_session(p, [b""], ExecConfig(leak_check=leak_check)).finding
    if allocs != frees and leak_check:
        assert f is not None and f.kind == MEMORY_LEAK
        assert f.stmt == frees  # first allocation still live
    else:
        assert f is None


def test_assert_failure():
    p = prog("fn handle(pkt: bytes) { assert(len(pkt) < 3); }")
    assert run_session(p, [b"ab"]).finding is None
    assert run_session(p, [b"abc"]).finding.kind == ASSERT_FAIL
