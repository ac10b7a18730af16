import random

import pytest

import fusegrey.bmc as bmc
from fusegrey.bmc import (
    INCONCLUSIVE, SAFE_UP_TO_BOUNDS, VIOLATION_FOUND, BmcConfig, MergedState, bmc_run, extract_witness,
    merge, merge_all, merge_value,
)
from fusegrey.findings import ASSERT_FAIL, OOB_WRITE
from fusegrey.packet import SymbolicPacket
from fusegrey.runtime import replay_witness, run_session
from fusegrey.solver import TRUE, Byte, Const, Lt, eval_term, simplify
from fusegrey.solver import terms as T
from fusegrey.symex import ExploreConfig, explore

from conftest import prog, session_for, target
from randterms import rand_bool, rand_int


def _marked(base: bytes, idx):
    return SymbolicPacket(base, tuple((i, f"sym_{k}") for k, i in enumerate(idx)))


def test_if_else_assert_is_safe():
    p = prog("""
fn handle(pkt: bytes) {
    var x: int = 0;
    if (pkt[0] > 9) { x = 1; } else { x = 2; }
    assert(x > 0);
}
""")
    r = bmc_run(p, [_marked(b"\x00", [0])])
    assert r.findings == []
    assert r.verdict == SAFE_UP_TO_BOUNDS
    assert r.unknowns == 0


_COPY = """
fn handle(pkt: bytes) {
    var b: bytes[4];
    var n: int = pkt[0];
    var i: int = 0;
    while (i < n) { b[i] = pkt[1]; i = i + 1; }
}
"""


def test_symbolic_copy_loop_overflows():
    p = prog(_COPY)
    r = bmc_run(p, [_marked(b"\x00\x41", [0])], BmcConfig(unwind=8))
    assert [w.key for w in r.findings] == [(OOB_WRITE, 4)]
    n = r.findings[0].packets[0][0]
    violating = {k for k in range(256) if run_session(p, [bytes([k, 0x41])]).finding}
    assert min(violating) == 5 and n in violating
    assert r.verdict == VIOLATION_FOUND


def test_unwinding_honesty():
    p = prog("fn handle(pkt: bytes) { var i: int = 0; while (i < pkt[0]) { i = i + 1; } }")
    loop_sid = 1
    r = bmc_run(p, [_marked(b"\x00", [0])], BmcConfig(unwind=3))
    assert r.unwinding_incomplete == {loop_sid}
    r = bmc_run(p, [_marked(b"\x00", [0])], BmcConfig(unwind=3, check_unwinding=False))
    assert r.unwinding_incomplete == set()
    p = prog("fn handle(pkt: bytes) { var i: int = 0; while (i < pkt[0] % 3) { i = i + 1; } }")
    assert bmc_run(p, [_marked(b"\x00", [0])], BmcConfig(unwind=3)).unwinding_incomplete == set()


def test_assert_false_witness():
    p = prog("fn handle(pkt: bytes) { assert(1 == 0); }")
    r = bmc_run(p, [SymbolicPacket(b"")])
    (w,) = r.findings
    assert w.key == (ASSERT_FAIL, 0)
    assert w.packets == (b"",)
    assert len(w.trace) == 1


def test_corrupted_model_is_discarded(monkeypatch):
    p = prog(_COPY)
    monkeypatch.setattr(bmc, "concretize_session", lambda session, model: [sp.base for sp in session])
    r = bmc_run(p, [_marked(b"\x00\x41", [0])], BmcConfig(unwind=8))
    assert r.findings == []
    assert r.discarded == 1


def test_extract_witness_rejects_wrong_model():
    p = prog(_COPY)
    s = [_marked(b"\x00\x41", [0])]
    assert extract_witness(p, s, {"sym_0": 2}, (OOB_WRITE, 4)) is None
    w = extract_witness(p, s, {"sym_0": 9}, (OOB_WRITE, 4))
    assert w.engine == "bmc" and w.trace[-1].stmt == 4


def test_budget_exhaustion_is_inconclusive():
    t = target("ftp-vuln")
    r = bmc_run(t.program, session_for("ftp-vuln", ["arg"]), BmcConfig(max_queries=3))
    assert r.budget_exhausted
    assert r.verdict in (INCONCLUSIVE, VIOLATION_FOUND)
    assert r.queries <= 3


# -- merge ---------------------------------------------------------------------


c = Lt(Byte("c"), Const(100))


def _st(**env):
    return MergedState(dict(env), {}, {}, TRUE)


def test_merge_identical_sides():
    a = _st(x=Const(1), y=Byte("q"))
    m = merge(a, _st(x=Const(1), y=Byte("q")), c)
    assert m.env == a.env


def test_merge_differing_sides():
    m = merge(_st(x=Const(1)), _st(x=Const(2)), c)
    got = m.env["x"]
    for v in (0, 99, 100, 255):
        assert eval_term(got, {"c": v}) == (1 if v < 100 else 2)
    assert simplify(got) == simplify(T.Ite(c, Const(1), Const(2)))


def test_merge_four_way_chain_depth():
    base = TRUE
    states = []
    for k, verb in enumerate((10, 20, 30)):
        g = T.and_(base, T.eq(Byte("v"), Const(verb)))
        states.append(MergedState({"r": Const(k)}, {}, {}, g))
    states.append(MergedState({"r": Const(9)}, {}, {}, T.and_(base, T.not_(T.or_(*(
        T.eq(Byte("v"), Const(v)) for v in (10, 20, 30)))))))
    m = merge_all(states, base)

    def depth(t):
        return 0 if t.op != "ite" else 1 + max(depth(a) for a in t.args[1:])

    assert depth(m.env["r"]) <= 4
    for v, want in ((10, 0), (20, 1), (30, 2), (31, 9)):
        assert eval_term(m.env["r"], {"v": v}) == want


@pytest.mark.parametrize("seed", range(4))
def test_merge_soundness(seed):
    rng = random.Random(seed)
    names = ["x", "y"]
    for _ in range(60):
        cond = rand_bool(rng, names, 2)
        a, b = rand_int(rng, names, 2), rand_int(rng, names, 2)
        m = merge_value(cond, a, b)
        for _ in range(20):
            env = {n: rng.randrange(256) for n in names}
            cv = eval_term(cond, env)
            assert eval_term(m, env) == eval_term(a if cv else b, env)


# -- whole targets -------------------------------------------------------------


def test_ftp_user_overflow():
    t = target("ftp-vuln")
    r = bmc_run(t.program, session_for("ftp-vuln", ["arg"]))
    keys = {w.key for w in r.findings}
    assert keys == set(t.expected)
    for w in r.findings:
        assert w.finding.function == "cmd_user"
        assert replay_witness(t.program, w)
        assert w.trace[-1].stmt == w.finding.stmt


@pytest.mark.parametrize("name", ["arith-demo", "leak-demo"])
def test_agrees_with_symex(name):
    t = target(name)
    s = session_for(name)
    b = {w.key for w in bmc_run(t.program, s).findings}
    x = {w.key for w in explore(t.program, s, ExploreConfig()).findings}
    assert b == x == set(t.expected)
