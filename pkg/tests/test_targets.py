import random

import pytest

from fusegrey.bmc import BmcConfig, bmc_run
from fusegrey.findings import ARITH_OVERFLOW, DIV_BY_ZERO, MEMORY_LEAK, OOB_WRITE
from fusegrey.runtime import run_session
from fusegrey.targets import NAMES, TargetError, bundled_targets, get_target, load_target_file, parse_target

from conftest import session_for, target


def _code_lines(text):
    return [l for l in text.splitlines() if l.strip() and not l.strip().startswith("//")]


def test_bundle_contents():
    got = {name: {k for k, _ in exp} for name, _, exp in bundled_targets()}
    assert got == {
        "ftp-vuln": {OOB_WRITE},
        "ftp-safe": set(),
        "vulnserver": {OOB_WRITE},
        "arith-demo": {ARITH_OVERFLOW, DIV_BY_ZERO},
        "leak-demo": {MEMORY_LEAK},
    }


def test_sizes_mirror_the_original_servers():
    assert 350 <= len(_code_lines(get_target("ftp-vuln").text)) <= 400
    assert 350 <= len(_code_lines(get_target("ftp-safe").text)) <= 400
    assert 200 <= len(get_target("vulnserver").text.splitlines()) <= 300


def test_ftp_overflow_is_in_user_copy_loop():
    t = target("ftp-vuln")
    (key,) = t.expected
    assert t.program.function_of(key[1]) == "cmd_user"
    f = run_session(t.program, [b"USER " + b"x" * 60 + b"\r\n"]).finding
    assert f.key == key


def test_safe_variant_survives_long_and_random_sessions():
    t = target("ftp-safe")
    rng = random.Random(0)
    verbs = [b"USER", b"PASS", b"CWD ", b"PORT", b"REST", b"TYPE", b"HELP", b"XYZW", b"QUIT", b"PWD "]
    for _ in range(300):
        session = []
        for _ in range(rng.randint(1, 5)):
            arg = bytes(rng.choice(b"Aa09,. \\/%") for _ in range(rng.choice([0, 3, 40, 300])))
            session.append(rng.choice(verbs) + b" " + arg + b"\r\n")
        assert run_session(t.program, session).finding is None, session


@pytest.mark.parametrize("name", ["ftp-vuln", "ftp-safe", "arith-demo", "leak-demo"])
def test_bmc_finds_exactly_the_expected_set(name):
    t = target(name)
    marks = ["arg"] if name.startswith("ftp") else None
    r = bmc_run(t.program, session_for(name, marks), BmcConfig(unwind=128))
    assert {w.key for w in r.findings} == set(t.expected)
    assert r.unknowns == 0


def test_seeds_fit_their_templates():
    from fusegrey.packet import apply_template, get_template
    for name in NAMES:
        t = target(name)
        tpl = get_template(t.template)
        assert t.seeds
        for s in t.seeds:
            apply_template(tpl, s)


def test_directive_errors(tmp_path):
    with pytest.raises(TargetError):
        parse_target("x", "// expect: OOB_WRITE\nfn handle(pkt: bytes) { return; }\n")
    with pytest.raises(TargetError):
        parse_target("x", "// seed: \"unterminated\nfn handle(pkt: bytes) { return; }\n")
    with pytest.raises(TargetError):
        get_target("nope")
    with pytest.raises(TargetError):
        load_target_file(tmp_path / "missing.pil")
