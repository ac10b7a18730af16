import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusegrey.packet import (
    FTP_TEMPLATE, Fixed, FormatError, PacketTemplate, SymbolicPacket, TemplateError, apply_template,
    concretize, concretize_session, get_template, load_seed_session, mark_session, mark_symbolic,
    parse_template, read_corpus_dir, read_pcap, write_corpus_dir,
)
from fusegrey.solver import Byte, Const, Eq, Sat, solve

from pcaputil import dpkt_payloads, pcap_bytes, tcp_frame


@pytest.mark.parametrize("endian", ["<", ">"])
def test_single_packet_capture(endian):
    data = pcap_bytes([tcp_frame(b"USER ftp\r\n")], endian)
    assert read_pcap(data) == [b"USER ftp\r\n"]
    assert dpkt_payloads(data) == [b"USER ftp\r\n"]


def test_syn_only_capture_is_empty():
    assert read_pcap(pcap_bytes([tcp_frame(b"", flags=0x02)])) == []


def test_bad_captures():
    with pytest.raises(FormatError):
        read_pcap(b"\x00" * 10)
    with pytest.raises(FormatError):
        read_pcap(b"\x0a\x0d\x0d\x0a" + b"\x00" * 40)  # pcapng
    with pytest.raises(FormatError):
        read_pcap(pcap_bytes([tcp_frame(b"abc")])[:-2])


_payload = st.binary(min_size=0, max_size=300)


@settings(max_examples=60, deadline=None)
@given(st.lists(_payload, max_size=6))
def test_pcap_matches_dpkt_in_both_byte_orders(payloads):
    frames = [tcp_frame(p, seq=k) for k, p in enumerate(payloads)]
    le, be = pcap_bytes(frames, "<"), pcap_bytes(frames, ">")
    assert le != be or not frames
    want = dpkt_payloads(le)
    assert want == [p for p in payloads if p]
    assert read_pcap(le) == want
    assert read_pcap(be) == want


def test_seed_directory_order(tmp_path):
    (tmp_path / "b.bin").write_bytes(b"PASS x\r\n")
    (tmp_path / "a.bin").write_bytes(b"USER x\r\n")
    assert read_corpus_dir(tmp_path) == [b"USER x\r\n", b"PASS x\r\n"]
    names = write_corpus_dir(tmp_path / "out", [b"1", b"2"])
    assert names == ["pkt_000.bin", "pkt_001.bin"]
    assert load_seed_session(tmp_path / "out") == [b"1", b"2"]
    f = tmp_path / "cap.pcap"
    f.write_bytes(pcap_bytes([tcp_frame(b"QUIT\r\n")]))
    assert load_seed_session(f) == [b"QUIT\r\n"]


# -- templates -----------------------------------------------------------------


def test_ftp_template_ranges():
    assert apply_template(FTP_TEMPLATE, b"USER anonymous\r\n") == {"cmd": (0, 4), "arg": (5, 14)}


def test_short_packet_rejected():
    with pytest.raises(TemplateError):
        apply_template(FTP_TEMPLATE, b"HI")


def test_fixed_field_template():
    t = PacketTemplate("id", (Fixed("id", 0, 2),))
    assert apply_template(t, b"\xab\xcd\x01") == {"id": (0, 2)}


def test_overlapping_fixed_rejected():
    with pytest.raises(TemplateError):
        PacketTemplate("x", (Fixed("a", 0, 3), Fixed("b", 2, 2)))


def test_template_file_format(tmp_path):
    text = 'template ftp2\ndescription "FTP line"\nfield cmd fixed 0 4\nfield arg delimited "\\r\\n" skip " " max 4096\n'
    t = parse_template(text)
    assert t.fields == FTP_TEMPLATE.fields
    p = tmp_path / "t.tpl"
    p.write_text(text)
    assert get_template(str(p)).name == "ftp2"
    with pytest.raises(TemplateError):
        parse_template("template x\nfield a sized 3\n")
    with pytest.raises(TemplateError):
        get_template("nope")


# -- marking -------------------------------------------------------------------


def test_mark_cmd():
    sp = mark_symbolic(b"USER anonymous\r\n", FTP_TEMPLATE, {"cmd"})
    assert sorted(sp.mark_map) == [0, 1, 2, 3]
    assert sp.variables == ["sym_0", "sym_1", "sym_2", "sym_3"]


def test_mark_nothing():
    assert mark_symbolic(b"USER anonymous\r\n", FTP_TEMPLATE, set()).marks == ()


def test_mark_cmd_and_arg():
    sp = mark_symbolic(b"PASS x\r\n", FTP_TEMPLATE, {"cmd", "arg"})
    assert sorted(sp.mark_map) == [0, 1, 2, 3, 5]


def test_unknown_field():
    with pytest.raises(TemplateError):
        mark_symbolic(b"USER x\r\n", FTP_TEMPLATE, {"id"})


def test_session_numbering_is_dense():
    s = mark_session([b"USER a\r\n", b"??", b"PASS bc\r\n"], FTP_TEMPLATE, ["arg"])
    assert [sp.variables for sp in s] == [["sym_0"], [], ["sym_1", "sym_2"]]
    assert s[1].base == b"??"


def test_concretize_examples():
    base = b"USER anonymous\r\n"
    assert concretize(SymbolicPacket(base), {}) == base
    sp = SymbolicPacket(base, ((0, "sym_0"),))
    assert concretize(sp, {"sym_0": 0x51}) == b"QSER anonymous\r\n"
    with pytest.raises(KeyError):
        concretize(sp, {})


def test_quit_from_solver_model():
    sp = mark_symbolic(b"USER x\r\n", FTP_TEMPLATE, {"cmd"})
    res = solve([Eq(Byte(v), Const(c)) for v, c in zip(sp.variables, b"QUIT")])
    assert isinstance(res, Sat)
    assert concretize(sp, res.model) == b"QUIT x\r\n"


def test_session_concretize_keeps_unassigned():
    s = mark_session([b"USER a\r\n", b"PASS b\r\n"], FTP_TEMPLATE, ["arg"])
    assert concretize_session(s, {"sym_1": ord("z")}) == [b"USER a\r\n", b"PASS z\r\n"]


_line = st.tuples(
    st.binary(min_size=4, max_size=4).filter(lambda b: b"\r\n" not in b and not b.endswith(b"\r")),
    st.binary(max_size=40).filter(lambda b: b"\r" not in b and b"\n" not in b),
).map(lambda t: t[0] + b" " + t[1] + b"\r\n")


@settings(max_examples=100, deadline=None)
@given(_line, st.sets(st.sampled_from(["cmd", "arg"])))
def test_identity_round_trip(pkt, fields):
    sp = mark_symbolic(pkt, FTP_TEMPLATE, fields)
    assert len(sp.marks) == sum(b - a for f, (a, b) in apply_template(FTP_TEMPLATE, pkt).items() if f in fields)
    assert concretize(sp, sp.identity_model()) == pkt


@settings(max_examples=100, deadline=None)
@given(_line, st.integers(0, 255))
def test_only_marked_bytes_change(pkt, value):
    sp = mark_symbolic(pkt, FTP_TEMPLATE, {"cmd"})
    out = concretize(sp, {v: value for v in sp.variables})
    assert len(out) == len(pkt)
    assert out[:4] == bytes([value] * 4) and out[4:] == pkt[4:]
