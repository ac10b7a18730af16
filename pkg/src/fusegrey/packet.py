"""Packets: pcap ingestion, field templates and symbolic marking.

A concrete packet is a plain ``bytes`` value of length 0..65535.
"""

from __future__ import annotations

import codecs
import os
import shlex
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

MAX_PACKET_LEN = 65535


class FormatError(ValueError):
    pass


class TemplateError(ValueError):
    pass


def check_packet(data) -> bytes:
    data = bytes(data)
    if len(data) > MAX_PACKET_LEN:
        raise ValueError(f"packet of {len(data)} bytes exceeds {MAX_PACKET_LEN}")
    return data


# -- pcap ----------------------------------------------------------------------

_MAGICS = {
    b"\xd4\xc3\xb2\xa1": "<",
    b"\xa1\xb2\xc3\xd4": ">",
    b"\x4d\x3c\xb2\xa1": "<",  # nanosecond-resolution variants
    b"\xa1\xb2\x3c\x4d": ">",
}
LINKTYPE_ETHERNET = 1


def read_pcap(data: bytes) -> list:
    """TCP payloads of an Ethernet/IPv4 classic pcap capture, in file order."""
    data = bytes(data)
    if len(data) < 24:
        raise FormatError("truncated pcap global header")
    endian = _MAGICS.get(data[:4])
    if endian is None:
        raise FormatError(f"bad pcap magic {data[:4].hex()}")
    linktype = struct.unpack(endian + "I", data[20:24])[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise FormatError(f"unsupported link type {linktype}")
    out = []
    pos = 24
    while pos < len(data):
        if pos + 16 > len(data):
            raise FormatError(f"truncated record header at offset {pos}")
        incl_len = struct.unpack(endian + "I", data[pos + 8:pos + 12])[0]
        pos += 16
        if pos + incl_len > len(data):
            raise FormatError(f"truncated record body at offset {pos}")
        payload = _tcp_payload(data[pos:pos + incl_len])
        pos += incl_len
        if payload:
            out.append(check_packet(payload))
    return out


def _tcp_payload(frame: bytes) -> bytes:
    if len(frame) < 14:
        return b""
    ethertype = struct.unpack(">H", frame[12:14])[0]
    ip = frame[14:]
    if ethertype == 0x8100 and len(frame) >= 18:  # single 802.1Q tag
        ethertype = struct.unpack(">H", frame[16:18])[0]
        ip = frame[18:]
    if ethertype != 0x0800 or len(ip) < 20 or ip[0] >> 4 != 4:
        return b""
    ihl = (ip[0] & 0x0F) * 4
    total = struct.unpack(">H", ip[2:4])[0]
    if ip[9] != 6 or ihl < 20 or total < ihl:
        return b""
    ip = ip[:total]  # drop link-layer padding
    tcp = ip[ihl:]
    if len(tcp) < 20:
        return b""
    off = (tcp[12] >> 4) * 4
    if off < 20:
        return b""
    return tcp[off:]


# -- templates -----------------------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class Delimited:
    """Bytes up to (excluding) ``terminator``, starting where the previous field
    ended; an optional ``skip`` prefix is consumed first if present."""

    name: str
    terminator: bytes
    max_len: Optional[int] = None
    skip: bytes = b""


FieldSpec = Union[Fixed, Delimited]


@dataclass(frozen=True)
class PacketTemplate:
    name: str
    fields: tuple
    description: str = ""

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise TemplateError(f"duplicate field names in template {self.name}")
        spans = sorted((f.offset, f.offset + f.length) for f in self.fields if isinstance(f, Fixed))
        for (a0, a1), (b0, _) in zip(spans, spans[1:]):
            if b0 < a1:
                raise TemplateError(f"overlapping fixed fields in template {self.name}")
        for f in self.fields:
            if isinstance(f, Fixed) and (f.offset < 0 or f.length < 1):
                raise TemplateError(f"bad fixed field {f.name}")
            if isinstance(f, Delimited) and not f.terminator:
                raise TemplateError(f"empty terminator for field {f.name}")

    @property
    def field_names(self) -> list:
        return [f.name for f in self.fields]


def apply_template(template: PacketTemplate, packet: bytes) -> dict:
    """Map each field name to its half-open ``(start, end)`` byte range."""
    ranges = {}
    cursor = 0
    for f in template.fields:
        if isinstance(f, Fixed):
            end = f.offset + f.length
            if end > len(packet):
                raise TemplateError(
                    f"field {f.name} needs bytes [{f.offset},{end}) but packet has {len(packet)}")
            ranges[f.name] = (f.offset, end)
            cursor = end
            continue
        start = cursor
        if f.skip and packet.startswith(f.skip, start):
            start += len(f.skip)
        limit = len(packet) if f.max_len is None else min(len(packet), start + f.max_len + len(f.terminator))
        stop = packet.find(f.terminator, start, limit)
        if stop < 0:
            raise TemplateError(f"terminator {f.terminator!r} for field {f.name} not found")
        ranges[f.name] = (start, stop)
        cursor = stop + len(f.terminator)
    return ranges


FTP_TEMPLATE = PacketTemplate(
    "ftp",
    (Fixed("cmd", 0, 4), Delimited("arg", b"\r\n", max_len=4096, skip=b" ")),
    "FTP control line: four-letter command, optional space, argument, CRLF",
)
VULNSERVER_TEMPLATE = PacketTemplate(
    "vulnserver",
    (Fixed("cmd", 0, 4), Delimited("arg", b"\r\n", max_len=4096, skip=b" ")),
    "Vulnserver command line: four-letter command, space, argument, CRLF",
)
BINARY_TEMPLATE = PacketTemplate(
    "binary",
    (Fixed("op", 0, 1), Fixed("a", 1, 1), Fixed("b", 2, 1), Fixed("len", 3, 2)),
    "Binary request: opcode byte, two operand bytes, little-endian 16-bit length",
)
BUILTIN_TEMPLATES = {t.name: t for t in (FTP_TEMPLATE, VULNSERVER_TEMPLATE, BINARY_TEMPLATE)}


def get_template(name_or_path: str) -> PacketTemplate:
    if name_or_path in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[name_or_path]
    if os.path.exists(name_or_path):
        return parse_template(Path(name_or_path).read_text(encoding="utf-8"))
    raise TemplateError(f"unknown template {name_or_path!r}")


def _unescape(s: str) -> bytes:
    return codecs.decode(s, "unicode_escape").encode("latin-1")


def parse_template(text: str) -> PacketTemplate:
    """Read the line-oriented template format::

        template ftp
        description "FTP control line"
        field cmd fixed 0 4
        field arg delimited "\\r\\n" skip " " max 4096
    """
    name = None
    description = ""
    fields = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line, posix=True)
        except ValueError as exc:
            raise TemplateError(f"line {lineno}: {exc}") from None
        head = words[0]
        try:
            if head == "template":
                name = words[1]
            elif head == "description":
                description = " ".join(words[1:])
            elif head == "field" and words[2] == "fixed":
                fields.append(Fixed(words[1], int(words[3], 0), int(words[4], 0)))
            elif head == "field" and words[2] == "delimited":
                opts = dict(zip(words[4::2], words[5::2]))
                unknown = set(opts) - {"skip", "max"}
                if unknown or len(words[4:]) % 2:
                    raise TemplateError(f"line {lineno}: bad delimited options")
                fields.append(Delimited(
                    words[1], _unescape(words[3]),
                    int(opts["max"], 0) if "max" in opts else None,
                    _unescape(opts.get("skip", "")),
                ))
            else:
                raise TemplateError(f"line {lineno}: cannot parse {line!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, TemplateError):
                raise
            raise TemplateError(f"line {lineno}: {exc}") from None
    if name is None or not fields:
        raise TemplateError("template needs a name and at least one field")
    return PacketTemplate(name, tuple(fields), description)


# -- symbolic marking ----------------------------------------------------------


@dataclass(frozen=True)
class SymbolicPacket:
    base: bytes
    marks: tuple = ()  # ((index, var name), ...) sorted by index

    def __post_init__(self):
        for i, _ in self.marks:
            if not 0 <= i < len(self.base):
                raise ValueError(f"mark index {i} outside packet of {len(self.base)} bytes")

    @property
    def mark_map(self) -> dict:
        return dict(self.marks)

    @property
    def variables(self) -> list:
        return [v for _, v in self.marks]

    def identity_model(self) -> dict:
        return {v: self.base[i] for i, v in self.marks}


def mark_symbolic(packet: bytes, template: PacketTemplate, field_names,
                  first_index: int = 0) -> SymbolicPacket:
    """Mark the bytes of the named fields as ``sym_<n>`` variables."""
    packet = check_packet(packet)
    field_names = set(field_names)
    unknown = field_names - set(template.field_names)
    if unknown:
        raise TemplateError(f"unknown field(s) {sorted(unknown)} for template {template.name}")
    if not field_names:
        return SymbolicPacket(packet)
    ranges = apply_template(template, packet)
    idx = sorted({i for f in field_names for i in range(*ranges[f])})
    return SymbolicPacket(packet, tuple((i, f"sym_{first_index + k}") for k, i in enumerate(idx)))


def mark_session(packets, template: PacketTemplate, field_names) -> list:
    """Mark every packet of a session with one dense variable numbering.

    Packets the template does not fit stay fully concrete.
    """
    out = []
    n = 0
    for p in packets:
        try:
            sp = mark_symbolic(p, template, field_names, n)
        except TemplateError as exc:
            if "unknown field" in str(exc):
                raise
            sp = SymbolicPacket(check_packet(p))
        n += len(sp.marks)
        out.append(sp)
    return out


def concretize(sp: SymbolicPacket, model: dict) -> bytes:
    out = bytearray(sp.base)
    for i, v in sp.marks:
        if v not in model:
            raise KeyError(f"model has no value for {v}")
        out[i] = int(model[v]) & 0xFF
    return bytes(out)


def concretize_session(session, model: dict) -> list:
    """Like ``concretize`` but unassigned variables keep their base byte."""
    out = []
    for sp in session:
        full = sp.identity_model()
        full.update({k: v for k, v in model.items() if k in full})
        out.append(concretize(sp, full))
    return out


# -- corpus directories --------------------------------------------------------


def read_corpus_dir(path) -> list:
    """One packet per regular file, session order = lexicographic filename order."""
    p = Path(path)
    if not p.is_dir():
        raise FormatError(f"{path} is not a directory")
    return [check_packet(f.read_bytes()) for f in sorted(p.iterdir(), key=lambda f: f.name) if f.is_file()]


def write_corpus_dir(path, packets, prefix: str = "pkt_") -> list:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    names = []
    for i, pkt in enumerate(packets):
        name = f"{prefix}{i:03d}.bin"
        (p / name).write_bytes(pkt)
        names.append(name)
    return names


def load_seed_session(path) -> list:
    """A pcap file or a directory of raw packet files, as one session."""
    p = Path(path)
    if p.is_dir():
        return read_corpus_dir(p)
    return read_pcap(p.read_bytes())
