"""Packet header sources: CSV listings, raw Ethernet II frames, classic pcap."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, NamedTuple, Sequence

from .rules import PROTOCOL_NAMES, PROTOCOL_NUMBERS, format_ip

ETH_HEADER_LEN = 14
ETHERTYPE_IPV4 = 0x0800
LINKTYPE_ETHERNET = 1

PCAP_MAGIC = 0xA1B2C3D4
PCAP_GLOBAL_HEADER_LEN = 24
PCAP_RECORD_HEADER_LEN = 16

PORTED_PROTOCOLS = (6, 17)


class PacketHeader(NamedTuple):
    """The five fields the engine inspects, as unsigned integers."""

    proto: int
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int

    def __str__(self) -> str:
        return " ".join([PROTOCOL_NAMES.get(self.proto, str(self.proto)),
                         format_ip(self.src_ip), format_ip(self.dst_ip),
                         str(self.src_port), str(self.dst_port)])


@dataclass(frozen=True)
class IngestRecord:
    """One ingested packet: either a header or a reason it can't be classified."""

    header: PacketHeader | None
    origin: tuple[str, int]
    reason: str | None = None

    def __post_init__(self):
        if (self.header is None) == (self.reason is None):
            raise ValueError("exactly one of header / reason must be set")

    @property
    def classifiable(self) -> bool:
        return self.header is not None


class IngestError(ValueError):
    pass


class CsvError(IngestError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message}, line {line}")
        self.line = line


class PcapError(IngestError):
    pass


# ---------------------------------------------------------------------------
# CSV

def _csv_int(text: str, limit: int, what: str) -> int:
    text = text.strip()
    if not text.isdigit():
        raise ValueError(f"bad {what} {text!r}")
    n = int(text)
    if n > limit:
        raise ValueError(f"{what} out of range")
    return n


def _csv_ip(text: str) -> int:
    parts = text.strip().split(".")
    if len(parts) != 4:
        raise ValueError(f"bad address {text.strip()!r}")
    value = 0
    for p in parts:
        value = (value << 8) | _csv_int(p, 255, "address octet")
    return value


def parse_csv_line(line: str) -> PacketHeader:
    cols = line.split(",")
    if len(cols) != 5:
        raise ValueError(f"expected 5 columns, got {len(cols)}")
    proto_s = cols[0].strip().lower()
    if proto_s in PROTOCOL_NUMBERS:
        proto = PROTOCOL_NUMBERS[proto_s]
    else:
        proto = _csv_int(proto_s, 255, "protocol")
    sport = _csv_int(cols[3], 0xFFFF, "port")
    dport = _csv_int(cols[4], 0xFFFF, "port")
    if proto not in PORTED_PROTOCOLS and (sport or dport):
        raise ValueError("nonzero port for a protocol without ports")
    return PacketHeader(proto, _csv_ip(cols[1]), _csv_ip(cols[2]), sport, dport)


def parse_csv(text: str, *, strict: bool = True, source: str = "<csv>") -> list[IngestRecord]:
    """Parse ``proto,src_ip,dst_ip,src_port,dst_port`` lines.

    In strict mode a malformed line raises CsvError; otherwise it becomes a
    non-classifiable record carrying the error text.
    """
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        origin = (source, lineno)
        try:
            records.append(IngestRecord(parse_csv_line(line), origin))
        except ValueError as exc:
            if strict:
                raise CsvError(str(exc), lineno) from None
            records.append(IngestRecord(None, origin, str(exc)))
    return records


def format_csv_line(h: PacketHeader) -> str:
    return ",".join([PROTOCOL_NAMES.get(h.proto, str(h.proto)), format_ip(h.src_ip),
                     format_ip(h.dst_ip), str(h.src_port), str(h.dst_port)])


def format_csv(headers: Sequence[PacketHeader]) -> str:
    return "".join(format_csv_line(h) + "\n" for h in headers)


# ---------------------------------------------------------------------------
# Ethernet / IPv4 / TCP / UDP

def parse_frame(data: bytes, origin: tuple[str, int] = ("<frame>", 0)) -> IngestRecord:
    """Extract the 5-tuple from one Ethernet II frame.

    Never reads beyond ``len(data)``; anything short, non-IPv4 or a
    non-first fragment comes back non-classifiable.
    """
    def reject(reason: str) -> IngestRecord:
        return IngestRecord(None, origin, reason)

    n = len(data)
    if n < ETH_HEADER_LEN:
        return reject("truncated")
    (ethertype,) = struct.unpack_from("!H", data, 12)
    if ethertype != ETHERTYPE_IPV4:
        return reject("non-IPv4 ethertype")
    ip = ETH_HEADER_LEN
    if n < ip + 20:
        return reject("truncated")
    ver_ihl, _tos, _tot, _id, frag, _ttl, proto, _csum, src, dst = struct.unpack_from(
        "!BBHHHBBHII", data, ip)
    if ver_ihl >> 4 != 4:
        return reject("bad IP version")
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20:
        return reject("bad IHL")
    if n < ip + ihl:
        return reject("truncated")
    if frag & 0x1FFF:
        return reject("fragment")
    sport = dport = 0
    if proto in PORTED_PROTOCOLS:
        l4 = ip + ihl
        if n < l4 + 4:
            return reject("truncated")
        sport, dport = struct.unpack_from("!HH", data, l4)
    return IngestRecord(PacketHeader(proto, src, dst, sport, dport), origin)


def read_pcap(source: str | Path | BinaryIO) -> list[IngestRecord]:
    """Read a classic (non-ng) pcap capture with Ethernet link type."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fp:
            return _read_pcap(fp, str(source))
    return _read_pcap(source, getattr(source, "name", "<pcap>"))


def _read_pcap(fp: BinaryIO, name: str) -> list[IngestRecord]:
    head = fp.read(PCAP_GLOBAL_HEADER_LEN)
    if len(head) < 4:
        raise PcapError("truncated pcap global header")
    if struct.unpack("<I", head[:4])[0] == PCAP_MAGIC:
        endian = "<"
    elif struct.unpack(">I", head[:4])[0] == PCAP_MAGIC:
        endian = ">"
    else:
        raise PcapError("bad pcap magic")
    if len(head) < PCAP_GLOBAL_HEADER_LEN:
        raise PcapError("truncated pcap global header")
    linktype = struct.unpack(endian + "I", head[20:24])[0]
    if linktype != LINKTYPE_ETHERNET:
        raise PcapError(f"unsupported link type {linktype}")

    rec_fmt = struct.Struct(endian + "IIII")
    records = []
    index = 0
    while True:
        rh = fp.read(PCAP_RECORD_HEADER_LEN)
        if not rh:
            break
        if len(rh) < PCAP_RECORD_HEADER_LEN:
            raise PcapError(f"truncated record header at packet {index}")
        _sec, _usec, caplen, _origlen = rec_fmt.unpack(rh)
        data = fp.read(caplen)
        if len(data) < caplen:
            raise PcapError(f"truncated packet data at packet {index}")
        records.append(parse_frame(data, (name, index)))
        index += 1
    return records
