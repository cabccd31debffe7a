"""pcap reading/writing, flow extraction, and per-flow series/features.

Timestamps are integer microseconds end to end (``time_us``); the float
``timestamp`` property is a convenience view.  Flows follow the classic
definition: packets sharing the two endpoint IPs, the IP protocol, and (for
TCP/UDP) the two ports, direction-independent via a canonical unordered
endpoint pair.  Non-IP frames are excluded from flows but counted and
retrievable via :func:`non_flow_packets`.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
_PCAP_MAGIC_NS = 0xA1B23C4D
_PCAPNG_MAGIC = 0x0A0D0D0A
_GLOBAL_HEADER = struct.Struct("<IHHiIII")
_RECORD_HEADER = struct.Struct("<IIII")
_SNAPLEN = 262144

ETHERTYPE_IPV4 = 0x0800
PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10


class PcapError(ValueError):
    """Malformed or unsupported capture file."""


# ---------------------------------------------------------------------------
# packet records


@dataclass
class PacketRecord:
    """One captured frame with parsed addressing fields.

    ``frame`` holds the on-wire bytes (possibly truncated at capture time);
    ``size`` is always the original on-wire length.  Ports are present iff
    the protocol is TCP or UDP; non-IP frames leave the IP fields None.
    """

    time_us: int
    frame: bytes
    orig_len: int
    src_ip: str | None = field(default=None)
    dst_ip: str | None = field(default=None)
    protocol: int | None = field(default=None)
    src_port: int | None = field(default=None)
    dst_port: int | None = field(default=None)
    header_len: int = field(default=0)

    @property
    def size(self) -> int:
        return self.orig_len

    @property
    def timestamp(self) -> float:
        return self.time_us / 1e6

    @property
    def is_ip(self) -> bool:
        return self.src_ip is not None

    def payload(self) -> bytes:
        """L4 payload bytes (empty if truncated away or non-IP)."""
        return self.frame[self.header_len:] if self.is_ip else b""

    @classmethod
    def from_frame(cls, time_us: int, frame: bytes, orig_len: int | None = None) -> "PacketRecord":
        rec = cls(time_us=int(time_us), frame=frame, orig_len=len(frame) if orig_len is None else orig_len)
        rec._parse()
        return rec

    def _parse(self) -> None:
        frame = self.frame
        if len(frame) < 14:
            return
        ethertype = struct.unpack_from("!H", frame, 12)[0]
        if ethertype != ETHERTYPE_IPV4 or len(frame) < 34:
            return
        ver_ihl = frame[14]
        if ver_ihl >> 4 != 4:
            return
        ihl = (ver_ihl & 0x0F) * 4
        if len(frame) < 14 + ihl:
            return
        proto = frame[14 + 9]
        self.src_ip = ".".join(str(b) for b in frame[14 + 12:14 + 16])
        self.dst_ip = ".".join(str(b) for b in frame[14 + 16:14 + 20])
        self.protocol = proto
        l4 = 14 + ihl
        if proto == PROTO_TCP and len(frame) >= l4 + 20:
            self.src_port, self.dst_port = struct.unpack_from("!HH", frame, l4)
            data_offset = (frame[l4 + 12] >> 4) * 4
            self.header_len = l4 + data_offset
        elif proto == PROTO_UDP and len(frame) >= l4 + 8:
            self.src_port, self.dst_port = struct.unpack_from("!HH", frame, l4)
            self.header_len = l4 + 8
        else:
            self.header_len = l4 + (8 if proto == PROTO_ICMP and len(frame) >= l4 + 8 else 0)


# ---------------------------------------------------------------------------
# frame synthesis (used by the simulated backend; checksums are real so the
# files open cleanly in standard tools and dedup has meaningful content)


def _checksum16(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _ip_bytes(ip: str) -> bytes:
    return bytes(int(p) for p in ip.split("."))


def mac_for_ip(ip: str) -> bytes:
    """Container-style locally administered MAC derived from the IPv4 address."""
    parts = _ip_bytes(ip)
    return bytes((0x02, 0x42)) + parts


def _ipv4_header(src_ip: str, dst_ip: str, proto: int, payload_len: int, ident: int) -> bytes:
    total = 20 + payload_len
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, ident & 0xFFFF, 0x4000,
                      64, proto, 0, _ip_bytes(src_ip), _ip_bytes(dst_ip))
    csum = _checksum16(hdr)
    return hdr[:10] + struct.pack("!H", csum) + hdr[12:]


def _l4_checksum(src_ip: str, dst_ip: str, proto: int, segment: bytes) -> int:
    pseudo = _ip_bytes(src_ip) + _ip_bytes(dst_ip) + struct.pack("!BBH", 0, proto, len(segment))
    return _checksum16(pseudo + segment)


def make_tcp_frame(src_ip: str, dst_ip: str, src_port: int, dst_port: int,
                   seq: int, ack: int, flags: int, payload: bytes = b"",
                   ident: int = 0) -> bytes:
    tcp = struct.pack("!HHIIBBHHH", src_port, dst_port, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
                      5 << 4, flags, 65535, 0, 0) + payload
    csum = _l4_checksum(src_ip, dst_ip, PROTO_TCP, tcp)
    tcp = tcp[:16] + struct.pack("!H", csum) + tcp[18:]
    ip = _ipv4_header(src_ip, dst_ip, PROTO_TCP, len(tcp), ident)
    eth = mac_for_ip(dst_ip) + mac_for_ip(src_ip) + struct.pack("!H", ETHERTYPE_IPV4)
    return eth + ip + tcp


def make_udp_frame(src_ip: str, dst_ip: str, src_port: int, dst_port: int,
                   payload: bytes = b"", ident: int = 0) -> bytes:
    udp = struct.pack("!HHHH", src_port, dst_port, 8 + len(payload), 0) + payload
    csum = _l4_checksum(src_ip, dst_ip, PROTO_UDP, udp)
    udp = udp[:6] + struct.pack("!H", csum or 0xFFFF) + udp[8:]
    ip = _ipv4_header(src_ip, dst_ip, PROTO_UDP, len(udp), ident)
    eth = mac_for_ip(dst_ip) + mac_for_ip(src_ip) + struct.pack("!H", ETHERTYPE_IPV4)
    return eth + ip + udp


def make_icmp_frame(src_ip: str, dst_ip: str, icmp_type: int, seq: int,
                    payload: bytes = b"", ident: int = 0) -> bytes:
    body = struct.pack("!BBHHH", icmp_type, 0, 0, ident & 0xFFFF, seq & 0xFFFF) + payload
    csum = _checksum16(body)
    body = body[:2] + struct.pack("!H", csum) + body[4:]
    ip = _ipv4_header(src_ip, dst_ip, PROTO_ICMP, len(body), ident)
    eth = mac_for_ip(dst_ip) + mac_for_ip(src_ip) + struct.pack("!H", ETHERTYPE_IPV4)
    return eth + ip + body


# ---------------------------------------------------------------------------
# pcap I/O


def write_pcap(packets: Sequence[PacketRecord], path: str | Path) -> None:
    """Write records to a standard pcap file (magic 0xa1b2c3d4, µs stamps).

    Input must be time-ordered; an empty list yields a valid header-only file.
    """
    last = None
    for pkt in packets:
        if last is not None and pkt.time_us < last:
            raise ValueError("packets must be time-ordered for writing")
        if pkt.time_us < 0:
            raise ValueError("packet timestamps must be nonnegative")
        last = pkt.time_us
    with open(path, "wb") as fh:
        fh.write(_GLOBAL_HEADER.pack(PCAP_MAGIC, 2, 4, 0, 0, _SNAPLEN, 1))
        for pkt in packets:
            sec, usec = divmod(pkt.time_us, 1_000_000)
            fh.write(_RECORD_HEADER.pack(sec, usec, len(pkt.frame), pkt.orig_len))
            fh.write(pkt.frame)


def read_pcap(path: str | Path, keep_payload: bool = False) -> list[PacketRecord]:
    """Read a pcap file into records.

    With ``keep_payload=False`` (the default privacy posture) the stored
    frame is truncated after the last parsed header; original lengths and
    timestamps are always kept, so sizes and series are unaffected.
    """
    data = Path(path).read_bytes()
    if len(data) < _GLOBAL_HEADER.size:
        raise PcapError(f"{path}: too short for a pcap global header")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif magic_le == _PCAP_MAGIC_NS:
        raise PcapError(f"{path}: nanosecond pcap is not supported (expected µs magic 0xa1b2c3d4)")
    elif magic_le == _PCAPNG_MAGIC:
        raise PcapError(f"{path}: pcapng is not supported; convert to classic pcap")
    elif struct.unpack_from(">I", data, 0)[0] == PCAP_MAGIC:
        endian = ">"
    else:
        raise PcapError(f"{path}: bad magic {magic_le:#010x}")
    header = struct.Struct(endian + "IHHiIII")
    record = struct.Struct(endian + "IIII")
    _, vmaj, vmin, _, _, _, network = header.unpack_from(data, 0)
    if network != 1:
        raise PcapError(f"{path}: unsupported link type {network} (expected Ethernet)")
    packets: list[PacketRecord] = []
    offset = header.size
    while offset < len(data):
        if offset + record.size > len(data):
            raise PcapError(f"{path}: truncated record header at offset {offset}")
        sec, usec, incl, orig = record.unpack_from(data, offset)
        offset += record.size
        if offset + incl > len(data):
            raise PcapError(f"{path}: truncated packet data at offset {offset}")
        frame = data[offset:offset + incl]
        offset += incl
        pkt = PacketRecord.from_frame(sec * 1_000_000 + usec, frame, orig_len=orig)
        if not keep_payload and pkt.is_ip and pkt.header_len and len(frame) > pkt.header_len:
            pkt.frame = frame[:pkt.header_len]
        packets.append(pkt)
    return packets


# ---------------------------------------------------------------------------
# flows


@dataclass(frozen=True, order=True)
class FlowKey:
    """Canonical, direction-independent flow identity.

    ``endpoints`` is the sorted pair of (ip, port) with port -1 for
    protocols without ports, so A→B and B→A map to the same key.
    """

    protocol: int
    endpoints: tuple[tuple[str, int], tuple[str, int]]

    @classmethod
    def from_packet(cls, pkt: PacketRecord) -> "FlowKey":
        sp = pkt.src_port if pkt.src_port is not None else -1
        dp = pkt.dst_port if pkt.dst_port is not None else -1
        a, b = sorted(((pkt.src_ip, sp), (pkt.dst_ip, dp)))
        return cls(pkt.protocol, (a, b))


UP = "up"
DOWN = "down"


@dataclass
class FlowRecord:
    """All packets of one flow, time-ordered, with direction per packet."""

    key: FlowKey
    initiator: tuple[str, int]
    packets: list[tuple[int, int, str]]  # (time_us, size, direction)

    @property
    def start_us(self) -> int:
        return self.packets[0][0]

    @property
    def duration_s(self) -> float:
        return (self.packets[-1][0] - self.packets[0][0]) / 1e6

    @property
    def total_packets(self) -> int:
        return len(self.packets)

    @property
    def total_bytes(self) -> int:
        return sum(size for _, size, _ in self.packets)


def extract_flows(packets: Iterable[PacketRecord]) -> list[FlowRecord]:
    """Group IP packets into flows by canonical key, ordered by start time.

    Non-IP frames are excluded (see :func:`non_flow_packets`); every IP
    packet lands in exactly one flow.
    """
    ordered = sorted(packets, key=lambda p: p.time_us)
    flows: dict[FlowKey, FlowRecord] = {}
    skipped = 0
    for pkt in ordered:
        if not pkt.is_ip:
            skipped += 1
            continue
        key = FlowKey.from_packet(pkt)
        flow = flows.get(key)
        src = (pkt.src_ip, pkt.src_port if pkt.src_port is not None else -1)
        if flow is None:
            flow = FlowRecord(key=key, initiator=src, packets=[])
            flows[key] = flow
        direction = UP if src == flow.initiator else DOWN
        flow.packets.append((pkt.time_us, pkt.size, direction))
    if skipped:
        log.debug("extract_flows: %d non-IP frame(s) excluded from flows", skipped)
    return sorted(flows.values(), key=lambda f: (f.start_us, f.key))


def non_flow_packets(packets: Iterable[PacketRecord]) -> list[PacketRecord]:
    """The frames :func:`extract_flows` excludes (non-IP), in input order."""
    return [p for p in packets if not p.is_ip]


SERIES_NAMES = ("iat_overall", "iat_up", "iat_down", "size_overall", "size_up", "size_down")


def flow_series(flow: FlowRecord) -> dict[str, np.ndarray]:
    """The six per-flow sample sets: {iat, size} × {overall, up, down}.

    IATs are in milliseconds; sizes in bytes.  IATs of a direction are the
    inter-arrival times within that direction's packet subsequence.
    """
    if not flow.packets:
        raise ValueError("flow has no packets")
    out: dict[str, np.ndarray] = {}
    for name, selector in (("overall", None), ("up", UP), ("down", DOWN)):
        times = np.array([t for t, _, d in flow.packets if selector in (None, d)], dtype=np.int64)
        sizes = np.array([s for _, s, d in flow.packets if selector in (None, d)], dtype=np.float64)
        out[f"iat_{name}"] = np.diff(times) / 1000.0
        out[f"size_{name}"] = sizes
    return out


@dataclass
class FeatureVector:
    """Leading inter-arrival times of a flow plus its class label."""

    iats: np.ndarray  # milliseconds, length min(total_packets, n) - 1
    label: str | int


def first_n_features(flow: FlowRecord, n_packets: int = 12, label: str | int = 0) -> FeatureVector:
    """IATs (ms) separating the first ``n_packets`` packets of the flow."""
    if n_packets < 2:
        raise ValueError("n_packets must be >= 2")
    if flow.total_packets < 2:
        raise ValueError("flow has fewer than 2 packets; no inter-arrival time is definable")
    times = np.array([t for t, _, _ in flow.packets[:n_packets]], dtype=np.int64)
    return FeatureVector(iats=np.diff(times) / 1000.0, label=label)


PAD_MS = -1.0


def export_features(vectors: Sequence[FeatureVector], path: str | Path, n_iats: int = 11) -> None:
    """Write feature vectors as delimited text with a header row.

    Rows shorter than ``n_iats`` are padded with the out-of-range sentinel
    -1 ms; the label is the last column.
    """
    header = ",".join(f"iat_{i + 1:02d}" for i in range(n_iats)) + ",label"
    lines = [header]
    for vec in vectors:
        padded = list(np.asarray(vec.iats, dtype=np.float64)[:n_iats])
        padded += [PAD_MS] * (n_iats - len(padded))
        lines.append(",".join(f"{v:.6f}" for v in padded) + f",{vec.label}")
    Path(path).write_text("\n".join(lines) + "\n")
