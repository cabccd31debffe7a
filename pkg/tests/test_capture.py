"""pcap round trips, frame parsing, flow extraction vs brute force, series."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficforge.capture import (
    PacketRecord,
    PcapError,
    export_features,
    extract_flows,
    first_n_features,
    flow_series,
    make_icmp_frame,
    make_tcp_frame,
    make_udp_frame,
    non_flow_packets,
    read_pcap,
    write_pcap,
)


def _tcp_packet(t_us, src, dst, sport, dport, payload=b"", **kw):
    frame = make_tcp_frame(src, dst, sport, dport, seq=1, ack=0, flags=0x18, payload=payload, **kw)
    return PacketRecord.from_frame(t_us, frame)


def test_roundtrip_identical_records(tmp_path):
    packets = [
        _tcp_packet(0, "10.0.0.1", "10.0.0.2", 40000, 80, b"GET / HTTP/1.1"),
        PacketRecord.from_frame(1500, make_udp_frame("10.0.0.2", "10.0.0.3", 53, 40001, b"answer")),
        PacketRecord.from_frame(2750, make_icmp_frame("10.0.0.1", "10.0.0.2", 8, 1, b"x" * 56)),
    ]
    path = tmp_path / "t.pcap"
    write_pcap(packets, path)
    back = read_pcap(path, keep_payload=True)
    assert len(back) == len(packets)
    for orig, got in zip(packets, back):
        assert got.time_us == orig.time_us
        assert got.frame == orig.frame
        assert got.orig_len == orig.orig_len
        assert (got.src_ip, got.dst_ip, got.protocol) == (orig.src_ip, orig.dst_ip, orig.protocol)
        assert (got.src_port, got.dst_port) == (orig.src_port, orig.dst_port)


def test_empty_pcap_is_header_only(tmp_path):
    path = tmp_path / "empty.pcap"
    write_pcap([], path)
    assert path.stat().st_size == 24
    assert read_pcap(path) == []


def test_unordered_write_rejected(tmp_path):
    pkts = [_tcp_packet(10, "1.1.1.1", "2.2.2.2", 1, 2), _tcp_packet(5, "1.1.1.1", "2.2.2.2", 1, 2)]
    with pytest.raises(ValueError, match="time-ordered"):
        write_pcap(pkts, tmp_path / "x.pcap")


def test_truncated_file_names_offset(tmp_path):
    path = tmp_path / "t.pcap"
    write_pcap([_tcp_packet(0, "1.1.1.1", "2.2.2.2", 1, 2, b"abc")], path)
    whole = path.read_bytes()
    clipped = tmp_path / "clip.pcap"
    clipped.write_bytes(whole[:-5])
    with pytest.raises(PcapError, match="offset"):
        read_pcap(clipped)
    header_cut = tmp_path / "hdr.pcap"
    header_cut.write_bytes(whole[:24 + 7])
    with pytest.raises(PcapError, match="offset"):
        read_pcap(header_cut)


def test_bad_magics_rejected(tmp_path):
    for magic, msg in ((0xDEADBEEF, "bad magic"), (0xA1B23C4D, "nanosecond"), (0x0A0D0D0A, "pcapng")):
        p = tmp_path / f"{magic:x}.pcap"
        p.write_bytes(struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 262144, 1))
        with pytest.raises(PcapError, match=msg):
            read_pcap(p)


def test_big_endian_pcap_accepted(tmp_path):
    pkt = _tcp_packet(1_234_567, "10.0.0.1", "10.0.0.2", 1024, 80, b"hi")
    p = tmp_path / "be.pcap"
    with open(p, "wb") as fh:
        fh.write(struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 262144, 1))
        sec, usec = divmod(pkt.time_us, 1_000_000)
        fh.write(struct.pack(">IIII", sec, usec, len(pkt.frame), pkt.orig_len))
        fh.write(pkt.frame)
    back = read_pcap(p, keep_payload=True)
    assert back[0].time_us == pkt.time_us and back[0].frame == pkt.frame


def test_payload_retention_off_truncates_but_keeps_sizes(tmp_path):
    pkt = _tcp_packet(0, "10.0.0.1", "10.0.0.2", 40000, 80, b"s" * 400)
    path = tmp_path / "p.pcap"
    write_pcap([pkt], path)
    lean = read_pcap(path, keep_payload=False)[0]
    assert lean.payload() == b""
    assert len(lean.frame) == lean.header_len == 54
    assert lean.size == pkt.orig_len == 454
    full = read_pcap(path, keep_payload=True)[0]
    assert full.payload() == b"s" * 400


def _ones_complement_ok(data: bytes) -> bool:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total == 0xFFFF


def test_synthesized_checksums_verify():
    frame = make_tcp_frame("172.20.0.2", "172.20.0.3", 49152, 21, seq=7, ack=3, flags=0x18, payload=b"USER x")
    ip_header = frame[14:34]
    assert _ones_complement_ok(ip_header)
    tcp = frame[34:]
    pseudo = frame[26:34] + struct.pack("!BBH", 0, 6, len(tcp))
    assert _ones_complement_ok(pseudo + tcp)


def test_ports_present_iff_tcp_udp():
    tcp = _tcp_packet(0, "1.1.1.1", "2.2.2.2", 5, 6)
    icmp = PacketRecord.from_frame(0, make_icmp_frame("1.1.1.1", "2.2.2.2", 8, 1))
    assert tcp.src_port == 5 and tcp.dst_port == 6
    assert icmp.src_port is None and icmp.dst_port is None and icmp.protocol == 1


def test_three_packet_flow_directions():
    pkts = [
        _tcp_packet(0, "10.0.0.1", "10.0.0.2", 40000, 80),
        _tcp_packet(10, "10.0.0.2", "10.0.0.1", 80, 40000),
        _tcp_packet(20, "10.0.0.1", "10.0.0.2", 40000, 80),
    ]
    flows = extract_flows(pkts)
    assert len(flows) == 1
    assert flows[0].total_packets == 3
    assert [d for _, _, d in flows[0].packets] == ["up", "down", "up"]
    assert flows[0].initiator == ("10.0.0.1", 40000)


def test_client_ports_separate_flows():
    pkts = [
        _tcp_packet(0, "10.0.0.1", "10.0.0.2", 40000, 80),
        _tcp_packet(1, "10.0.0.1", "10.0.0.2", 40001, 80),
    ]
    assert len(extract_flows(pkts)) == 2


def test_non_ip_counted_but_excluded():
    arp = PacketRecord.from_frame(5, b"\xff" * 12 + struct.pack("!H", 0x0806) + b"\x00" * 28)
    pkts = [_tcp_packet(0, "1.1.1.1", "2.2.2.2", 1, 2), arp]
    flows = extract_flows(pkts)
    assert sum(f.total_packets for f in flows) == 1
    assert non_flow_packets(pkts) == [arp]


def test_direction_symmetry_on_endpoint_swap():
    pkts = [
        _tcp_packet(0, "10.0.0.1", "10.0.0.2", 40000, 80),
        _tcp_packet(10, "10.0.0.2", "10.0.0.1", 80, 40000),
        PacketRecord.from_frame(20, make_udp_frame("10.0.0.3", "10.0.0.4", 5000, 53)),
    ]
    swapped = [
        _tcp_packet(0, "10.0.0.2", "10.0.0.1", 80, 40000),
        _tcp_packet(10, "10.0.0.1", "10.0.0.2", 40000, 80),
        PacketRecord.from_frame(20, make_udp_frame("10.0.0.4", "10.0.0.3", 53, 5000)),
    ]
    f1 = extract_flows(pkts)
    f2 = extract_flows(swapped)
    assert {f.key for f in f1} == {f.key for f in f2}
    # the endpoint-to-label mapping flips (each flow's initiator is now the
    # other endpoint), while positional labels are preserved
    for a, b in zip(f1, f2):
        assert a.initiator != b.initiator
        assert {a.initiator, b.initiator} <= set(a.key.endpoints)
        assert [d for _, _, d in a.packets] == [d for _, _, d in b.packets]


def _brute_force_groups(pkts):
    """Independent grouping: frozenset endpoint identity, pairwise scan."""
    groups: list[tuple[object, list[int]]] = []
    for idx, p in enumerate(pkts):
        if p.src_ip is None:
            continue
        ident = (p.protocol, frozenset(((p.src_ip, p.src_port), (p.dst_ip, p.dst_port))))
        for gid, members in groups:
            if gid == ident:
                members.append(idx)
                break
        else:
            groups.append((ident, [idx]))
    return {frozenset(members) for _, members in groups}


def _random_trace(rng, n_packets):
    ips = [f"10.0.0.{i}" for i in range(1, 6)]
    ports = [80, 443, 8080, 40000, 40001]
    pkts = []
    t = 0
    for _ in range(n_packets):
        t += int(rng.integers(0, 1000))
        src, dst = rng.choice(len(ips), size=2, replace=False)
        kind = rng.integers(0, 3)
        if kind == 0:
            frame = make_tcp_frame(ips[src], ips[dst], int(rng.choice(ports)), int(rng.choice(ports)), 1, 0, 0x18)
        elif kind == 1:
            frame = make_udp_frame(ips[src], ips[dst], int(rng.choice(ports)), int(rng.choice(ports)))
        else:
            frame = make_icmp_frame(ips[src], ips[dst], 8, 1)
        pkts.append(PacketRecord.from_frame(t, frame))
    return pkts


def test_extract_flows_matches_brute_force_randomized():
    rng = np.random.default_rng(4242)
    for _ in range(60):
        pkts = _random_trace(rng, int(rng.integers(1, 200)))
        flows = extract_flows(pkts)
        mine = set()
        index_of = {id(p): i for i, p in enumerate(pkts)}
        for f in flows:
            members = []
            for p in pkts:
                if p.src_ip is None:
                    continue
                sp = p.src_port if p.src_port is not None else -1
                dp = p.dst_port if p.dst_port is not None else -1
                eps = tuple(sorted(((p.src_ip, sp), (p.dst_ip, dp))))
                if (p.protocol, eps) == (f.key.protocol, f.key.endpoints):
                    members.append(index_of[id(p)])
            mine.add(frozenset(members))
        assert mine == _brute_force_groups(pkts)
        # flow partition: every IP packet in exactly one flow
        assert sum(f.total_packets for f in flows) == sum(1 for p in pkts if p.src_ip is not None)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 120))
def test_property_flow_partition(seed, n):
    pkts = _random_trace(np.random.default_rng(seed), n)
    flows = extract_flows(pkts)
    total = sum(f.total_packets for f in flows)
    assert total == sum(1 for p in pkts if p.src_ip is not None)
    for f in flows:
        times = [t for t, _, _ in f.packets]
        assert times == sorted(times)
        assert f.total_bytes == sum(s for _, s, _ in f.packets)


def test_flow_series_arithmetic():
    pkts = [
        _tcp_packet(0, "10.0.0.1", "10.0.0.2", 40000, 80),
        _tcp_packet(2000, "10.0.0.2", "10.0.0.1", 80, 40000),
        _tcp_packet(5000, "10.0.0.1", "10.0.0.2", 40000, 80),
    ]
    flow = extract_flows(pkts)[0]
    series = flow_series(flow)
    np.testing.assert_allclose(series["iat_overall"], [2.0, 3.0])
    assert series["size_overall"].size == 3
    # up-direction subsequence: packets at 0 and 5000 µs
    np.testing.assert_allclose(series["iat_up"], [5.0])
    assert series["iat_down"].size == 0 and series["size_down"].size == 1


def test_flow_series_single_packet_and_one_sided():
    single = extract_flows([_tcp_packet(0, "1.1.1.1", "2.2.2.2", 1, 2)])[0]
    s = flow_series(single)
    assert s["iat_overall"].size == 0 and s["size_overall"].size == 1
    upstream_only = extract_flows([
        _tcp_packet(0, "1.1.1.1", "2.2.2.2", 1, 2),
        _tcp_packet(10, "1.1.1.1", "2.2.2.2", 1, 2),
    ])[0]
    s = flow_series(upstream_only)
    assert s["iat_down"].size == 0 and s["size_down"].size == 0
    assert s["iat_up"].size == 1


def test_first_n_features():
    pkts = [_tcp_packet(t * 1000, "1.1.1.1", "2.2.2.2", 1, 2) for t in range(12)]
    flow = extract_flows(pkts)[0]
    vec = first_n_features(flow, 12, label="web")
    assert vec.iats.size == 11
    np.testing.assert_allclose(vec.iats, np.ones(11))
    assert vec.label == "web"

    short = extract_flows(pkts[:5])[0]
    assert first_n_features(short, 12).iats.size == 4

    lone = extract_flows(pkts[:1])[0]
    with pytest.raises(ValueError, match="fewer than 2"):
        first_n_features(lone, 12)
    with pytest.raises(ValueError, match=">= 2"):
        first_n_features(flow, 1)


def test_export_features_padding_and_header(tmp_path):
    pkts = [_tcp_packet(t * 1000, "1.1.1.1", "2.2.2.2", 1, 2) for t in range(5)]
    vec = first_n_features(extract_flows(pkts)[0], 12, label="ftp")
    out = tmp_path / "features.csv"
    export_features([vec], out)
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("iat_01,") and lines[0].endswith(",label")
    cells = lines[1].split(",")
    assert len(cells) == 12
    assert cells[-1] == "ftp"
    assert cells[4] == "-1.000000"  # sentinel padding past the 4 real IATs
