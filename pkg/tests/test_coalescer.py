"""Chunk merging, timeline stitching, and ground-truth manifests."""

from __future__ import annotations

import zlib

import numpy as np
import pytest

from trafficforge.capture import (
    FlowKey,
    PacketRecord,
    extract_flows,
    make_tcp_frame,
    make_udp_frame,
    read_pcap,
    write_pcap,
)
from trafficforge.catalog import catalog_scenario
from trafficforge.coalescer import (
    Chunk,
    CoalesceError,
    DatasetManifest,
    LabelRecord,
    MergedChunk,
    merge_chunk,
    read_manifest,
    stitch_chunks,
    validate_manifest,
    write_dataset,
)
from trafficforge.orchestrator import (
    ArtifactTag,
    CaptureArtifact,
    ChunkPlan,
    RunPlan,
    SimulatedBackend,
    run_chunk,
)
from trafficforge.shaper import NO_SHAPING


def tcp_exchange(client="10.0.0.2", server="10.0.0.3", sport=50000, base_us=1000):
    """A four-packet request/response pair, timestamped at arrival."""
    frames = [
        (base_us, make_tcp_frame(client, server, sport, 80, 100, 0, 0x18, b"GET /", 1)),
        (base_us + 400, make_tcp_frame(server, client, 80, sport, 900, 105, 0x10, b"", 2)),
        (base_us + 900, make_tcp_frame(server, client, 80, sport, 900, 105, 0x18, b"OK!", 3)),
        (base_us + 1300, make_tcp_frame(client, server, sport, 80, 105, 903, 0x10, b"", 4)),
    ]
    return [PacketRecord.from_frame(t, f) for t, f in frames]


def make_artifact(tmp_path, name, records, role, chunk_id="chunk-aaa", scenario="ping",
                  subscenario="steady", kind="benign", created="2024-01-01T00:00:00+00:00"):
    pcap_path = tmp_path / f"{name}.pcap"
    write_pcap(sorted(records, key=lambda r: r.time_us), pcap_path)
    tag = ArtifactTag(
        created_at=created,
        scenario=scenario,
        subscenario=subscenario,
        container_role=role,
        seed=1,
        profile=NO_SHAPING,
        chunk_id=chunk_id,
        kind=kind,
    )
    return CaptureArtifact(pcap_path=pcap_path, tag=tag)


def test_merge_empty_is_error():
    with pytest.raises(CoalesceError, match="nothing to merge"):
        merge_chunk([])


def test_merge_rejects_mixed_chunks(tmp_path):
    a = make_artifact(tmp_path, "a", tcp_exchange(), "client", chunk_id="chunk-1")
    b = make_artifact(tmp_path, "b", tcp_exchange(), "server", chunk_id="chunk-2")
    with pytest.raises(CoalesceError, match="different chunks"):
        merge_chunk([a, b])


def test_merge_disjoint_flows_is_sum(tmp_path):
    one = tcp_exchange(client="10.0.0.2", server="10.0.0.3", sport=50000)
    two = tcp_exchange(client="10.0.1.2", server="10.0.1.3", sport=51000, base_us=5000)
    a = make_artifact(tmp_path, "a", one, "client")
    b = make_artifact(tmp_path, "b", two, "other-client")
    packets, labels = merge_chunk([a, b])
    assert len(packets) == len(one) + len(two)
    assert len(labels) == 2
    assert {l.container_role for l in labels} == {"client", "other-client"}


def test_dual_perspective_dedup_matches_brute_force(tmp_path):
    exchange = tcp_exchange()
    a = make_artifact(tmp_path, "client_view", exchange, "client")
    b = make_artifact(tmp_path, "server_view", exchange, "server")
    merged = merge_chunk([a, b])

    # brute-force oracle: unique by (time, addressing, length, payload crc)
    def key(rec):
        return (rec.time_us, rec.src_ip, rec.src_port, rec.dst_ip, rec.dst_port,
                rec.orig_len, zlib.crc32(rec.frame))

    oracle = {key(rec) for rec in exchange + exchange}
    assert len(merged.packets) == len(oracle) == 4
    assert sorted(key(r) for r in merged.packets) == sorted(oracle)

    # one label per perspective for the single flow
    assert len(merged.labels) == 2
    assert {l.container_role for l in merged.labels} == {"client", "server"}
    assert len({l.flow_key for l in merged.labels}) == 1

    undeduped = merge_chunk([a, b], dedup=False)
    assert len(undeduped.packets) == 8


def test_merge_keeps_sender_only_packets(tmp_path):
    """A frame seen only by its sender (e.g. lost in transit) must survive."""
    exchange = tcp_exchange()
    lost = PacketRecord.from_frame(
        2000, make_tcp_frame("10.0.0.2", "10.0.0.3", 50000, 80, 105, 903, 0x18, b"xx", 9)
    )
    a = make_artifact(tmp_path, "client_view", exchange + [lost], "client")
    b = make_artifact(tmp_path, "server_view", exchange, "server")
    merged = merge_chunk([a, b])
    assert len(merged.packets) == 5
    assert any(r.time_us == 2000 for r in merged.packets)


def test_merge_orders_globally(tmp_path):
    one = tcp_exchange(base_us=10_000)
    two = tcp_exchange(client="10.0.1.2", server="10.0.1.3", sport=51000, base_us=9_500)
    a = make_artifact(tmp_path, "a", one, "client")
    b = make_artifact(tmp_path, "b", two, "other-client")
    packets, _ = merge_chunk([a, b])
    times = [r.time_us for r in packets]
    assert times == sorted(times)
    assert times[0] == 9_500


def test_stitch_single_chunk_is_identity(tmp_path):
    a = make_artifact(tmp_path, "a", tcp_exchange(), "client")
    merged = merge_chunk([a])
    manifest, packets = stitch_chunks([merged])
    assert [r.time_us for r in packets] == [r.time_us for r in merged.packets]
    chunk = manifest.chunks[0]
    assert chunk.shifted_start_us == chunk.original_start_us == 1000
    assert manifest.label_records == merged.labels


def test_stitch_two_chunks_hand_computed():
    """Six-packet fixture: chunk 2's first packet lands at chunk-1 end + 1 s."""
    def pkt(t):
        return PacketRecord.from_frame(
            t, make_tcp_frame("10.0.0.2", "10.0.0.3", 50000, 80, 1, 0, 0x18, b"x", t % 65536)
        )

    flow = FlowKey.from_packet(pkt(0))
    label_a = LabelRecord(flow, 100, 900, "s", "sub", "client", "benign")
    label_b = LabelRecord(flow, 0, 1000, "s", "sub", "client", "benign")
    chunk_a = MergedChunk(packets=[pkt(100), pkt(250), pkt(900)], labels=[label_a],
                          chunk_id="chunk-a")
    chunk_b = MergedChunk(packets=[pkt(0), pkt(40), pkt(1000)], labels=[label_b],
                          chunk_id="chunk-b")

    manifest, packets = stitch_chunks([chunk_a, chunk_b])
    times = [r.time_us for r in packets]
    # offset_b = 900 (end of chunk a) + 1_000_000 (gap) - 0 (start of chunk b)
    assert times == [100, 250, 900, 1_000_900, 1_000_940, 1_001_900]
    assert manifest.chunks[0].shifted_start_us == 100
    assert manifest.chunks[1].shifted_start_us == 1_000_900
    assert manifest.label_records[1].start_us == 1_000_900
    assert manifest.label_records[1].end_us == 1_001_900


def test_stitch_preserves_iats_to_the_microsecond(tmp_path):
    chunks = []
    for i, base in enumerate((1_000, 777, 123_456)):
        records = tcp_exchange(base_us=base, sport=50000 + i)
        art = make_artifact(tmp_path, f"c{i}", records, "client", chunk_id=f"chunk-{i}")
        chunks.append(merge_chunk([art]))
    manifest, packets = stitch_chunks(chunks, gap_s=0.5)

    original = [[r.time_us for r in c.packets] for c in chunks]
    stitched_times = [r.time_us for r in packets]
    cursor = 0
    for chunk_times in original:
        shifted = stitched_times[cursor:cursor + len(chunk_times)]
        assert np.array_equal(np.diff(shifted), np.diff(chunk_times))
        cursor += len(chunk_times)
    assert stitched_times == sorted(stitched_times)
    # gaps between consecutive chunks are exactly 0.5 s
    assert stitched_times[4] - stitched_times[3] == 500_000
    assert validate_manifest(manifest, packets) == []


def test_stitch_rejects_bad_input():
    with pytest.raises(CoalesceError, match="no chunks"):
        stitch_chunks([])
    with pytest.raises(CoalesceError, match="nonnegative"):
        stitch_chunks([MergedChunk(packets=[], labels=[])], gap_s=-1.0)


def test_validate_manifest_flags_problems(tmp_path):
    a = make_artifact(tmp_path, "a", tcp_exchange(), "client")
    manifest, packets = stitch_chunks([merge_chunk([a])])

    stripped = DatasetManifest(chunks=manifest.chunks, label_records=[],
                               created_at=manifest.created_at)
    problems = validate_manifest(stripped, packets)
    assert any("matches no label" in p for p in problems)

    doubled = DatasetManifest(
        chunks=manifest.chunks,
        label_records=manifest.label_records * 2,
        created_at=manifest.created_at,
    )
    assert any("duplicate label" in p for p in validate_manifest(doubled, packets))

    overlapping = DatasetManifest(
        chunks=[
            Chunk("c1", 0, 0, 2.0, ()),
            Chunk("c2", 0, 1_000_000, 2.0, ()),
        ],
        label_records=manifest.label_records,
        created_at="",
    )
    assert any("inside" in p for p in validate_manifest(overlapping, []))


def test_chunk_pipeline_end_to_end(tmp_path):
    """run_chunk -> merge_chunk -> stitch_chunks -> clean manifest."""
    backend = SimulatedBackend()
    vsftpd = catalog_scenario("vsftpd")
    ping = catalog_scenario("ping")
    plan = ChunkPlan(
        chunk_duration_s=40.0,
        runs=(
            RunPlan(scenario=vsftpd, subscenario="get_valid", seed=11, duration_s=30.0),
            RunPlan(scenario=ping, subscenario="steady", seed=12, duration_s=10.0,
                    subnet="10.50.0.0/24"),
        ),
    )
    artifacts = run_chunk(plan, backend, tmp_path / "runs")
    merged = merge_chunk(artifacts)
    assert merged.chunk_id == plan.chunk_id()

    # dedup keeps the union of distinct wire frames: both runs are lossless
    # dual captures, so the merged count is half the total observation count
    total = sum(len(read_pcap(a.pcap_path, keep_payload=True)) for a in artifacts)
    assert len(merged.packets) == total // 2

    # every flow from every perspective is labeled once
    per_artifact_flows = sum(
        len(extract_flows(read_pcap(a.pcap_path, keep_payload=True))) for a in artifacts
    )
    assert len(merged.labels) == per_artifact_flows
    assert {l.scenario for l in merged.labels} == {"vsftpd", "ping"}
    assert all(l.kind == "benign" for l in merged.labels)

    manifest, packets = stitch_chunks([merged])
    assert validate_manifest(manifest, packets) == []


def test_udp_and_icmp_flows_are_labeled(tmp_path):
    udp = [
        PacketRecord.from_frame(10, make_udp_frame("10.0.0.2", "10.0.0.9", 5353, 53, b"q", 1)),
        PacketRecord.from_frame(90, make_udp_frame("10.0.0.9", "10.0.0.2", 53, 5353, b"r", 2)),
    ]
    a = make_artifact(tmp_path, "u", udp, "client")
    merged = merge_chunk([a])
    assert len(merged.labels) == 1
    assert merged.labels[0].start_us == 10
    assert merged.labels[0].end_us == 90


def test_dataset_roundtrip(tmp_path):
    a = make_artifact(tmp_path, "a", tcp_exchange(), "client",
                      scenario="goldeneye", subscenario="flood", kind="malicious")
    manifest, packets = stitch_chunks([merge_chunk([a])])
    pcap_path, manifest_path = write_dataset(manifest, packets, tmp_path / "out", stem="ds")

    assert pcap_path.name == "ds.pcap"
    assert manifest_path.name == "ds.manifest.json"
    assert pcap_path.parent == manifest_path.parent

    loaded = read_manifest(manifest_path)
    assert loaded.chunks == manifest.chunks
    assert loaded.label_records == manifest.label_records
    assert loaded.created_at == manifest.created_at
    assert loaded.label_records[0].kind == "malicious"

    reread = read_pcap(pcap_path, keep_payload=True)
    assert [(r.time_us, r.frame) for r in reread] == [(r.time_us, r.frame) for r in packets]


def test_read_manifest_rejects_unknown_schema(tmp_path):
    a = make_artifact(tmp_path, "a", tcp_exchange(), "client")
    manifest, packets = stitch_chunks([merge_chunk([a])])
    _, manifest_path = write_dataset(manifest, packets, tmp_path / "out")
    text = manifest_path.read_text().replace('"schema_version": 1', '"schema_version": 99')
    manifest_path.write_text(text)
    with pytest.raises(CoalesceError, match="schema version"):
        read_manifest(manifest_path)


def test_merge_is_deterministic(tmp_path):
    exchange = tcp_exchange()
    a = make_artifact(tmp_path, "a", exchange, "client")
    b = make_artifact(tmp_path, "b", exchange, "server")
    first = merge_chunk([a, b])
    second = merge_chunk([a, b])
    assert [r.time_us for r in first.packets] == [r.time_us for r in second.packets]
    assert first.labels == second.labels
