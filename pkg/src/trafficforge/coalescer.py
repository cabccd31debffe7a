"""Merge per-run capture artifacts into chunked, labeled datasets.

Runs that shared a chunk produce one capture file per container perspective;
``merge_chunk`` folds those into a single timestamp-ordered packet stream with
per-flow, per-perspective ground-truth labels.  ``stitch_chunks`` then lays
consecutive chunks onto one timeline, shifting each chunk by a single constant
offset so within-chunk inter-arrival structure survives to the microsecond,
and emits a :class:`DatasetManifest` — the labeling layer that public captures
usually lack.

Duplicate observations (the same wire frame seen from both endpoints) are
removed from the merged stream by default, preferring the sender-side copy;
the labels keep both perspectives either way.  Pass ``dedup=False`` to keep
every observation.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .capture import FlowKey, PacketRecord, extract_flows, read_pcap, write_pcap
from .orchestrator import CaptureArtifact

__all__ = [
    "CoalesceError",
    "LabelRecord",
    "Chunk",
    "MergedChunk",
    "DatasetManifest",
    "merge_chunk",
    "stitch_chunks",
    "validate_manifest",
    "write_dataset",
    "read_manifest",
]

MANIFEST_SCHEMA_VERSION = 1

_DEFAULT_GAP_S = 1.0


class CoalesceError(ValueError):
    """Artifacts cannot be merged or stitched as requested."""


@dataclass(frozen=True)
class LabelRecord:
    """Ground truth for one flow as seen from one capture perspective.

    ``start_us``/``end_us`` bound the flow's packets on the dataset timeline
    (chunk-local until stitching, shifted afterwards).  ``container_role`` is
    the perspective the flow was captured from, so a flow observed from both
    endpoints carries two records.
    """

    flow_key: FlowKey
    start_us: int
    end_us: int
    scenario: str
    subscenario: str
    container_role: str
    kind: str

    def shifted(self, offset_us: int) -> "LabelRecord":
        return dataclasses.replace(
            self, start_us=self.start_us + offset_us, end_us=self.end_us + offset_us
        )

    def covers(self, key: FlowKey, time_us: int) -> bool:
        return key == self.flow_key and self.start_us <= time_us <= self.end_us


@dataclass(frozen=True)
class Chunk:
    """One stitched chunk's placement on the dataset timeline."""

    chunk_id: str | None
    original_start_us: int
    shifted_start_us: int
    duration_s: float
    member_artifacts: tuple[str, ...]

    @property
    def shifted_end_us(self) -> int:
        return self.shifted_start_us + int(round(self.duration_s * 1e6))


@dataclass
class MergedChunk:
    """merge_chunk's result: packets + labels, plus chunk provenance.

    Iterable as ``(packets, labels)`` so callers that only care about the
    merge contract can tuple-unpack it.
    """

    packets: list[PacketRecord]
    labels: list[LabelRecord]
    chunk_id: str | None = None
    member_artifacts: tuple[str, ...] = ()
    created_at: str = ""

    def __iter__(self):
        yield self.packets
        yield self.labels

    @property
    def start_us(self) -> int:
        return self.packets[0].time_us if self.packets else 0

    @property
    def span_us(self) -> int:
        return (self.packets[-1].time_us - self.packets[0].time_us) if self.packets else 0


@dataclass
class DatasetManifest:
    """Schema-versioned ground truth for one stitched dataset pcap."""

    chunks: list[Chunk]
    label_records: list[LabelRecord]
    created_at: str
    tool_version: str = __version__
    schema_version: int = MANIFEST_SCHEMA_VERSION


# ---------------------------------------------------------------------------
# merging one chunk


def _own_ips(records: Sequence[PacketRecord]) -> frozenset[str]:
    """The capturing container's address(es): present in every IP packet.

    A perspective sees only traffic it sent or received, so intersecting the
    endpoint pairs isolates the capturing side.  Single-conversation captures
    stay ambiguous (both endpoints survive), which merely weakens the
    sender-preference tie-break — never correctness.
    """
    candidates: frozenset[str] | None = None
    for rec in records:
        if not rec.is_ip:
            continue
        pair = frozenset((rec.src_ip, rec.dst_ip))
        candidates = pair if candidates is None else candidates & pair
        if not candidates:
            return frozenset()
    return candidates or frozenset()


def _dedup_key(rec: PacketRecord) -> tuple:
    return (
        rec.time_us,
        rec.src_ip,
        rec.src_port,
        rec.dst_ip,
        rec.dst_port,
        rec.protocol,
        rec.orig_len,
        zlib.crc32(rec.frame),
    )


def merge_chunk(artifacts: Sequence[CaptureArtifact], *, dedup: bool = True) -> MergedChunk:
    """Merge one chunk's capture artifacts into a single labeled stream.

    Packets come out in global timestamp order.  With ``dedup=True`` (the
    default) a frame observed identically from several perspectives — same
    microsecond, same addressing, same length, same checksum — is kept once,
    preferring the copy from the perspective that sent it.  Labels always
    record every (flow, perspective) pair once.
    """
    if not artifacts:
        raise CoalesceError("empty artifact list: nothing to merge")
    chunk_ids = {artifact.tag.chunk_id for artifact in artifacts}
    if len(chunk_ids) > 1:
        raise CoalesceError(
            f"artifacts span different chunks: {sorted(map(str, chunk_ids))}"
        )

    per_artifact: list[list[PacketRecord]] = [
        read_pcap(artifact.pcap_path, keep_payload=True) for artifact in artifacts
    ]

    labels: list[LabelRecord] = []
    for artifact, records in zip(artifacts, per_artifact):
        tag = artifact.tag
        for flow in extract_flows(records):
            labels.append(
                LabelRecord(
                    flow_key=flow.key,
                    start_us=flow.packets[0][0],
                    end_us=flow.packets[-1][0],
                    scenario=tag.scenario,
                    subscenario=tag.subscenario,
                    container_role=tag.container_role,
                    kind=tag.kind,
                )
            )

    # (sort_rank, record): rank keeps ties deterministic in artifact order
    kept: dict[tuple, tuple[tuple, PacketRecord]] = {}
    passthrough: list[tuple[tuple, PacketRecord]] = []
    for art_index, records in enumerate(per_artifact):
        own = _own_ips(records)
        for pkt_index, rec in enumerate(records):
            rank = (rec.time_us, art_index, pkt_index)
            if not dedup:
                passthrough.append((rank, rec))
                continue
            key = _dedup_key(rec)
            sender_side = rec.src_ip is not None and rec.src_ip in own
            held = kept.get(key)
            if held is None or (sender_side and not held[0][3]):
                kept[key] = ((*rank, sender_side), rec)

    chosen = passthrough if not dedup else list(kept.values())
    chosen.sort(key=lambda item: item[0][:3])
    merged = [rec for _, rec in chosen]

    return MergedChunk(
        packets=merged,
        labels=sorted(labels, key=lambda l: (l.start_us, l.container_role, l.flow_key)),
        chunk_id=next(iter(chunk_ids)),
        member_artifacts=tuple(artifact.pcap_path.name for artifact in artifacts),
        created_at=max(artifact.tag.created_at for artifact in artifacts),
    )


# ---------------------------------------------------------------------------
# stitching chunks onto one timeline


def _shift_packet(rec: PacketRecord, offset_us: int) -> PacketRecord:
    if offset_us == 0:
        return rec
    return dataclasses.replace(rec, time_us=rec.time_us + offset_us)


def stitch_chunks(
    chunks: Sequence[MergedChunk], *, gap_s: float = _DEFAULT_GAP_S
) -> tuple[DatasetManifest, list[PacketRecord]]:
    """Lay chunks end to end: one constant offset per chunk, first offset 0.

    Chunk k (k ≥ 1) is shifted so its first packet lands exactly ``gap_s``
    after the last packet of chunk k−1 on the stitched timeline.  Constant
    shifting preserves within-chunk timestamp differences bit-exactly; the
    returned packet stream is globally non-decreasing.
    """
    if not chunks:
        raise CoalesceError("no chunks to stitch")
    if gap_s < 0:
        raise CoalesceError("inter-chunk gap must be nonnegative")
    gap_us = int(round(gap_s * 1e6))

    out_packets: list[PacketRecord] = []
    out_labels: list[LabelRecord] = []
    manifest_chunks: list[Chunk] = []
    prev_end: int | None = None  # shifted time of the previous chunk's last packet

    for merged in chunks:
        if prev_end is None:
            offset = 0
        else:
            offset = prev_end + gap_us - merged.start_us
        shifted_start = merged.start_us + offset
        out_packets.extend(_shift_packet(rec, offset) for rec in merged.packets)
        out_labels.extend(label.shifted(offset) for label in merged.labels)
        manifest_chunks.append(
            Chunk(
                chunk_id=merged.chunk_id,
                original_start_us=merged.start_us,
                shifted_start_us=shifted_start,
                duration_s=merged.span_us / 1e6,
                member_artifacts=merged.member_artifacts,
            )
        )
        prev_end = shifted_start + merged.span_us

    created = max((m.created_at for m in chunks if m.created_at), default="")
    manifest = DatasetManifest(
        chunks=manifest_chunks, label_records=out_labels, created_at=created
    )
    return manifest, out_packets


# ---------------------------------------------------------------------------
# invariants


def validate_manifest(manifest: DatasetManifest, packets: Iterable[PacketRecord]) -> list[str]:
    """Check the ground-truth invariants; returns human-readable violations.

    * chunk ranges are disjoint and appear in timeline order;
    * every label's interval lies inside its chunk's shifted range;
    * every (flow, perspective) pair is labeled exactly once;
    * every IP packet matches at least one label (total interaction capture),
      and its matches never span different (scenario, subscenario) truths.
    """
    problems: list[str] = []
    for prev, cur in zip(manifest.chunks, manifest.chunks[1:]):
        if cur.shifted_start_us < prev.shifted_end_us:
            problems.append(
                f"chunk {cur.chunk_id} starts at {cur.shifted_start_us} inside "
                f"chunk {prev.chunk_id} (ends {prev.shifted_end_us})"
            )

    ranges = [(c.shifted_start_us, c.shifted_end_us) for c in manifest.chunks]
    for label in manifest.label_records:
        if not any(lo <= label.start_us and label.end_us <= hi for lo, hi in ranges):
            problems.append(
                f"label for {label.flow_key} [{label.start_us}, {label.end_us}] "
                f"lies outside every chunk range"
            )

    seen: dict[tuple, int] = {}
    for label in manifest.label_records:
        pair = (label.flow_key, label.container_role, label.start_us, label.end_us)
        seen[pair] = seen.get(pair, 0) + 1
    for pair, count in seen.items():
        if count > 1:
            problems.append(f"duplicate label for flow {pair[0]} from {pair[1]!r}")

    for rec in packets:
        if not rec.is_ip:
            continue
        key = FlowKey.from_packet(rec)
        matches = [l for l in manifest.label_records if l.covers(key, rec.time_us)]
        if not matches:
            problems.append(f"packet at {rec.time_us} on {key} matches no label")
        elif len({(l.scenario, l.subscenario) for l in matches}) > 1:
            problems.append(f"packet at {rec.time_us} on {key} matches conflicting labels")
    return problems


# ---------------------------------------------------------------------------
# dataset files


def _flow_key_to_plain(key: FlowKey) -> dict:
    return {
        "protocol": key.protocol,
        "endpoints": [[ip, port] for ip, port in key.endpoints],
    }


def _flow_key_from_plain(data: dict) -> FlowKey:
    a, b = data["endpoints"]
    return FlowKey(protocol=data["protocol"], endpoints=((a[0], a[1]), (b[0], b[1])))


def write_dataset(
    manifest: DatasetManifest,
    packets: Sequence[PacketRecord],
    out_dir: Path | str,
    stem: str = "dataset",
) -> tuple[Path, Path]:
    """Write the merged pcap and its manifest side by side; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pcap_path = out_dir / f"{stem}.pcap"
    manifest_path = out_dir / f"{stem}.manifest.json"
    write_pcap(packets, pcap_path)

    document = {
        "schema_version": manifest.schema_version,
        "tool_version": manifest.tool_version,
        "created_at": manifest.created_at,
        "pcap": pcap_path.name,
        "chunks": [
            {
                "chunk_id": chunk.chunk_id,
                "original_start_us": chunk.original_start_us,
                "shifted_start_us": chunk.shifted_start_us,
                "duration_s": chunk.duration_s,
                "member_artifacts": list(chunk.member_artifacts),
            }
            for chunk in manifest.chunks
        ],
        "labels": [
            {
                "flow_key": _flow_key_to_plain(label.flow_key),
                "start_us": label.start_us,
                "end_us": label.end_us,
                "scenario": label.scenario,
                "subscenario": label.subscenario,
                "container_role": label.container_role,
                "kind": label.kind,
            }
            for label in manifest.label_records
        ],
    }
    manifest_path.write_text(json.dumps(document, indent=1), encoding="utf-8")
    return pcap_path, manifest_path


def read_manifest(path: Path | str) -> DatasetManifest:
    """Load a manifest written by :func:`write_dataset` (schema-checked)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    version = data.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise CoalesceError(f"unsupported manifest schema version: {version!r}")
    chunks = [
        Chunk(
            chunk_id=c["chunk_id"],
            original_start_us=int(c["original_start_us"]),
            shifted_start_us=int(c["shifted_start_us"]),
            duration_s=float(c["duration_s"]),
            member_artifacts=tuple(c["member_artifacts"]),
        )
        for c in data["chunks"]
    ]
    labels = [
        LabelRecord(
            flow_key=_flow_key_from_plain(l["flow_key"]),
            start_us=int(l["start_us"]),
            end_us=int(l["end_us"]),
            scenario=l["scenario"],
            subscenario=l["subscenario"],
            container_role=l["container_role"],
            kind=l["kind"],
        )
        for l in data["labels"]
    ]
    return DatasetManifest(
        chunks=chunks,
        label_records=labels,
        created_at=data.get("created_at", ""),
        tool_version=data.get("tool_version", ""),
        schema_version=version,
    )
