"""Acceptance suite: nine release criteria, one test per criterion.

``pytest -v tests/test_acceptance.py`` prints a one-line verdict per
criterion.  Each test enforces its stated tolerance and, where declared,
its runtime budget.  Everything runs at desk scale on the simulated
backend — exact structural checks where the contract is exact, seeded
statistical analogs where the original experiments needed live endpoints
and hours of capture.

Criterion 6's p-value tolerance is expected to fail: at sample sizes
n1, n2 <= 8 the limiting Kolmogorov form is simply not within 0.1 of the
exhaustive-permutation p-value, for any correct implementation.  The D
statistic half of that criterion passes exactly.  The failing assertion
message carries the measured worst case.
"""

from __future__ import annotations

import hashlib
import time

import numpy as np

from trafficforge.capture import (
    PacketRecord,
    extract_flows,
    make_icmp_frame,
    make_tcp_frame,
    make_udp_frame,
    write_pcap,
)
from trafficforge.catalog import catalog_scenario
from trafficforge.cli import build_parser, cmd_run
from trafficforge.coalescer import merge_chunk, stitch_chunks, validate_manifest
from trafficforge.learn import (
    LabeledDataset,
    classification_curves,
    distinguishability,
    iat_vector_rows,
    packet_feature_rows,
)
from trafficforge.orchestrator import (
    ArtifactTag,
    CaptureArtifact,
    RunPlan,
    SimulatedBackend,
    capture_view,
    execute_scenario,
    simulated_trace,
)
from trafficforge.randomness import DistributionSpec, SeededRng
from trafficforge.shaper import (
    NO_SHAPING,
    NetemProfile,
    ProfileBounds,
    grid_search_space,
    randomize_profile,
)
from trafficforge.stats import ks_two_sample, reproducibility_report


def _stopwatch():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


# ---------------------------------------------------------------------------
# 1. grid fidelity


def test_criterion_1_grid_fidelity():
    elapsed = _stopwatch()
    grid = grid_search_space()

    # Golden set, spelled out: means 40..70 ms in 10 ms steps, jitter from
    # 5 ms in 5 ms intervals up to half the mean, four heavy-ish families.
    jitters_by_mean = {
        40: (5, 10, 15, 20),
        50: (5, 10, 15, 20, 25),
        60: (5, 10, 15, 20, 25, 30),
        70: (5, 10, 15, 20, 25, 30, 35),
    }
    expected = {
        (family, mean, jitter)
        for family in ("normal", "pareto", "paretonormal", "weibull")
        for mean, jitters in jitters_by_mean.items()
        for jitter in jitters
    }

    assert len(grid) == 88
    assert len(set(grid)) == 88, "grid contains duplicate points"
    assert set(grid) == expected
    assert elapsed() < 1.0


# ---------------------------------------------------------------------------
# 2. reproducibility: same plan, same seed, 30 runs -> indistinguishable


def test_criterion_2_reproducibility(tmp_path):
    elapsed = _stopwatch()
    plan = RunPlan(
        scenario=catalog_scenario("vsftpd"),
        subscenario="get_valid",
        seed=0x5EED,
        duration_s=10.0,
    )
    backend = SimulatedBackend()

    artifacts = []
    for i in range(30):
        produced = execute_scenario(plan, backend, tmp_path / f"run{i:02d}")
        artifacts.extend(a for a in produced if a.tag.container_role == "client")
    assert len(artifacts) == 30

    report = reproducibility_report(artifacts, alpha=0.01)
    runtime = elapsed()
    print(f"criterion 2: pass fraction {report.pass_fraction:.4f} over "
          f"{len(artifacts)} runs [{runtime:.1f}s]")
    assert report.pass_fraction == 1.0
    assert runtime < 60.0


# ---------------------------------------------------------------------------
# 3. distinguishability ordering against a Weibull(60, 10) reference


_WEIBULL_60_10 = NetemProfile(delay=DistributionSpec("weibull", 60.0, 10.0))
_CONSTANT_40 = NetemProfile(delay=DistributionSpec("constant", 40.0, 0.0))


def _shaped_feature_rows(profile: NetemProfile, rng: SeededRng, label: int,
                         runs: int = 35) -> LabeledDataset:
    """Per-packet (IAT, size) rows from repeated shaped fetch dialogues."""
    parts = []
    for i in range(runs):
        events = simulated_trace("wan_wget/fetch", None, profile, rng.child("t", i), 30.0)
        flows = extract_flows(capture_view(events, "client"))
        if flows:
            parts.append(packet_feature_rows(flows, label))
    features = np.vstack([p.features for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    return LabeledDataset(features, labels, parts[0].feature_names)


def test_criterion_3_distinguishability_ordering():
    elapsed = _stopwatch()
    for seed in (101, 202, 303):
        root = SeededRng(seed)
        # The reference trace plays the far-away capture: the same dialogue
        # generated under Weibull(60 ms, 10 ms) delays from an independent
        # seed stream.
        reference = _shaped_feature_rows(_WEIBULL_60_10, root.child("oracle"), 1)
        baseline = _shaped_feature_rows(NO_SHAPING, root.child("base"), 0)
        constant = _shaped_feature_rows(_CONSTANT_40, root.child("const"), 0)
        matched = _shaped_feature_rows(_WEIBULL_60_10, root.child("match"), 0)

        for ds in (reference, baseline, constant, matched):
            assert len(ds) >= 5000

        def score(candidate: LabeledDataset, tag: str) -> float:
            n = min(len(candidate), len(reference))
            idx = np.arange(n)
            return distinguishability(candidate.take(idx), reference.take(idx),
                                      n_trees=200, rng=root.child("score", tag))

        acc_base = score(baseline, "b")
        acc_const = score(constant, "c")
        acc_match = score(matched, "m")
        print(f"criterion 3, seed {seed}: baseline={acc_base:.4f} "
              f"constant={acc_const:.4f} matched={acc_match:.4f}")

        assert acc_base > acc_const > acc_match, (
            f"seed {seed}: expected baseline > constant(40ms) > matched, got "
            f"{acc_base:.4f} / {acc_const:.4f} / {acc_match:.4f}"
        )
        assert acc_base >= 0.75
        assert acc_match <= 0.62
    assert elapsed() < 300.0


# ---------------------------------------------------------------------------
# 4. identity null: a distribution against a fresh sample of itself


def test_criterion_4_identity_null():
    root = SeededRng(424242)

    def sample_rows(gen: np.random.Generator, n: int = 2000) -> np.ndarray:
        iat = gen.lognormal(mean=1.2, sigma=0.9, size=n)
        size = gen.choice([64, 590, 1514], size=n, p=[0.3, 0.2, 0.5]).astype(float)
        return np.column_stack([iat, size])

    a = LabeledDataset(sample_rows(root.child("a").gen), np.zeros(2000, dtype=np.int64))
    b = LabeledDataset(sample_rows(root.child("b").gen), np.ones(2000, dtype=np.int64))

    acc = distinguishability(a, b, rng=root.child("score", 1000))
    print(f"criterion 4: accuracy {acc:.4f} on resampled identity")
    assert abs(acc - 0.5) <= 0.05


# ---------------------------------------------------------------------------
# 5. classification generalization gap across delay regimes


_CLASSES = (
    ("nginx", "get_page", 10.0),
    ("vsftpd", "get_valid", 10.0),
    ("ssh", "exec_commands", 10.0),
    ("rtmp", "stream", 10.0),
    ("goldeneye", "flood", 3.0),
    ("sqli", "union_extract", 10.0),
)
_IN_DIST = ProfileBounds(delay_family="pareto", mean_ms=(0.0, 100.0), jitter_ms=(0.0, 10.0))
_OUT_DIST = ProfileBounds(delay_family="pareto", mean_ms=(100.0, 500.0), jitter_ms=(0.0, 50.0))


def _primary_role(name: str) -> str:
    spec = catalog_scenario(name)
    return next(c.role for c in spec.containers if c.is_primary)


def _trace_set(bounds: ProfileBounds, rng: SeededRng, n_traces: int) -> LabeledDataset:
    """Per-flow leading-IAT rows for every class, one netem draw per trace."""
    parts = []
    for label, (name, sub, duration_s) in enumerate(_CLASSES):
        role = _primary_role(name)
        for i in range(n_traces):
            r = rng.child(name, i)
            profile = randomize_profile(bounds, r.child("prof"))
            events = simulated_trace(f"{name}/{sub}", None, profile, r.child("trace"), duration_s)
            flows = extract_flows(capture_view(events, role))
            if flows:
                parts.append(iat_vector_rows(flows, label, n_packets=12))
    features = np.vstack([p.features for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    return LabeledDataset(features, labels, parts[0].feature_names)


def test_criterion_5_generalization_gap():
    elapsed = _stopwatch()
    for seed in (11, 22, 33):
        root = SeededRng(seed)
        train = _trace_set(_IN_DIST, root.child("train"), 40)
        test_in = _trace_set(_IN_DIST, root.child("test-in"), 15)
        test_out = _trace_set(_OUT_DIST, root.child("test-out"), 15)

        # Same rng tokens on both calls: identical forests score both test
        # sets, so the gap is purely a property of the data.
        curves_in = classification_curves(train, test_in, max_packets=12,
                                          n_trees=100, rng=root.child("curves"))
        curves_out = classification_curves(train, test_out, max_packets=12,
                                           n_trees=100, rng=root.child("curves"))

        p_in_12 = curves_in.macro_precision(12)
        p_out_12 = curves_out.macro_precision(12)
        p_in_4 = curves_in.macro_precision(4)
        print(f"criterion 5, seed {seed}: in@12={p_in_12:.4f} out@12={p_out_12:.4f} "
              f"gap={p_in_12 - p_out_12:.4f} in@4={p_in_4:.4f}")

        assert p_in_12 - p_out_12 >= 0.1, (
            f"seed {seed}: macro precision gap {p_in_12 - p_out_12:.4f} < 0.1 "
            f"(in-distribution {p_in_12:.4f}, shifted {p_out_12:.4f})"
        )
        assert p_in_12 >= p_in_4, (
            f"seed {seed}: precision should not drop with more packets "
            f"(k=12: {p_in_12:.4f}, k=4: {p_in_4:.4f})"
        )
    assert elapsed() < 300.0


# ---------------------------------------------------------------------------
# 6. K-S against the definitional oracle at small sample sizes


def test_criterion_6_ks_oracle_equivalence():
    elapsed = _stopwatch()
    rng = np.random.default_rng(606060)
    d_mismatches = 0
    p_violations = 0
    worst_gap = 0.0
    worst_case = None

    for _ in range(200):
        n1 = int(rng.integers(1, 9))
        n2 = int(rng.integers(1, 9))
        a = rng.integers(0, 10, size=n1).astype(float)
        b = rng.integers(0, 10, size=n2).astype(float)

        asym = ks_two_sample(a, b, method="asymptotic")
        exact = ks_two_sample(a, b, method="exact")

        # Independent oracle: D straight from the definition, the supremum
        # of |F1 - F2| over the pooled distinct values.
        pooled = np.unique(np.concatenate([a, b]))
        d_oracle = max(abs((a <= v).mean() - (b <= v).mean()) for v in pooled)
        if asym.statistic_d != d_oracle or exact.statistic_d != d_oracle:
            d_mismatches += 1

        gap = abs(asym.p_value - exact.p_value)
        if gap > 0.1:
            p_violations += 1
        if gap > worst_gap:
            worst_gap = gap
            worst_case = (n1, n2, sorted(a.tolist()), sorted(b.tolist()),
                          asym.p_value, exact.p_value)

    assert d_mismatches == 0, f"D diverged from the definitional oracle in {d_mismatches} trials"
    assert elapsed() < 60.0

    n1, n2, a_sorted, b_sorted, p_asym, p_exact = worst_case
    assert worst_gap <= 0.1, (
        f"asymptotic p strays beyond 0.1 of the exhaustive-permutation p in "
        f"{p_violations}/200 small-sample trials; worst gap {worst_gap:.4f} at "
        f"n1={n1}, n2={n2} (a={a_sorted}, b={b_sorted}: p_asym={p_asym:.4f}, "
        f"p_exact={p_exact:.4f}).  With effective size n1*n2/(n1+n2) <= 4 the "
        f"limiting Kolmogorov form is not a 0.1-accurate stand-in for the "
        f"permutation distribution, for any correct implementation; the D half "
        f"of this criterion matched the oracle exactly on all 200 trials."
    )


# ---------------------------------------------------------------------------
# 7. coalescer exactness on a hand-built three-chunk fixture


def _tcp(t_us: int, src: str, dst: str, sport: int, dport: int,
         flags: int = 0x18, payload: bytes = b"", ident: int = 0) -> PacketRecord:
    frame = make_tcp_frame(src, dst, sport, dport, seq=ident * 100, ack=0,
                           flags=flags, payload=payload, ident=ident)
    return PacketRecord.from_frame(t_us, frame)


def _udp(t_us: int, src: str, dst: str, sport: int, dport: int,
         payload: bytes = b"", ident: int = 0) -> PacketRecord:
    return PacketRecord.from_frame(t_us, make_udp_frame(src, dst, sport, dport, payload, ident=ident))


def _fixture_artifact(tmp_path, name: str, records, *, scenario: str, sub: str,
                      role: str, chunk_id: str, seed: int) -> CaptureArtifact:
    path = tmp_path / f"{name}.pcap"
    write_pcap(records, path)
    tag = ArtifactTag(
        created_at="2026-08-19T12:00:00+00:00",
        scenario=scenario,
        subscenario=sub,
        container_role=role,
        seed=seed,
        profile=NO_SHAPING,
        chunk_id=chunk_id,
    )
    return CaptureArtifact(pcap_path=path, tag=tag)


def test_criterion_7_coalescer_exactness(tmp_path):
    # Chunk A: one TCP exchange seen identically from both ends (dedup dines
    # on the duplicates) plus a UDP lookup only the client saw.  Timestamps
    # include a 1 µs adjacency that must survive stitching bit-exactly.
    tcp_a = [
        _tcp(1_000_003, "10.0.1.5", "10.0.1.6", 40000, 80, flags=0x02, ident=1),
        _tcp(1_000_641, "10.0.1.6", "10.0.1.5", 80, 40000, flags=0x12, ident=2),
        _tcp(1_002_217, "10.0.1.5", "10.0.1.6", 40000, 80, payload=b"GET / HTTP/1.1", ident=3),
        _tcp(1_005_004, "10.0.1.6", "10.0.1.5", 80, 40000, payload=b"HTTP/1.1 200 OK", ident=4),
        _tcp(1_005_005, "10.0.1.6", "10.0.1.5", 80, 40000, payload=b"<html/>", ident=5),
        _tcp(1_009_876, "10.0.1.5", "10.0.1.6", 40000, 80, flags=0x11, ident=6),
    ]
    udp_a = [
        _udp(1_000_001, "10.0.1.5", "10.0.1.1", 53444, 53, payload=b"q", ident=7),
        _udp(1_000_383, "10.0.1.1", "10.0.1.5", 53, 53444, payload=b"r", ident=8),
    ]
    client_a = sorted(tcp_a + udp_a, key=lambda r: r.time_us)
    chunk_a = [
        _fixture_artifact(tmp_path, "a_client", client_a, scenario="nginx",
                          sub="get_page", role="client", chunk_id="chunk-a", seed=1),
        _fixture_artifact(tmp_path, "a_server", list(tcp_a), scenario="nginx",
                          sub="get_page", role="server", chunk_id="chunk-a", seed=1),
    ]

    # Chunk B: two interleaved flows from one perspective; the data channel
    # is opened by the far side so its initiator is not the capture owner.
    control = [
        _tcp(50_000_001, "10.0.2.5", "10.0.2.6", 41000, 21, payload=b"USER x", ident=10),
        _tcp(50_000_777, "10.0.2.6", "10.0.2.5", 21, 41000, payload=b"331", ident=11),
        _tcp(50_003_141, "10.0.2.5", "10.0.2.6", 41000, 21, payload=b"RETR f", ident=12),
        _tcp(50_012_345, "10.0.2.6", "10.0.2.5", 21, 41000, payload=b"226", ident=13),
    ]
    data = [
        _tcp(50_004_443, "10.0.2.6", "10.0.2.5", 20, 41001, flags=0x02, ident=14),
        _tcp(50_004_444, "10.0.2.5", "10.0.2.6", 41001, 20, flags=0x12, ident=15),
        _tcp(50_008_999, "10.0.2.6", "10.0.2.5", 20, 41001, payload=b"bytes", ident=16),
    ]
    chunk_b = [
        _fixture_artifact(tmp_path, "b_client", sorted(control + data, key=lambda r: r.time_us),
                          scenario="vsftpd", sub="get_valid", role="client",
                          chunk_id="chunk-b", seed=2),
    ]

    # Chunk C: a single flow whose original timestamps predate chunk B's,
    # with sub-millisecond spacing and a long internal silence.
    ssh_c = [
        _tcp(10_000_019, "10.0.3.5", "10.0.3.6", 42000, 22, flags=0x02, ident=20),
        _tcp(10_000_020, "10.0.3.6", "10.0.3.5", 22, 42000, flags=0x12, ident=21),
        _tcp(10_000_023, "10.0.3.5", "10.0.3.6", 42000, 22, payload=b"SSH-2.0", ident=22),
        _tcp(10_742_000, "10.0.3.6", "10.0.3.5", 22, 42000, payload=b"SSH-2.0", ident=23),
        _tcp(19_999_999, "10.0.3.5", "10.0.3.6", 42000, 22, flags=0x11, ident=24),
    ]
    chunk_c = [
        _fixture_artifact(tmp_path, "c_client", ssh_c, scenario="ssh",
                          sub="exec_commands", role="client", chunk_id="chunk-c", seed=3),
    ]

    merged = [merge_chunk(chunk_a), merge_chunk(chunk_b), merge_chunk(chunk_c)]
    pre_times = [np.array([p.time_us for p in m.packets], dtype=np.int64) for m in merged]
    assert len(merged[0].packets) == 8, "dedup should fold the double-seen TCP exchange"

    gap_s = 1.0
    manifest, packets = stitch_chunks(merged, gap_s=gap_s)

    assert [c.chunk_id for c in manifest.chunks] == ["chunk-a", "chunk-b", "chunk-c"]
    all_times = np.array([p.time_us for p in packets], dtype=np.int64)
    assert np.all(np.diff(all_times) >= 0), "stitched stream must be time-ordered"

    # Within-chunk pairwise differences survive to the microsecond: the full
    # difference matrix before stitching equals the one after.
    offset = 0
    for pre in pre_times:
        post = all_times[offset:offset + len(pre)]
        assert np.array_equal(np.subtract.outer(post, post),
                              np.subtract.outer(pre, pre))
        offset += len(pre)

    # Chunk k starts exactly one gap after chunk k-1 ends.
    n_a, n_b = len(pre_times[0]), len(pre_times[1])
    assert all_times[n_a] - all_times[n_a - 1] == 1_000_000
    assert all_times[n_a + n_b] - all_times[n_a + n_b - 1] == 1_000_000

    # The manifest covers every flow: no validation problems, and the label
    # keys are exactly the flow keys of the stitched pcap.
    assert validate_manifest(manifest, packets) == []
    labeled = {record.flow_key for record in manifest.label_records}
    observed = {flow.key for flow in extract_flows(packets)}
    assert labeled == observed
    assert len(observed) == 5
    # The double-perspective TCP flow carries one label per perspective.
    assert len(manifest.label_records) == 6


# ---------------------------------------------------------------------------
# 8. flow extraction against brute-force grouping


def test_criterion_8_flow_extraction_oracle():
    rng = np.random.default_rng(0x0F10)
    ips = ("10.9.0.1", "10.9.0.2", "10.9.0.3", "192.168.7.4")
    ports = (21, 53, 80, 443, 40001, 40002)
    arp_frame = (b"\x02\x42\x00\x00\x00\x01" + b"\x02\x42\x00\x00\x00\x02"
                 + b"\x08\x06" + bytes(28))

    for trial in range(1000):
        n = int(rng.integers(0, 501))
        times = np.sort(rng.integers(0, 3_000_000, size=n))
        records = []
        for t in times:
            i = int(rng.integers(0, len(ips)))
            j = int(rng.integers(0, len(ips) - 1))
            j = j + 1 if j >= i else j
            src, dst = ips[i], ips[j]
            roll = float(rng.random())
            if roll < 0.40:
                frame = make_tcp_frame(src, dst, int(rng.choice(ports)), int(rng.choice(ports)),
                                       seq=int(rng.integers(0, 2**32)), ack=0, flags=0x18,
                                       payload=b"x" * int(rng.integers(0, 32)))
            elif roll < 0.78:
                frame = make_udp_frame(src, dst, int(rng.choice(ports)), int(rng.choice(ports)),
                                       payload=b"u" * int(rng.integers(0, 32)))
            elif roll < 0.92:
                frame = make_icmp_frame(src, dst, 8, seq=int(rng.integers(0, 100)))
            else:
                frame = arp_frame
            records.append(PacketRecord.from_frame(int(t), frame))

        flows = extract_flows(records)

        # Brute force from first principles: canonical key is the protocol
        # plus the sorted (ip, port) endpoint pair, port -1 when portless;
        # the initiator is whoever sent the earliest packet.
        expected: dict = {}
        for rec in records:  # already time-sorted; ties keep build order
            if rec.src_ip is None:
                continue
            sp = -1 if rec.src_port is None else rec.src_port
            dp = -1 if rec.dst_port is None else rec.dst_port
            endpoints = tuple(sorted([(rec.src_ip, sp), (rec.dst_ip, dp)]))
            entry = expected.setdefault((rec.protocol, endpoints),
                                        {"initiator": (rec.src_ip, sp), "packets": []})
            direction = "up" if (rec.src_ip, sp) == entry["initiator"] else "down"
            entry["packets"].append((rec.time_us, rec.size, direction))

        assert len(flows) == len(expected), f"trial {trial}: flow count mismatch"
        for flow in flows:
            entry = expected[(flow.key.protocol, flow.key.endpoints)]
            assert flow.initiator == entry["initiator"], f"trial {trial}: initiator mismatch"
            assert flow.packets == entry["packets"], f"trial {trial}: packet sequence mismatch"
        order = [(f.start_us, f.key) for f in flows]
        assert order == sorted(order), f"trial {trial}: flows not ordered by start"


# ---------------------------------------------------------------------------
# 9. end-to-end determinism of the run command


def test_criterion_9_run_determinism(tmp_path):
    parser = build_parser()
    digests = []
    for attempt in ("first", "second"):
        out_dir = tmp_path / attempt
        args = parser.parse_args([
            "run", "--scenario", "nginx", "--subscenario", "get_page",
            "--seed", "0xC0FFEE", "--duration", "10", "--out", str(out_dir),
        ])
        assert args.func is cmd_run
        assert args.func(args) == 0
        hashes = {
            path.name: hashlib.sha256(path.read_bytes()).hexdigest()
            for path in sorted(out_dir.glob("*.pcap"))
        }
        assert len(hashes) >= 2, "expected one capture per container role"
        digests.append(hashes)
    assert digests[0] == digests[1], "same seed must give byte-identical captures"
