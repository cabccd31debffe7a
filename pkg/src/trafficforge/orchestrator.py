"""Run orchestration: backends, run plans, and the simulated wire engine.

A run executes one subscenario of one scenario against an execution backend.
The lifecycle is fixed: sample parameters, create the network, attach capture
sidecars, launch containers in startup order, apply netem profiles, run the
actions for the configured duration (times the repetition count), then tear
everything down — teardown runs even when the action phase fails.

Two backends exist: the `SimulatedBackend` here (pure in-process packet
synthesis, byte-reproducible from the seed) and the container engine client
in `engine` (real networks, real tc).  Both speak `ExecutionBackend`.

All timestamps are virtual: runs start at a fixed 2024-01-01 UTC epoch plus
per-repetition offsets, never at the wall clock, so equal plans yield
byte-identical artifacts.
"""

from __future__ import annotations

import abc
import hashlib
import ipaddress
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import yaml

from .capture import (
    PacketRecord,
    PROTO_ICMP,
    PROTO_TCP,
    PROTO_UDP,
    make_icmp_frame,
    make_tcp_frame,
    make_udp_frame,
    write_pcap,
)
from .catalog import catalog_scenario
from .randomness import DistributionSpec, SeededRng, sample_many
from .scenario import ScenarioSpec, SubscenarioSpec
from .scenario import validate as validate_scenario
from .shaper import NO_SHAPING, NetemProfile
from .templates import Dialogue, sample_parameters, trace_template

__all__ = [
    "EPOCH_US",
    "OrchestratorError",
    "ActionError",
    "WireEvent",
    "RunPlan",
    "ArtifactTag",
    "CaptureArtifact",
    "ChunkPlan",
    "ExecutionBackend",
    "SimulatedBackend",
    "execute_scenario",
    "run_chunk",
    "simulated_trace",
    "parse_capture_filter",
    "write_artifact_metadata",
    "read_artifact_metadata",
]

# 2024-01-01T00:00:00Z in microseconds: the virtual capture epoch.
EPOCH_US = 1_704_067_200_000_000

# Gap between repetitions of the same plan, and the safety margin run_chunk
# adds between a run's nominal end and the chunk boundary.
_REP_GAP_US = 1_000_000

_DEFAULT_BANDWIDTH_BPS = 10_000_000_000  # unshaped virtual links are 10 Gbit/s
_MSS = 1448
_PROC_US = 50.0  # fixed stack latency before a handshake/teardown reply

_TCP_SYN = 0x02
_TCP_ACK = 0x10
_TCP_PSH = 0x08
_TCP_FIN = 0x01

_PAYLOAD_PATTERN = bytes(range(256)) * 8  # 2 KiB of cheap deterministic filler


class OrchestratorError(RuntimeError):
    """A run could not be planned or executed."""


class ActionError(OrchestratorError):
    """The action phase failed after capture started; artifacts are partial."""

    def __init__(self, message: str, events: list["WireEvent"] | None = None):
        super().__init__(message)
        self.partial_events = events or []


# ---------------------------------------------------------------------------
# plans and artifacts


@dataclass(frozen=True)
class RunPlan:
    """Everything needed to execute one subscenario deterministically."""

    scenario: ScenarioSpec
    subscenario: str
    seed: int
    duration_s: float = 30.0
    repetitions: int = 1
    profiles: Mapping[str, NetemProfile] = field(default_factory=dict)
    capture_filter: str | None = None
    subnet: str | None = None  # override so chunked runs get disjoint subnets

    def validate(self) -> list[str]:
        problems = [f"scenario: {p}" for p in validate_scenario(self.scenario)]
        try:
            self.scenario.subscenario(self.subscenario)
        except KeyError:
            names = ", ".join(s.name for s in self.scenario.subscenarios)
            problems.append(f"unknown subscenario {self.subscenario!r} (have: {names})")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            problems.append("seed must be an integer in [0, 2^64)")
        if not self.duration_s > 0:
            problems.append("duration_s must be positive")
        if self.repetitions < 1:
            problems.append("repetitions must be >= 1")
        roles = {c.role for c in self.scenario.containers}
        for role, profile in self.profiles.items():
            if role not in roles:
                problems.append(f"profile for unknown role {role!r}")
            problems.extend(f"profile {role}: {p}" for p in profile.validate())
        if self.capture_filter is not None:
            try:
                parse_capture_filter(self.capture_filter)
            except ValueError as exc:
                problems.append(str(exc))
        if self.subnet is not None:
            try:
                net = ipaddress.ip_network(self.subnet)
                if net.num_addresses < len(roles) + 2:
                    problems.append(f"subnet override {self.subnet} too small for {len(roles)} containers")
            except ValueError:
                problems.append(f"invalid subnet override {self.subnet!r}")
        return problems


@dataclass(frozen=True)
class ArtifactTag:
    """Provenance attached to every capture file."""

    created_at: str
    scenario: str
    subscenario: str
    container_role: str
    seed: int
    profile: NetemProfile
    repetition: int = 0
    complete: bool = True
    chunk_id: str | None = None
    kind: str = "benign"


@dataclass(frozen=True)
class CaptureArtifact:
    pcap_path: Path
    tag: ArtifactTag


@dataclass(frozen=True)
class ChunkPlan:
    """A batch of runs that shared the host concurrently."""

    chunk_duration_s: float
    runs: tuple[RunPlan, ...]
    max_workers: int = 4

    def validate(self) -> list[str]:
        problems: list[str] = []
        if not self.chunk_duration_s > 0:
            problems.append("chunk_duration_s must be positive")
        if not self.runs:
            problems.append("chunk has no runs")
        if self.max_workers < 1:
            problems.append("max_workers must be >= 1")
        for i, plan in enumerate(self.runs):
            problems.extend(f"run {i}: {p}" for p in plan.validate())
            if plan.duration_s * plan.repetitions > self.chunk_duration_s:
                problems.append(
                    f"run {i}: duration {plan.duration_s}s x {plan.repetitions} reps "
                    f"exceeds chunk duration {self.chunk_duration_s}s"
                )
        nets = []
        for i, plan in enumerate(self.runs):
            subnet = plan.subnet or plan.scenario.network.subnet
            try:
                nets.append((i, ipaddress.ip_network(subnet)))
            except ValueError:
                pass  # already reported by plan.validate()
        for a in range(len(nets)):
            for b in range(a + 1, len(nets)):
                ia, na = nets[a]
                ib, nb = nets[b]
                if na.overlaps(nb):
                    problems.append(
                        f"clashing subnets: run {ia} ({na}) overlaps run {ib} ({nb}); "
                        f"concurrent runs need disjoint address space"
                    )
        return problems

    def chunk_id(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.chunk_duration_s).encode())
        for plan in self.runs:
            h.update(f"{plan.scenario.name}/{plan.subscenario}/{plan.seed}/{plan.duration_s}".encode())
        return "chunk-" + h.hexdigest()[:12]


def _profile_to_dict(profile: NetemProfile) -> dict:
    d = profile.delay
    out: dict = {"delay": {"family": d.family, "mean": d.mean, "jitter": d.jitter}}
    if d.shape is not None:
        out["delay"]["shape"] = d.shape
    for key in ("loss_pct", "corrupt_pct", "reorder_pct"):
        value = getattr(profile, key)
        if value:
            out[key] = value
    if profile.rate_limit is not None:
        out["rate_limit"] = profile.rate_limit
    return out


def _profile_from_dict(data: Mapping) -> NetemProfile:
    d = data.get("delay", {})
    delay = DistributionSpec(
        family=d.get("family", "constant"),
        mean=float(d.get("mean", 0.0)),
        jitter=float(d.get("jitter", 0.0)),
        shape=d.get("shape"),
    )
    return NetemProfile(
        delay=delay,
        loss_pct=float(data.get("loss_pct", 0.0)),
        corrupt_pct=float(data.get("corrupt_pct", 0.0)),
        reorder_pct=float(data.get("reorder_pct", 0.0)),
        rate_limit=data.get("rate_limit"),
    )


def _metadata_path(pcap_path: Path) -> Path:
    return pcap_path.with_name(pcap_path.name + ".meta.yaml")


def write_artifact_metadata(artifact: CaptureArtifact) -> Path:
    tag = artifact.tag
    data = {
        "created_at": tag.created_at,
        "scenario": tag.scenario,
        "subscenario": tag.subscenario,
        "container_role": tag.container_role,
        "seed": tag.seed,
        "profile": _profile_to_dict(tag.profile),
        "repetition": tag.repetition,
        "complete": tag.complete,
        "chunk_id": tag.chunk_id,
        "kind": tag.kind,
    }
    path = _metadata_path(artifact.pcap_path)
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def read_artifact_metadata(pcap_path: Path | str) -> ArtifactTag:
    path = _metadata_path(Path(pcap_path))
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    return ArtifactTag(
        created_at=data["created_at"],
        scenario=data["scenario"],
        subscenario=data["subscenario"],
        container_role=data["container_role"],
        seed=int(data["seed"]),
        profile=_profile_from_dict(data.get("profile", {})),
        repetition=int(data.get("repetition", 0)),
        complete=bool(data.get("complete", True)),
        chunk_id=data.get("chunk_id"),
        kind=data.get("kind", "benign"),
    )


# ---------------------------------------------------------------------------
# capture filters (a small conjunctive subset of the usual pcap-filter atoms)


def parse_capture_filter(text: str) -> Callable[[PacketRecord], bool]:
    """Compile ``"tcp and port 80 and host 172.20.1.10"`` into a predicate."""
    atoms = [a.strip() for a in text.split(" and ")]
    checks: list[Callable[[PacketRecord], bool]] = []
    protos = {"tcp": PROTO_TCP, "udp": PROTO_UDP, "icmp": PROTO_ICMP}
    for atom in atoms:
        parts = atom.split()
        if len(parts) == 1 and parts[0] in protos:
            proto = protos[parts[0]]
            checks.append(lambda rec, p=proto: rec.protocol == p)
        elif len(parts) == 2 and parts[0] == "port" and parts[1].isdigit():
            port = int(parts[1])
            checks.append(lambda rec, p=port: p in (rec.src_port, rec.dst_port))
        elif len(parts) == 2 and parts[0] == "host":
            try:
                host = str(ipaddress.ip_address(parts[1]))
            except ValueError:
                raise ValueError(f"bad host in capture filter: {atom!r}") from None
            checks.append(lambda rec, h=host: h in (rec.src_ip, rec.dst_ip))
        else:
            raise ValueError(
                f"unsupported capture filter atom {atom!r} "
                f"(supported: tcp/udp/icmp, port N, host A, joined by 'and')"
            )
    return lambda rec: all(check(rec) for check in checks)


# ---------------------------------------------------------------------------
# the wire engine: Dialogue -> timed packets


@dataclass
class WireEvent:
    """One frame on the virtual wire.

    Delivered frames are timestamped at arrival and appear in both endpoint
    captures (one shared wire clock, which is what makes cross-capture dedup
    exact).  Lost frames are timestamped at emission and appear only in the
    sender's capture.  ``emitted_us`` keeps the emission instant either way,
    so per-packet one-way latency is ``record.time_us - emitted_us``.
    """

    record: PacketRecord
    sender: str
    receiver: str
    lost: bool = False
    emitted_us: int = 0


class _DelayPool:
    """Cheap batched sampler for per-packet one-way delays (ms -> us)."""

    def __init__(self, dist: DistributionSpec, rng: SeededRng):
        self._constant = dist.family == "constant"
        self._value = dist.mean * 1000.0
        self._dist = dist
        self._rng = rng
        self._buf: Sequence[float] = ()
        self._idx = 0

    def draw_us(self) -> float:
        if self._constant:
            return self._value
        if self._idx >= len(self._buf):
            self._buf = sample_many(self._dist, self._rng, 512) * 1000.0
            self._idx = 0
        value = self._buf[self._idx]
        self._idx += 1
        return float(value)


class _ConnState:
    __slots__ = ("spec", "src_port", "established", "seq", "last_emit", "last_arrival", "src_ip", "dst_ip")

    def __init__(self, spec, src_port, src_ip, dst_ip):
        self.spec = spec
        self.src_port = src_port
        self.established = spec.protocol != "tcp"
        self.seq = {spec.initiator: 1001, spec.responder: 2001}
        self.last_emit: dict[str, float] = {}
        self.last_arrival = 0.0
        self.src_ip = src_ip
        self.dst_ip = dst_ip


class _WireEngine:
    def __init__(
        self,
        dialogue: Dialogue,
        role_ips: Mapping[str, str],
        profiles: Mapping[str, NetemProfile],
        rng: SeededRng,
        duration_us: float,
    ):
        self.dialogue = dialogue
        self.role_ips = dict(role_ips)
        self.profiles = {role: profiles.get(role, NO_SHAPING) for role in role_ips}
        self.duration_us = duration_us
        self.coins = rng.child("coins").gen
        self.proc_rng = rng.child("proc").gen
        self.pools = {role: _DelayPool(self.profiles[role].delay, rng.child("delay", role)) for role in role_ips}
        port_rng = rng.child("ports").gen
        self.idents = {role: 0 for role in role_ips}
        self.events: list[tuple[float, int, float, bytes, str, str, bool]] = []
        self.global_arrival = 0.0
        self.conns: dict[str, _ConnState] = {}
        used_ports: set[int] = set()
        for spec in dialogue.connections:
            for role in (spec.initiator, spec.responder):
                if role not in self.role_ips:
                    raise OrchestratorError(f"dialogue references unknown role {role!r}")
            while True:
                port = 49152 + int(port_rng.integers(0, 16384))
                if port not in used_ports:
                    used_ports.add(port)
                    break
            self.conns[spec.conn_id] = _ConnState(
                spec, port, self.role_ips[spec.initiator], self.role_ips[spec.responder]
            )

    # -- small helpers -----------------------------------------------------

    def _delay(self, role: str) -> float:
        return self.pools[role].draw_us()

    def _proc(self) -> float:
        pj = self.dialogue.proc_jitter_ms
        extra = float(self.proc_rng.uniform(0.0, pj)) * 1000.0 if pj > 0 else 0.0
        return _PROC_US + extra

    def _rate(self, role: str) -> float:
        limit = self.profiles[role].rate_limit
        return float(limit) if limit else float(_DEFAULT_BANDWIDTH_BPS)

    def _ident(self, role: str) -> int:
        self.idents[role] = (self.idents[role] + 1) & 0xFFFF
        return self.idents[role]

    def _push(self, t_us: float, emit_us: float, frame: bytes, sender: str, receiver: str, lost: bool) -> None:
        self.events.append((t_us, len(self.events), emit_us, frame, sender, receiver, lost))

    def _addr(self, conn: _ConnState, sender: str) -> tuple[str, str, int, int]:
        spec = conn.spec
        if sender == spec.initiator:
            return conn.src_ip, conn.dst_ip, conn.src_port, spec.port
        return conn.dst_ip, conn.src_ip, spec.port, conn.src_port

    # -- TCP mechanics -----------------------------------------------------

    def _handshake(self, conn: _ConnState, t_ready: float) -> dict[str, float]:
        spec = conn.spec
        init, resp = spec.initiator, spec.responder
        sip, dip, sport, dport = self._addr(conn, init)

        syn_e = t_ready
        syn_a = syn_e + self._delay(init)
        syn = make_tcp_frame(sip, dip, sport, dport, 1000, 0, _TCP_SYN, ident=self._ident(init))
        self._push(syn_a, syn_e, syn, init, resp, False)

        synack_e = syn_a + self._proc()
        synack_a = synack_e + self._delay(resp)
        synack = make_tcp_frame(dip, sip, dport, sport, 2000, 1001, _TCP_SYN | _TCP_ACK, ident=self._ident(resp))
        self._push(synack_a, synack_e, synack, resp, init, False)

        ack_e = synack_a + self._proc()
        ack_a = ack_e + self._delay(init)
        ack = make_tcp_frame(sip, dip, sport, dport, 1001, 2001, _TCP_ACK, ident=self._ident(init))
        self._push(ack_a, ack_e, ack, init, resp, False)

        conn.established = True
        conn.last_arrival = ack_a
        self.global_arrival = max(self.global_arrival, ack_a)
        # first data: the initiator may piggyback right after its ACK leaves;
        # the responder must have seen that ACK arrive.
        return {init: ack_e + 1.0, resp: ack_a + self._proc()}

    def _teardown(self, conn: _ConnState, t_start: float) -> None:
        spec = conn.spec
        init, resp = spec.initiator, spec.responder
        sip, dip, sport, dport = self._addr(conn, init)

        fin1_e = t_start
        fin1_a = fin1_e + self._delay(init)
        seq_i, seq_r = conn.seq[init], conn.seq[resp]
        self._push(fin1_a, fin1_e, make_tcp_frame(sip, dip, sport, dport, seq_i, seq_r, _TCP_FIN | _TCP_ACK,
                                                  ident=self._ident(init)), init, resp, False)
        fin2_e = fin1_a + self._proc()
        fin2_a = fin2_e + self._delay(resp)
        self._push(fin2_a, fin2_e, make_tcp_frame(dip, sip, dport, sport, seq_r, seq_i + 1, _TCP_FIN | _TCP_ACK,
                                                  ident=self._ident(resp)), resp, init, False)
        last_e = fin2_a + self._proc()
        last_a = last_e + self._delay(init)
        self._push(last_a, last_e, make_tcp_frame(sip, dip, sport, dport, seq_i + 1, seq_r + 1, _TCP_ACK,
                                                  ident=self._ident(init)), init, resp, False)

    # -- message lowering ----------------------------------------------------

    def _emit_message(self, conn: _ConnState, sender: str, size: int, t_emit: float) -> tuple[float, float]:
        """Segment and send; returns (first emission, last arrival)."""
        spec = conn.spec
        receiver = spec.responder if sender == spec.initiator else spec.initiator
        profile = self.profiles[sender]
        rate = self._rate(sender)
        sip, dip, sport, dport = self._addr(conn, sender)
        loss_p = profile.loss_pct / 100.0
        corrupt_p = profile.corrupt_pct / 100.0
        reorder_p = profile.reorder_pct / 100.0

        first_emit = t_emit
        last_arrival = 0.0
        remaining = max(1, size)
        t = t_emit
        while remaining > 0:
            chunk = min(remaining, _MSS)
            remaining -= chunk
            payload = _PAYLOAD_PATTERN[:chunk]
            flags = _TCP_ACK | (_TCP_PSH if remaining == 0 else 0)

            if spec.protocol == "tcp":
                seq = conn.seq[sender]
                conn.seq[sender] = (seq + chunk) & 0xFFFFFFFF
                frame = make_tcp_frame(sip, dip, sport, dport, seq, conn.seq[receiver], flags,
                                       payload, ident=self._ident(sender))
            elif spec.protocol == "udp":
                frame = make_udp_frame(sip, dip, sport, dport, payload, ident=self._ident(sender))
            else:  # icmp: initiator sends echo requests, responder echo replies
                icmp_type = 8 if sender == spec.initiator else 0
                seq = conn.seq[sender]
                conn.seq[sender] = seq + 1
                frame = make_icmp_frame(sip, dip, icmp_type, seq, payload, ident=self._ident(sender))

            reordered = reorder_p > 0 and self.coins.random() < reorder_p
            delay = 0.0 if reordered else self._delay(sender)
            arrival = t + delay
            lost = loss_p > 0 and self.coins.random() < loss_p
            if corrupt_p > 0 and self.coins.random() < corrupt_p:
                frame = frame[:-1] + bytes([frame[-1] ^ 0xFF])
            self._push(t if lost else arrival, t, frame, sender, receiver, lost)
            last_arrival = max(last_arrival, arrival)
            t += len(frame) * 8 / rate * 1e6

        conn.last_emit[sender] = first_emit
        conn.last_arrival = max(conn.last_arrival, last_arrival)
        self.global_arrival = max(self.global_arrival, last_arrival)
        return first_emit, last_arrival

    def run(self) -> list[tuple[float, int, float, bytes, str, str, bool]]:
        data_ready: dict[str, dict[str, float]] = {}
        for msg in self.dialogue.messages:
            try:
                conn = self.conns[msg.conn_id]
            except KeyError:
                raise OrchestratorError(f"message references undeclared connection {msg.conn_id!r}") from None
            gap_us = msg.gap_ms * 1000.0
            if msg.mode == "abs":
                t = msg.at_ms * 1000.0
            elif msg.mode == "burst":
                prev = conn.last_emit.get(msg.sender)
                t = prev + gap_us if prev is not None else self.global_arrival + gap_us
            elif msg.mode == "turn":
                t = self.global_arrival + gap_us
            elif msg.mode == "reply":
                t = conn.last_arrival + gap_us
            else:
                raise OrchestratorError(f"unknown message mode {msg.mode!r}")
            if t > self.duration_us:
                continue
            if conn.spec.protocol == "tcp" and not conn.established:
                data_ready[msg.conn_id] = self._handshake(conn, t)
            ready = data_ready.get(msg.conn_id, {})
            t = max(t, ready.get(msg.sender, 0.0))
            self._emit_message(conn, msg.sender, msg.size, t)

        for i, conn in enumerate(self.conns.values()):
            if conn.spec.protocol == "tcp" and conn.established:
                self._teardown(conn, self.global_arrival + 1000.0 + i * 500.0)
        self.events.sort(key=lambda ev: (ev[0], ev[1]))
        return self.events


def render_dialogue(
    dialogue: Dialogue,
    role_ips: Mapping[str, str],
    profiles: Mapping[str, NetemProfile],
    rng: SeededRng,
    duration_s: float,
    base_us: int = EPOCH_US,
) -> list[WireEvent]:
    """Lower a dialogue to wire events with absolute integer timestamps."""
    engine = _WireEngine(dialogue, role_ips, profiles, rng, duration_s * 1e6)
    out: list[WireEvent] = []
    for t, _, emit_t, frame, sender, receiver, lost in engine.run():
        record = PacketRecord.from_frame(base_us + int(round(t)), frame)
        out.append(WireEvent(record=record, sender=sender, receiver=receiver, lost=lost,
                             emitted_us=base_us + int(round(emit_t))))
    return out


def capture_view(
    events: Iterable[WireEvent],
    role: str,
    predicate: Callable[[PacketRecord], bool] | None = None,
) -> list[PacketRecord]:
    """The packets `role`'s capture interface would have recorded."""
    out = []
    for ev in events:
        if ev.lost:
            if ev.sender != role:
                continue
        elif role != ev.sender and role != ev.receiver:
            continue
        if predicate is not None and not predicate(ev.record):
            continue
        out.append(ev.record)
    return out


def assign_role_ips(scenario: ScenarioSpec, subnet: str | None = None) -> dict[str, str]:
    """Fixed IPs are honored; the rest fill the subnet in startup order."""
    net = ipaddress.ip_network(subnet or scenario.network.subnet)
    gateway = str(ipaddress.ip_address(scenario.network.gateway)) if subnet is None else str(next(net.hosts()))
    taken = {gateway}
    ips: dict[str, str] = {}
    if subnet is None:
        for c in scenario.containers:
            if c.fixed_ip is not None:
                ips[c.role] = c.fixed_ip
                taken.add(c.fixed_ip)
    hosts = (str(h) for h in net.hosts())
    for c in sorted(scenario.containers, key=lambda c: c.startup_order):
        if c.role in ips:
            continue
        for host in hosts:
            if host not in taken:
                ips[c.role] = host
                taken.add(host)
                break
        else:
            raise OrchestratorError(f"subnet {net} exhausted while assigning {c.role!r}")
    return ips


# ---------------------------------------------------------------------------
# backends


class ExecutionBackend(abc.ABC):
    """The seven lifecycle operations a run needs, plus capture readback.

    ``is_real`` distinguishes backends that touch actual containers/interfaces
    from the in-process simulation; the malicious-catalog safety gate keys on
    it.
    """

    is_real: bool = False

    @abc.abstractmethod
    def create_network(self, run_id: str, scenario: ScenarioSpec, subnet: str | None = None) -> None: ...

    @abc.abstractmethod
    def attach_capture(self, run_id: str, role: str, capture_filter: str | None = None) -> None: ...

    @abc.abstractmethod
    def launch_container(self, run_id: str, scenario: ScenarioSpec, role: str) -> None: ...

    @abc.abstractmethod
    def apply_profile(self, run_id: str, role: str, profile: NetemProfile) -> None: ...

    @abc.abstractmethod
    def exec_actions(
        self,
        run_id: str,
        scenario: ScenarioSpec,
        sub: SubscenarioSpec,
        params: Mapping[str, object],
        rng: SeededRng,
        duration_s: float,
        base_us: int,
    ) -> None: ...

    @abc.abstractmethod
    def read_capture(self, run_id: str, role: str) -> list[PacketRecord]: ...

    @abc.abstractmethod
    def stop_all(self, run_id: str) -> None: ...

    @abc.abstractmethod
    def destroy_network(self, run_id: str) -> None: ...


class SimulatedBackend(ExecutionBackend):
    """Deterministic in-process backend: no containers, no sockets, no clock.

    Traffic comes from the trace templates; netem profiles are applied by the
    wire engine.  All state is per run id, fully reclaimed on teardown, and a
    lock makes chunked (threaded) execution safe.
    """

    is_real = False

    def __init__(self):
        self._lock = threading.Lock()
        self._networks: dict[str, ipaddress.IPv4Network] = {}
        self._containers: dict[str, dict[str, str]] = {}
        self._captures: dict[str, dict[str, list[PacketRecord]]] = {}
        self._filters: dict[str, dict[str, str | None]] = {}
        self._profiles: dict[str, dict[str, NetemProfile]] = {}
        self._subnets: dict[str, str | None] = {}

    # -- lifecycle ----------------------------------------------------------

    def create_network(self, run_id, scenario, subnet=None):
        net = ipaddress.ip_network(subnet or scenario.network.subnet)
        with self._lock:
            for other_id, other in self._networks.items():
                if other.overlaps(net):
                    raise OrchestratorError(f"subnet {net} clashes with live network of run {other_id!r}")
            self._networks[run_id] = net
            self._containers[run_id] = {}
            self._captures[run_id] = {}
            self._filters[run_id] = {}
            self._profiles[run_id] = {}
            self._subnets[run_id] = subnet

    def attach_capture(self, run_id, role, capture_filter=None):
        with self._lock:
            self._captures[run_id][role] = []
            self._filters[run_id][role] = capture_filter

    def launch_container(self, run_id, scenario, role):
        container = scenario.container(role)
        with self._lock:
            self._containers[run_id][role] = container.image

    def apply_profile(self, run_id, role, profile):
        problems = profile.validate()
        if problems:
            raise OrchestratorError(f"invalid profile for {role!r}: " + "; ".join(problems))
        with self._lock:
            self._profiles[run_id][role] = profile

    def exec_actions(self, run_id, scenario, sub, params, rng, duration_s, base_us):
        with self._lock:
            launched = dict(self._containers[run_id])
            profiles = dict(self._profiles[run_id])
            filters = dict(self._filters[run_id])
            subnet = self._subnets[run_id]
        missing = [c.role for c in scenario.containers if c.role not in launched]
        if missing:
            raise ActionError(f"containers never launched: {missing}")
        builder = trace_template(scenario.name, sub.name)
        dialogue = builder(scenario, sub, params, rng.child("dialogue"), duration_s)
        events = render_dialogue(dialogue, assign_role_ips(scenario, subnet), profiles,
                                 rng.child("wire"), duration_s, base_us)
        with self._lock:
            for role, sink in self._captures[run_id].items():
                predicate = parse_capture_filter(filters[role]) if filters[role] else None
                sink.extend(capture_view(events, role, predicate))

    def read_capture(self, run_id, role):
        with self._lock:
            return list(self._captures[run_id][role])

    def stop_all(self, run_id):
        with self._lock:
            self._containers.pop(run_id, None)
            self._profiles.pop(run_id, None)

    def destroy_network(self, run_id):
        with self._lock:
            self._networks.pop(run_id, None)
            self._captures.pop(run_id, None)
            self._filters.pop(run_id, None)
            self._subnets.pop(run_id, None)

    # -- introspection (used by teardown-totality tests and the CLI) --------

    def live_networks(self) -> list[str]:
        with self._lock:
            return sorted(self._networks)

    def live_containers(self) -> list[tuple[str, str]]:
        with self._lock:
            return sorted((run, role) for run, roles in self._containers.items() for role in roles)


# ---------------------------------------------------------------------------
# run execution


def execute_scenario(
    plan: RunPlan,
    backend: ExecutionBackend,
    out_dir: Path | str,
    *,
    allow_malicious: bool = False,
    chunk_id: str | None = None,
    stagger_us: int = 0,
) -> list[CaptureArtifact]:
    """Run one plan start to finish and write capture artifacts + metadata.

    Per repetition: create network, attach captures, launch containers in
    startup order, apply profiles, execute actions, read captures, then tear
    down (teardown always runs).  Action failures yield partial artifacts
    tagged ``complete: false`` instead of raising.
    """
    problems = plan.validate()
    if problems:
        raise OrchestratorError("invalid run plan: " + "; ".join(problems))
    scenario = plan.scenario
    if scenario.kind == "malicious" and backend.is_real and not allow_malicious:
        raise OrchestratorError(
            f"scenario {scenario.name!r} is in the malicious catalog; execution on a real "
            f"backend is disabled unless allow_malicious=True is passed explicitly"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sub = scenario.subscenario(plan.subscenario)
    rng = SeededRng(plan.seed)
    duration_us = int(plan.duration_s * 1e6)
    artifacts: list[CaptureArtifact] = []

    for rep in range(plan.repetitions):
        rep_rng = rng.child("rep", rep)
        params = sample_parameters(sub, rep_rng.child("params"))
        base_us = EPOCH_US + stagger_us + rep * (duration_us + _REP_GAP_US)
        run_id = f"{scenario.name}-{plan.subscenario}-{plan.seed:016x}-r{rep}"
        complete = True
        captures: dict[str, list[PacketRecord]] = {}
        backend.create_network(run_id, scenario, plan.subnet)
        try:
            for role in scenario.capture_roles():
                backend.attach_capture(run_id, role, plan.capture_filter)
            for container in sorted(scenario.containers, key=lambda c: c.startup_order):
                backend.launch_container(run_id, scenario, container.role)
            for role, profile in sorted(plan.profiles.items()):
                backend.apply_profile(run_id, role, profile)
            try:
                backend.exec_actions(run_id, scenario, sub, params, rep_rng.child("trace"),
                                     plan.duration_s, base_us)
            except ActionError:
                complete = False
            for role in scenario.capture_roles():
                captures[role] = backend.read_capture(run_id, role)
        finally:
            backend.stop_all(run_id)
            backend.destroy_network(run_id)

        created_at = datetime.fromtimestamp(base_us / 1e6, tz=timezone.utc).isoformat()
        for role in scenario.capture_roles():
            name = f"{scenario.name}_{plan.subscenario}_{plan.seed:016x}_rep{rep:03d}_{role}.pcap"
            pcap_path = out_dir / name
            write_pcap(captures.get(role, []), pcap_path)
            tag = ArtifactTag(
                created_at=created_at,
                scenario=scenario.name,
                subscenario=plan.subscenario,
                container_role=role,
                seed=plan.seed,
                profile=plan.profiles.get(role, NO_SHAPING),
                repetition=rep,
                complete=complete,
                chunk_id=chunk_id,
                kind=scenario.kind,
            )
            artifact = CaptureArtifact(pcap_path=pcap_path, tag=tag)
            write_artifact_metadata(artifact)
            artifacts.append(artifact)
    return artifacts


def run_chunk(
    chunk: ChunkPlan,
    backend: ExecutionBackend,
    out_dir: Path | str,
    *,
    allow_malicious: bool = False,
) -> list[CaptureArtifact]:
    """Execute a chunk's runs concurrently; all clashes are rejected upfront.

    Runs start with a per-run deterministic stagger in [0, 500ms) so
    concurrent captures don't share an artificial common epoch.
    """
    problems = chunk.validate()
    if problems:
        raise OrchestratorError("invalid chunk plan: " + "; ".join(problems))
    chunk_id = chunk.chunk_id()
    results: list[list[CaptureArtifact] | None] = [None] * len(chunk.runs)

    def _one(index: int, plan: RunPlan) -> list[CaptureArtifact]:
        stagger = int(SeededRng(plan.seed).child("chunk-stagger").gen.uniform(0, 500_000))
        return execute_scenario(plan, backend, out_dir, allow_malicious=allow_malicious,
                                chunk_id=chunk_id, stagger_us=stagger)

    if len(chunk.runs) == 1 or chunk.max_workers == 1:
        for i, plan in enumerate(chunk.runs):
            results[i] = _one(i, plan)
    else:
        with ThreadPoolExecutor(max_workers=min(chunk.max_workers, len(chunk.runs))) as pool:
            futures = {pool.submit(_one, i, plan): i for i, plan in enumerate(chunk.runs)}
            for future, i in futures.items():
                results[i] = future.result()
    out: list[CaptureArtifact] = []
    for item in results:
        out.extend(item or [])
    return out


# ---------------------------------------------------------------------------
# direct simulated traces (no backend, no files): the unit of experimentation


def simulated_trace(
    template_id: str,
    params: Mapping[str, object] | None,
    profile: NetemProfile,
    rng: SeededRng,
    duration_s: float = 30.0,
) -> list[WireEvent]:
    """Render one `"scenario/subscenario"` dialogue with `profile` on every role.

    This is the cheap path the statistical experiments use: same templates and
    wire engine as a full run, but no backend lifecycle and no pcap files.
    """
    try:
        scenario_name, sub_name = template_id.split("/", 1)
    except ValueError:
        raise OrchestratorError(f"template id must be 'scenario/subscenario', got {template_id!r}") from None
    scenario = catalog_scenario(scenario_name)
    sub = scenario.subscenario(sub_name)
    if params is None:
        params = sample_parameters(sub, rng.child("params"))
    builder = trace_template(scenario_name, sub_name)
    dialogue = builder(scenario, sub, params, rng.child("dialogue"), duration_s)
    profiles = {c.role: profile for c in scenario.containers}
    return render_dialogue(dialogue, assign_role_ips(scenario), profiles, rng.child("wire"), duration_s)
