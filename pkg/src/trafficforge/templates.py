"""Trace templates: behavioral models behind the simulated backend.

A template turns a (scenario, subscenario) pair plus sampled parameters into
a `Dialogue`: a list of TCP/UDP/ICMP connections and an ordered list of
application messages over them.  The orchestrator's wire engine then lowers
the dialogue to timed, checksummed packets, applying per-role netem profiles.

Message timing semantics (per connection):

* ``turn`` — the sender waits for the latest arrival anywhere in the dialogue,
  thinks for ``gap_ms``, then emits (request/response alternation).
* ``reply`` — like turn, but waits only for the latest arrival on the same
  connection (prompt responses on parallel connections).
* ``burst`` — the sender emits ``gap_ms`` after its previous emission on the
  same connection (streaming/pipelining, no waiting for the peer).
* ``abs`` — emission at an absolute offset ``at_ms`` from dialogue start
  (parallel floods).

Only the catalog's executable subset has templates; the action vocabularies
here are a reconstruction of what each containerized interaction would do,
since only the FTP interaction is described blow-by-blow in the scenario
files' sources.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from .catalog import PoolFile, file_pool
from .randomness import SeededRng, sample, sample_credential, pick_file
from .scenario import ScenarioSpec, SubscenarioSpec

__all__ = [
    "ConnectionSpec",
    "Message",
    "Dialogue",
    "TemplateNotFoundError",
    "trace_template",
    "has_template",
    "template_ids",
    "sample_parameters",
]


@dataclass(frozen=True)
class ConnectionSpec:
    """One logical connection: who dials whom, and over which protocol."""

    conn_id: str
    initiator: str
    responder: str
    port: int
    protocol: str = "tcp"  # tcp | udp | icmp


@dataclass(frozen=True)
class Message:
    """One application message: `size` payload bytes from `sender` over `conn_id`."""

    conn_id: str
    sender: str
    size: int
    mode: str = "turn"  # turn | reply | burst | abs
    gap_ms: float = 0.0
    at_ms: float = 0.0  # only for mode == "abs"


@dataclass(frozen=True)
class Dialogue:
    """A full interaction; `proc_jitter_ms` smears handshake/teardown replies."""

    connections: tuple[ConnectionSpec, ...]
    messages: tuple[Message, ...]
    proc_jitter_ms: float = 0.0


class TemplateNotFoundError(KeyError):
    """No trace template is registered for this (scenario, subscenario)."""


Builder = Callable[[ScenarioSpec, SubscenarioSpec, Mapping[str, object], SeededRng, float], Dialogue]

_TEMPLATES: dict[tuple[str, str], Builder] = {}


def _register(scenario: str, *subscenarios: str):
    def deco(builder: Builder) -> Builder:
        for sub in subscenarios:
            _TEMPLATES[(scenario, sub)] = builder
        return builder

    return deco


def trace_template(scenario: str, subscenario: str) -> Builder:
    try:
        return _TEMPLATES[(scenario, subscenario)]
    except KeyError:
        raise TemplateNotFoundError(
            f"no trace template for {scenario}/{subscenario}; "
            f"only the executable catalog subset can run on the simulated backend"
        ) from None


def has_template(scenario: str, subscenario: str) -> bool:
    return (scenario, subscenario) in _TEMPLATES


def template_ids() -> list[tuple[str, str]]:
    return sorted(_TEMPLATES)


# ---------------------------------------------------------------------------
# parameter sampling


def sample_parameters(sub: SubscenarioSpec, rng: SeededRng) -> dict[str, object]:
    """Draw one value per ParameterSpec: float, PoolFile, or credential string.

    Each parameter gets its own child stream keyed by name, so adding or
    reordering parameters does not perturb the other draws.
    """
    values: dict[str, object] = {}
    for param in sub.parameters:
        child = rng.child("param", param.name)
        if param.source == "distribution":
            assert param.distribution is not None
            values[param.name] = float(sample(param.distribution, child))
        elif param.source == "file_pool":
            values[param.name] = pick_file(file_pool(param.directory), child)
        elif param.source == "credential":
            values[param.name] = sample_credential(param.alphabet, child, param.length_distribution())
        else:  # pragma: no cover - validate() rejects unknown sources first
            raise ValueError(f"unknown parameter source {param.source!r}")
    return values


def _num(params: Mapping[str, object], key: str, default: float) -> float:
    value = params.get(key, default)
    return float(value)  # type: ignore[arg-type]


def _count(params: Mapping[str, object], key: str, default: float, lo: int = 1, hi: int = 10_000) -> int:
    return max(lo, min(hi, int(round(_num(params, key, default)))))


def _file(params: Mapping[str, object], key: str, fallback_pool: str) -> PoolFile:
    value = params.get(key)
    if isinstance(value, PoolFile):
        return value
    return file_pool(fallback_pool)[0]


def _cred(params: Mapping[str, object], key: str, default: str) -> str:
    value = params.get(key, default)
    return str(value)


def _u(rng: SeededRng, lo: float, hi: float) -> float:
    return float(rng.gen.uniform(lo, hi))


# ---------------------------------------------------------------------------
# ping


@_register("ping", "steady")
def _ping_steady(spec, sub, params, rng, duration_s):
    interval_ms = _num(params, "interval_ms", 1000.0)
    count = _count(params, "count", 10)
    if interval_ms > 0:
        count = min(count, max(1, int(duration_s * 1000 / interval_ms)))
    conn = ConnectionSpec("icmp0", "client", "resolver", port=0, protocol="icmp")
    messages = []
    for i in range(count):
        messages.append(Message("icmp0", "client", 56, mode="turn", gap_ms=interval_ms if i else 2.0))
        messages.append(Message("icmp0", "resolver", 56, mode="turn", gap_ms=0.2))
    return Dialogue((conn,), tuple(messages))


# ---------------------------------------------------------------------------
# nginx (HTTP request/response; short think gaps, chunked responses)


def _http_fetch(conn_id: str, client: str, server: str, rng: SeededRng, *,
                think_ms: float, chunk_gap: tuple[float, float],
                chunks: tuple[int, int], chunk_size: tuple[int, int] = (700, 1400)):
    """One HTTP exchange on a fresh connection; returns (connection, messages)."""
    conn = ConnectionSpec(conn_id, client, server, port=80)
    messages = [Message(conn_id, client, int(_u(rng, 180, 420)), mode="turn", gap_ms=think_ms)]
    n_chunks = int(_u(rng, chunks[0], chunks[1] + 1))
    for i in range(n_chunks):
        mode = "turn" if i % 2 == 0 else "burst"
        messages.append(
            Message(conn_id, server, int(_u(rng, *chunk_size)), mode=mode, gap_ms=_u(rng, *chunk_gap))
        )
    return conn, messages


@_register("nginx", "get_page")
def _nginx_get_page(spec, sub, params, rng, duration_s):
    requests = _count(params, "requests", 4, hi=40)
    think = _num(params, "think_ms", 300.0)
    conns, messages = [], []
    for r in range(requests):
        conn, msgs = _http_fetch(
            f"c{r}", "client", "server", rng,
            think_ms=max(1.0, think * _u(rng, 0.8, 1.2)),
            chunk_gap=(8.0, 14.0), chunks=(6, 10),
        )
        conns.append(conn)
        messages.extend(msgs)
    return Dialogue(tuple(conns), tuple(messages), proc_jitter_ms=2.0)


@_register("nginx", "get_assets")
def _nginx_get_assets(spec, sub, params, rng, duration_s):
    count = _count(params, "count", 6, hi=40)
    think = _num(params, "think_ms", 120.0)
    conns, messages = [], []
    conn, msgs = _http_fetch("c0", "client", "server", rng, think_ms=5.0, chunk_gap=(8.0, 14.0), chunks=(6, 10))
    conns.append(conn)
    messages.extend(msgs)
    for r in range(count):
        conn, msgs = _http_fetch(
            f"a{r}", "client", "server", rng,
            think_ms=max(1.0, think * _u(rng, 0.8, 1.2)),
            chunk_gap=(8.0, 14.0), chunks=(2, 5), chunk_size=(300, 1200),
        )
        conns.append(conn)
        messages.extend(msgs)
    return Dialogue(tuple(conns), tuple(messages), proc_jitter_ms=2.0)


# ---------------------------------------------------------------------------
# vsftpd (control dialogue on 21, separate passive data connection)

_FTP_BANNER = 20
_FTP_SUBS = (
    "get_valid", "get_anonymous", "get_wrong_password",
    "put_valid", "put_anonymous", "put_wrong_password",
    "ls_valid", "ls_anonymous",
    "login_only_valid", "login_only_anonymous", "login_only_wrong_password",
    "idle",
)


@_register("vsftpd", *_FTP_SUBS)
def _vsftpd(spec, sub, params, rng, duration_s):
    return _ftp_dialogue(sub.name, params, rng, duration_s)


@_register("vsftpd_full", *_FTP_SUBS, "mget_all")
def _vsftpd_full(spec, sub, params, rng, duration_s):
    return _ftp_dialogue(sub.name, params, rng, duration_s)


def _ftp_dialogue(sub_name: str, params, rng: SeededRng, duration_s: float) -> Dialogue:
    think = _num(params, "think_ms", 200.0)
    username = _cred(params, "username", "user")
    password = _cred(params, "password", "pass")
    anonymous = "anonymous" in sub_name
    wrong = "wrong_password" in sub_name

    ctrl = ConnectionSpec("ctrl", "client", "server", port=21)
    conns = [ctrl]
    m: list[Message] = [Message("ctrl", "server", _FTP_BANNER, mode="turn", gap_ms=0.5)]

    def cmd(size: int, reply: int, gap: float | None = None):
        m.append(Message("ctrl", "client", size, mode="turn", gap_ms=think if gap is None else gap))
        m.append(Message("ctrl", "server", reply, mode="turn", gap_ms=0.5))

    if sub_name == "idle":
        hold_s = _num(params, "hold_s", 3.0)
        m.append(Message("ctrl", "client", 6, mode="turn", gap_ms=min(hold_s, duration_s) * 1000.0))
        m.append(Message("ctrl", "server", 14, mode="turn", gap_ms=0.5))
        return Dialogue(tuple(conns), tuple(m))

    # login
    user_arg = "anonymous" if anonymous else username
    cmd(7 + len(user_arg), 34)  # USER -> 331
    cmd(7 + (1 if anonymous else len(password)), 22 if wrong else 23)  # PASS -> 530/230

    if wrong or sub_name.startswith("login_only"):
        if not wrong:
            cmd(6, 14)  # QUIT -> 221; failed logins drop without pleasantries
        return Dialogue(tuple(conns), tuple(m))

    transfers: list[tuple[str, int]] = []  # (direction, byte count)
    if sub_name.startswith("get"):
        transfers = [("down", _file(params, "filename", "dataToShare").size)]
    elif sub_name.startswith("put"):
        f = _file(params, "filename", "dataToShare")
        transfers = [] if anonymous else [("up", f.size)]
        if anonymous:  # STOR denied: 550 after the attempt, no data connection
            cmd(8, 30)  # TYPE I -> 200
            cmd(6 + len(f.name), 35)  # STOR -> 550
    elif sub_name.startswith("ls"):
        transfers = [("down", 68 * len(file_pool("dataToShare")))]
    elif sub_name == "mget_all":
        transfers = [("down", f.size) for f in file_pool("dataToShare")]

    for i, (direction, nbytes) in enumerate(transfers):
        data_id = f"data{i}"
        pasv_port = 40000 + int(rng.gen.integers(0, 20000))
        conns.append(ConnectionSpec(data_id, "client", "server", port=pasv_port))
        cmd(8, 30)  # TYPE I -> 200
        cmd(6, 50)  # PASV -> 227
        verb = 4 if sub_name.startswith("ls") else 6 + len(_file(params, "filename", "dataToShare").name)
        cmd(verb, 60)  # RETR/STOR/LIST -> 150
        sender = "server" if direction == "down" else "client"
        m.append(Message(data_id, sender, max(1, nbytes), mode="turn", gap_ms=0.5))
        m.append(Message("ctrl", "server", 24, mode="turn", gap_ms=0.5))  # 226 transfer complete
    cmd(6, 14)  # QUIT -> 221
    return Dialogue(tuple(conns), tuple(m))


# ---------------------------------------------------------------------------
# ssh (banner + kex + auth, then per-subscenario behavior; slow bursts)


@_register("ssh", "login_valid", "login_wrong", "exec_commands", "scp_upload", "idle")
def _ssh(spec, sub, params, rng, duration_s):
    password = _cred(params, "password", "hunter2")
    conn = ConnectionSpec("ssh", "client", "server", port=22)
    m: list[Message] = [
        Message("ssh", "server", 21, mode="turn", gap_ms=0.5),   # server version banner
        Message("ssh", "client", 21, mode="turn", gap_ms=1.0),   # client version banner
        Message("ssh", "client", 1488, mode="turn", gap_ms=2.0),  # KEXINIT
        Message("ssh", "server", 1064, mode="turn", gap_ms=1.0),
        Message("ssh", "client", 48, mode="turn", gap_ms=1.5),    # NEWKEYS
        Message("ssh", "server", 48, mode="turn", gap_ms=0.5),
    ]
    attempts = 3 if sub.name == "login_wrong" else 1
    for i in range(attempts):
        m.append(Message("ssh", "client", 92 + len(password), mode="turn", gap_ms=30.0))
        ok = sub.name != "login_wrong"
        m.append(Message("ssh", "server", 28 if ok else 69, mode="turn", gap_ms=5.0))
    if sub.name == "exec_commands":
        think = _num(params, "think_ms", 400.0)
        for _ in range(_count(params, "count", 3, hi=30)):
            m.append(Message("ssh", "client", int(_u(rng, 60, 120)), mode="turn",
                             gap_ms=max(1.0, think * _u(rng, 0.85, 1.15))))
            for i in range(int(_u(rng, 2, 6))):
                m.append(Message("ssh", "server", int(_u(rng, 200, 1400)),
                                 mode="burst" if i else "turn", gap_ms=_u(rng, 55.0, 65.0)))
    elif sub.name == "scp_upload":
        f = _file(params, "filename", "dataToShare")
        m.append(Message("ssh", "client", 80 + len(f.name), mode="turn", gap_ms=50.0))
        m.append(Message("ssh", "server", 17, mode="turn", gap_ms=1.0))
        m.append(Message("ssh", "client", max(1, f.size), mode="turn", gap_ms=2.0))
        m.append(Message("ssh", "server", 17, mode="turn", gap_ms=1.0))
    elif sub.name == "idle":
        hold_s = min(_num(params, "hold_s", 4.0), duration_s)
        beats = max(1, int(hold_s))  # keepalive heartbeat once a second
        for _ in range(beats):
            m.append(Message("ssh", "client", 36, mode="turn", gap_ms=1000.0))
            m.append(Message("ssh", "server", 36, mode="turn", gap_ms=0.5))
    m.append(Message("ssh", "client", 44, mode="turn", gap_ms=20.0))  # disconnect
    return Dialogue((conn,), tuple(m), proc_jitter_ms=1.0)


# ---------------------------------------------------------------------------
# rtmp (1935: handshake blobs, then fixed-cadence media frames)


@_register("rtmp", "stream")
def _rtmp_stream(spec, sub, params, rng, duration_s):
    stream_s = min(_num(params, "duration_s", 6.0), duration_s)
    bitrate_kbps = max(100.0, _num(params, "bitrate_kbps", 2500.0))
    frame_bytes = max(1, int(bitrate_kbps * 1000 / 8 / 30))
    frames = max(1, min(int(stream_s * 30), 600))

    pub = ConnectionSpec("pub", "publisher", "server", port=1935)
    view = ConnectionSpec("view", "viewer", "server", port=1935)
    m: list[Message] = [
        Message("pub", "publisher", 1537, mode="turn", gap_ms=1.0),   # C0+C1
        Message("pub", "server", 3073, mode="turn", gap_ms=0.5),      # S0+S1+S2
        Message("pub", "publisher", 1536, mode="turn", gap_ms=0.5),   # C2
        Message("pub", "publisher", 300, mode="turn", gap_ms=2.0),    # connect
        Message("pub", "server", 250, mode="turn", gap_ms=0.5),
        Message("pub", "publisher", 120, mode="turn", gap_ms=2.0),    # publish
        Message("pub", "server", 60, mode="turn", gap_ms=0.5),
        Message("view", "viewer", 1537, mode="abs", at_ms=40.0),
        Message("view", "server", 3073, mode="turn", gap_ms=0.5),
        Message("view", "viewer", 1536, mode="turn", gap_ms=0.5),
        Message("view", "viewer", 180, mode="turn", gap_ms=2.0),      # play
    ]
    for i in range(frames):
        jitter = _u(rng, -3.0, 3.0)
        m.append(Message("pub", "publisher", frame_bytes, mode="burst", gap_ms=max(0.5, 33.3 + jitter)))
        m.append(Message("view", "server", frame_bytes, mode="burst", gap_ms=max(0.5, 33.3 - jitter)))
    return Dialogue((pub, view), tuple(m), proc_jitter_ms=1.0)


# ---------------------------------------------------------------------------
# wan_wget (per-chunk server think drawn fresh per message; wide handshake smear)

_WGET_GAP = (5.0, 50.0)


def _wget_conn(conn_id: str, rng: SeededRng, *, chunks: int, req_size: int,
               chunk_size: tuple[int, int] = (300, 1400), gap: tuple[float, float] = _WGET_GAP,
               fixed_gap: float | None = None, req_gap: float | None = None):
    conn = ConnectionSpec(conn_id, "client", "website", port=80)
    messages = [Message(conn_id, "client", req_size, mode="turn",
                        gap_ms=req_gap if req_gap is not None else _u(rng, *gap))]
    for i in range(chunks):
        pause = fixed_gap if fixed_gap is not None else _u(rng, *gap)
        messages.append(
            Message(conn_id, "website", int(_u(rng, *chunk_size)),
                    mode="turn" if i % 2 == 0 else "burst", gap_ms=pause)
        )
    return conn, messages


@_register("wan_wget", "fetch")
def _wget_fetch(spec, sub, params, rng, duration_s):
    path = _file(params, "path", "web_pages")
    think = max(1.0, _num(params, "think_ms", 20.0))  # pause before each request
    conns, messages = [], []
    for f in range(8):
        conn, msgs = _wget_conn(f"f{f}", rng, chunks=13, req_size=150 + len(path.name),
                                req_gap=think)
        conns.append(conn)
        messages.extend(msgs)
    return Dialogue(tuple(conns), tuple(messages), proc_jitter_ms=30.0)


@_register("wan_wget", "fetch_recursive")
def _wget_fetch_recursive(spec, sub, params, rng, duration_s):
    depth = _count(params, "depth", 1, hi=4)
    conns, messages = [], []
    for f in range(4 * depth):
        conn, msgs = _wget_conn(f"r{f}", rng, chunks=7, req_size=int(_u(rng, 140, 260)))
        conns.append(conn)
        messages.extend(msgs)
    return Dialogue(tuple(conns), tuple(messages), proc_jitter_ms=30.0)


@_register("wan_wget", "fetch_large")
def _wget_fetch_large(spec, sub, params, rng, duration_s):
    path = _file(params, "path", "large_files")
    conn = ConnectionSpec("f0", "client", "website", port=80)
    messages = [
        Message("f0", "client", 150 + len(path.name), mode="turn", gap_ms=_u(rng, *_WGET_GAP)),
        Message("f0", "website", max(1, path.size), mode="turn", gap_ms=_u(rng, *_WGET_GAP)),
    ]
    return Dialogue((conn,), tuple(messages), proc_jitter_ms=30.0)


@_register("wan_wget", "fetch_images")
def _wget_fetch_images(spec, sub, params, rng, duration_s):
    count = _count(params, "count", 4, hi=24)
    conns, messages = [], []
    for f in range(count):
        conn, msgs = _wget_conn(f"i{f}", rng, chunks=5, req_size=int(_u(rng, 150, 240)),
                                chunk_size=(600, 1400))
        conns.append(conn)
        messages.extend(msgs)
    return Dialogue(tuple(conns), tuple(messages), proc_jitter_ms=30.0)


@_register("wan_wget", "fetch_throttled")
def _wget_fetch_throttled(spec, sub, params, rng, duration_s):
    rate_kbps = max(16.0, _num(params, "rate_kbps", 256.0))
    path = _file(params, "path", "web_pages")
    # server paces chunks at the shaped rate: gap = chunk bits / rate
    chunk = 1200
    gap_ms = chunk * 8 / rate_kbps
    conn, messages = _wget_conn("t0", rng, chunks=10, req_size=150 + len(path.name),
                                chunk_size=(chunk, chunk + 1), fixed_gap=gap_ms)
    return Dialogue((conn,), tuple(messages), proc_jitter_ms=30.0)


# ---------------------------------------------------------------------------
# goldeneye (parallel keep-alive floods on many sockets)


@_register("goldeneye", "flood")
def _goldeneye_flood(spec, sub, params, rng, duration_s):
    workers = _count(params, "workers", 2, hi=8)
    sockets = _count(params, "sockets", 10, hi=30)
    flood_s = min(_num(params, "duration_s", 5.0), duration_s)
    n_conns = min(workers * sockets, 24)
    conns, messages = [], []
    for c in range(n_conns):
        conn_id = f"s{c}"
        conns.append(ConnectionSpec(conn_id, "attacker", "webserver", port=80))
        t = _u(rng, 0.0, 200.0)
        while t < flood_s * 1000.0:
            messages.append(Message(conn_id, "attacker", int(_u(rng, 400, 1400)), mode="abs", at_ms=t))
            messages.append(Message(conn_id, "webserver", int(_u(rng, 200, 600)), mode="reply", gap_ms=0.2))
            t += _u(rng, 15.0, 45.0)  # per-socket keep-alive request cycle
    return Dialogue(tuple(conns), tuple(messages), proc_jitter_ms=0.5)


# ---------------------------------------------------------------------------
# sqli (probe requests with widely spaced chunked responses)


@_register("sqli", "union_extract", "blind_boolean")
def _sqli(spec, sub, params, rng, duration_s):
    requests = _count(params, "requests", 8, hi=60)
    gap = _num(params, "gap_ms", 120.0 if sub.name == "union_extract" else 80.0)
    conn = ConnectionSpec("q", "attacker", "webapp", port=80)
    m: list[Message] = []
    for _ in range(requests):
        m.append(Message("q", "attacker", int(_u(rng, 600, 1100)), mode="turn",
                         gap_ms=max(1.0, gap * _u(rng, 0.9, 1.1))))
        if sub.name == "union_extract":
            for i in range(int(_u(rng, 3, 6))):
                m.append(Message("q", "webapp", int(_u(rng, 800, 1600)),
                                 mode="burst" if i else "turn", gap_ms=_u(rng, 90.0, 110.0)))
        else:
            m.append(Message("q", "webapp", int(_u(rng, 220, 380)), mode="turn", gap_ms=_u(rng, 90.0, 110.0)))
    return Dialogue((conn,), tuple(m), proc_jitter_ms=1.0)


def check_registry_consistency() -> None:
    """Every executable catalog entry must have a template per subscenario."""
    from .catalog import catalog

    for spec, executable in catalog():
        if executable:
            missing = [s.name for s in spec.subscenarios if not has_template(spec.name, s.name)]
            if missing:
                raise RuntimeError(f"executable scenario {spec.name} lacks templates: {missing}")
