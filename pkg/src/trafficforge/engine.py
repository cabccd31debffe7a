"""Container-engine backend: the real-network counterpart of SimulatedBackend.

Speaks the engine's versioned HTTP API (v1.41) over a local Unix socket via
httpx.  Every lifecycle step maps onto one or two API calls:

* create_network   -> POST /networks/create (bridge + static IPAM)
* launch_container -> POST /containers/create + /containers/{id}/start
* attach_capture   -> a tcpdump sidecar sharing the target's network namespace
* apply_profile    -> privileged exec of the rendered ``tc qdisc`` commands
* exec_actions     -> one exec per scenario action, placeholders substituted
* read_capture     -> GET /containers/{id}/archive on the sidecar's pcap
* stop_all / destroy_network -> stop + force-remove, then network delete

The socket path comes from ``TRAFFICFORGE_ENGINE_SOCKET`` (default
``/var/run/docker.sock``).  Tests inject an ``httpx.MockTransport`` so the
suite never needs an engine installed.

Scenario YAML in the malicious catalog describes traffic shape only and ships
no payloads; running that subset against this backend additionally requires
the orchestrator's explicit ``allow_malicious`` opt-in.
"""

from __future__ import annotations

import io
import json
import os
import tarfile
import tempfile
import time
from pathlib import Path
from typing import Mapping

import httpx

from .capture import PacketRecord, read_pcap
from .catalog import PoolFile
from .netem_table import make_netem_table, netem_table_bytes
from .orchestrator import ActionError, ExecutionBackend, OrchestratorError
from .scenario import ScenarioSpec, SubscenarioSpec, action_command, action_role
from .shaper import NetemProfile, render_tc_commands

# Delay families whose quantile table stock netem does not ship; the table is
# generated locally and pushed into the container before `tc` references it.
_NONSTOCK_TABLES = frozenset({"weibull"})

__all__ = ["EngineError", "EngineBackend", "ENGINE_SOCKET_ENV", "DEFAULT_ENGINE_SOCKET"]

ENGINE_SOCKET_ENV = "TRAFFICFORGE_ENGINE_SOCKET"
DEFAULT_ENGINE_SOCKET = "/var/run/docker.sock"
_API = "/v1.41"

# Network-tools image used for capture sidecars; it only needs tcpdump.
DEFAULT_SIDECAR_IMAGE = "nicolaka/netshoot:latest"


class EngineError(OrchestratorError):
    """The engine API refused or failed a request."""


class EngineBackend(ExecutionBackend):
    """ExecutionBackend against a live container engine."""

    is_real = True

    def __init__(
        self,
        socket_path: str | None = None,
        *,
        sidecar_image: str = DEFAULT_SIDECAR_IMAGE,
        transport: httpx.BaseTransport | None = None,
        timeout_s: float = 60.0,
    ):
        self.socket_path = socket_path or os.environ.get(ENGINE_SOCKET_ENV, DEFAULT_ENGINE_SOCKET)
        self.sidecar_image = sidecar_image
        if transport is None:
            transport = httpx.HTTPTransport(uds=self.socket_path)
        self._http = httpx.Client(transport=transport, base_url="http://engine",
                                  timeout=httpx.Timeout(timeout_s))
        # run_id -> {"network": id, "containers": {role: id}, "sidecars": {role: id}}
        self._runs: dict[str, dict] = {}

    # -- plumbing ------------------------------------------------------------

    def _request(self, method: str, path: str, *, ok=(200, 201, 204), **kwargs) -> httpx.Response:
        try:
            response = self._http.request(method, _API + path, **kwargs)
        except httpx.HTTPError as exc:
            raise EngineError(f"engine unreachable at {self.socket_path}: {exc}") from exc
        if response.status_code not in ok:
            detail = response.text.strip()
            raise EngineError(f"{method} {path} -> {response.status_code}: {detail[:300]}")
        return response

    def ping(self) -> bool:
        return self._request("GET", "/_ping").text.strip() == "OK"

    def close(self) -> None:
        self._http.close()

    def _exec(self, container_id: str, cmd: list[str], *, privileged: bool = False) -> int:
        created = self._request(
            "POST", f"/containers/{container_id}/exec",
            json={"AttachStdout": True, "AttachStderr": True, "Cmd": cmd, "Privileged": privileged},
        ).json()
        exec_id = created["Id"]
        self._request("POST", f"/exec/{exec_id}/start", json={"Detach": False, "Tty": False})
        state = self._request("GET", f"/exec/{exec_id}/json").json()
        return int(state.get("ExitCode") or 0)

    def _run_state(self, run_id: str) -> dict:
        try:
            return self._runs[run_id]
        except KeyError:
            raise EngineError(f"unknown run {run_id!r} (network never created?)") from None

    # -- lifecycle -----------------------------------------------------------

    def create_network(self, run_id: str, scenario: ScenarioSpec, subnet: str | None = None) -> None:
        net = scenario.network
        use_subnet = subnet or net.subnet
        gateway = net.gateway if subnet is None else None
        ipam_config: dict = {"Subnet": use_subnet}
        if gateway:
            ipam_config["Gateway"] = gateway
        body = {
            "Name": f"{net.bridge_name}-{run_id}"[:63],
            "Driver": "bridge",
            "CheckDuplicate": True,
            "IPAM": {"Driver": "default", "Config": [ipam_config]},
        }
        network_id = self._request("POST", "/networks/create", json=body).json()["Id"]
        self._runs[run_id] = {"network": network_id, "network_name": body["Name"],
                              "containers": {}, "sidecars": {}, "subnet_override": subnet}

    def launch_container(self, run_id: str, scenario: ScenarioSpec, role: str) -> None:
        state = self._run_state(run_id)
        container = scenario.container(role)
        endpoint: dict = {"NetworkID": state["network"]}
        if container.fixed_ip and state["subnet_override"] is None:
            endpoint["IPAMConfig"] = {"IPv4Address": container.fixed_ip}
        body = {
            "Image": container.image,
            "HostConfig": {
                "NetworkMode": state["network_name"],
                "Binds": [f"{v.source}:{v.target}" for v in container.volumes] or None,
            },
            "NetworkingConfig": {"EndpointsConfig": {state["network_name"]: endpoint}},
        }
        name = f"tf-{run_id}-{role}"[:63]
        container_id = self._request("POST", f"/containers/create?name={name}", json=body).json()["Id"]
        self._request("POST", f"/containers/{container_id}/start")
        state["containers"][role] = container_id

    def attach_capture(self, run_id: str, role: str, capture_filter: str | None = None) -> None:
        """One tcpdump sidecar per captured interface, sharing the target netns.

        The sidecar is created immediately but can only start once the target
        container exists, so startup is deferred to exec_actions.
        """
        state = self._run_state(run_id)
        cmd = ["tcpdump", "-i", "eth0", "-U", "-w", f"/tmp/{role}.pcap"]
        if capture_filter:
            cmd.extend(capture_filter.split())
        state["sidecars"][role] = {"cmd": cmd, "id": None}

    def _start_sidecars(self, run_id: str) -> None:
        state = self._run_state(run_id)
        for role, sidecar in state["sidecars"].items():
            if sidecar["id"] is not None:
                continue
            target = state["containers"].get(role)
            if target is None:
                raise ActionError(f"capture role {role!r} has no running container")
            body = {
                "Image": self.sidecar_image,
                "Cmd": sidecar["cmd"],
                "HostConfig": {"NetworkMode": f"container:{target}"},
            }
            name = f"tf-{run_id}-cap-{role}"[:63]
            sidecar_id = self._request("POST", f"/containers/create?name={name}", json=body).json()["Id"]
            self._request("POST", f"/containers/{sidecar_id}/start")
            sidecar["id"] = sidecar_id

    def _put_file(self, container_id: str, directory: str, filename: str, data: bytes) -> None:
        buffer = io.BytesIO()
        with tarfile.open(fileobj=buffer, mode="w") as tar:
            info = tarfile.TarInfo(name=filename)
            info.size = len(data)
            tar.addfile(info, io.BytesIO(data))
        self._request(
            "PUT", f"/containers/{container_id}/archive",
            params={"path": directory},
            content=buffer.getvalue(),
            headers={"Content-Type": "application/x-tar"},
        )

    def apply_profile(self, run_id: str, role: str, profile: NetemProfile) -> None:
        state = self._run_state(run_id)
        container_id = state["containers"].get(role)
        if container_id is None:
            raise EngineError(f"cannot shape {role!r}: container not launched")
        delay = profile.delay
        if delay is not None and delay.family in _NONSTOCK_TABLES:
            table = netem_table_bytes(make_netem_table(delay))
            self._put_file(container_id, "/usr/lib/tc", f"{delay.family}.dist", table)
        for command in render_tc_commands(profile, "eth0"):
            code = self._exec(container_id, command.split(), privileged=True)
            if code != 0:
                raise EngineError(f"tc failed on {role!r} (exit {code}): {command}")

    def exec_actions(
        self,
        run_id: str,
        scenario: ScenarioSpec,
        sub: SubscenarioSpec,
        params: Mapping[str, object],
        rng,
        duration_s: float,
        base_us: int,
    ) -> None:
        state = self._run_state(run_id)
        self._start_sidecars(run_id)
        rendered = {k: (v.name if isinstance(v, PoolFile) else v) for k, v in params.items()}
        started = time.monotonic()
        for action in sub.actions:
            role = action_role(action)
            container_id = state["containers"].get(role)
            if container_id is None:
                raise ActionError(f"action role {role!r} has no running container")
            command = action_command(action).format(**rendered)
            code = self._exec(container_id, ["sh", "-c", command])
            if code != 0:
                raise ActionError(f"action on {role!r} exited {code}: {command}")
        remaining = duration_s - (time.monotonic() - started)
        if remaining > 0:
            time.sleep(remaining)

    def read_capture(self, run_id: str, role: str) -> list[PacketRecord]:
        state = self._run_state(run_id)
        sidecar = state["sidecars"].get(role)
        if sidecar is None or sidecar["id"] is None:
            raise EngineError(f"no capture sidecar for role {role!r}")
        # flush by stopping the sidecar, then pull the pcap out of the archive
        self._request("POST", f"/containers/{sidecar['id']}/stop?t=2", ok=(204, 304))
        response = self._request("GET", f"/containers/{sidecar['id']}/archive",
                                 params={"path": f"/tmp/{role}.pcap"})
        with tarfile.open(fileobj=io.BytesIO(response.content)) as tar:
            member = next(m for m in tar.getmembers() if m.isfile())
            data = tar.extractfile(member).read()
        with tempfile.NamedTemporaryFile(suffix=".pcap", delete=False) as handle:
            handle.write(data)
            temp_path = Path(handle.name)
        try:
            # artifacts keep the wire bytes verbatim; payload stripping is a
            # read-time choice for analysis, not a capture-time one
            return read_pcap(temp_path, keep_payload=True)
        finally:
            temp_path.unlink(missing_ok=True)

    def stop_all(self, run_id: str) -> None:
        state = self._runs.get(run_id)
        if state is None:
            return
        ids = [s["id"] for s in state["sidecars"].values() if s["id"]]
        ids += list(state["containers"].values())
        errors = []
        for container_id in ids:
            try:
                self._request("POST", f"/containers/{container_id}/stop?t=2", ok=(204, 304, 404))
                self._request("DELETE", f"/containers/{container_id}?force=true", ok=(204, 404))
            except EngineError as exc:
                errors.append(str(exc))
        state["containers"].clear()
        state["sidecars"].clear()
        if errors:
            raise EngineError("teardown left containers behind: " + "; ".join(errors))

    def destroy_network(self, run_id: str) -> None:
        state = self._runs.pop(run_id, None)
        if state is None:
            return
        self._request("DELETE", f"/networks/{state['network']}", ok=(204, 404))

    # -- introspection -------------------------------------------------------

    def live_networks(self) -> list[str]:
        return sorted(self._runs)

    def live_containers(self) -> list[tuple[str, str]]:
        return sorted(
            (run_id, role)
            for run_id, state in self._runs.items()
            for role in state["containers"]
        )
