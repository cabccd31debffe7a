"""Scenario and subscenario model: declarative descriptions of container interactions.

A scenario file is a YAML document describing the containers taking part in one
scripted interaction, the private bridge network they share, and the list of
subscenarios (variants of the interaction) that can be captured.  The schema is
documented in the README; `parse_scenario_file` is the only entry point that
touches the filesystem, everything else works on in-memory values.

Specs are frozen dataclasses and may be shared freely across threads once
parsed.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .randomness import DEFAULT_CREDENTIAL_LENGTH_DIST, DistributionSpec

__all__ = [
    "ScenarioError",
    "ScenarioParseError",
    "ScenarioValidationError",
    "ParameterSpec",
    "SubscenarioSpec",
    "SharedVolumeSpec",
    "ContainerRole",
    "NetworkSpec",
    "ScenarioSpec",
    "action_role",
    "action_command",
    "action_placeholders",
    "parse_scenario_text",
    "parse_scenario_file",
    "serialize_scenario",
    "validate",
]

_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

KINDS = ("benign", "malicious")
PARAMETER_SOURCES = ("distribution", "file_pool", "credential")
SELECTION_RULES = ("uniform",)

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"


class ScenarioError(ValueError):
    """Base class for scenario file problems."""


class ScenarioParseError(ScenarioError):
    """The file is malformed: wrong structure, missing or unknown fields."""


class ScenarioValidationError(ScenarioError):
    """The file parsed but violates a model invariant."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class ParameterSpec:
    """A randomized input slot referenced from action templates as ``{name}``.

    Exactly one of the three sources applies:

    * ``distribution`` — numeric draw described by `distribution`
    * ``file_pool`` — a file picked from the named pool `directory`
    * ``credential`` — a random string over `alphabet` with `length`-distributed size
    """

    name: str
    source: str
    distribution: DistributionSpec | None = None
    directory: str | None = None
    selection: str = "uniform"
    alphabet: str = DEFAULT_ALPHABET
    length: DistributionSpec | None = None

    def length_distribution(self) -> DistributionSpec:
        return self.length if self.length is not None else DEFAULT_CREDENTIAL_LENGTH_DIST


@dataclass(frozen=True)
class SubscenarioSpec:
    """One variant of the interaction: an ordered action script plus its inputs."""

    name: str
    actions: tuple[str, ...] = ()
    parameters: tuple[ParameterSpec, ...] = ()


@dataclass(frozen=True)
class SharedVolumeSpec:
    """A named volume (or host directory) mounted into a container."""

    source: str
    target: str


@dataclass(frozen=True)
class ContainerRole:
    """One container taking part in the scenario.

    `image` is a registry reference for the real engine backend; the simulated
    backend ignores it and resolves behavior from (scenario, subscenario)
    trace templates instead.
    """

    role: str
    image: str
    is_primary: bool = False
    startup_order: int = 0
    fixed_ip: str | None = None
    volumes: tuple[SharedVolumeSpec, ...] = ()


@dataclass(frozen=True)
class NetworkSpec:
    """The private bridge network the containers are attached to."""

    subnet: str
    gateway: str
    bridge_name: str


@dataclass(frozen=True)
class ScenarioSpec:
    """A complete scripted interaction; immutable once constructed."""

    name: str
    description: str
    kind: str
    containers: tuple[ContainerRole, ...]
    network: NetworkSpec
    subscenarios: tuple[SubscenarioSpec, ...]
    capture: tuple[str, ...] | None = None

    def capture_roles(self) -> tuple[str, ...]:
        """Roles whose interfaces are captured (defaults to every container)."""
        if self.capture is None:
            return tuple(c.role for c in self.containers)
        return self.capture

    def subscenario(self, name: str) -> SubscenarioSpec:
        for sub in self.subscenarios:
            if sub.name == name:
                return sub
        raise KeyError(f"scenario {self.name!r} has no subscenario {name!r}")

    def container(self, role: str) -> ContainerRole:
        for c in self.containers:
            if c.role == role:
                return c
        raise KeyError(f"scenario {self.name!r} has no container role {role!r}")


# ---------------------------------------------------------------------------
# action descriptor helpers
#
# An action descriptor is a string "role: command template"; the command part
# is opaque to the model and only interpreted by the orchestrator.  Placeholders
# are written {name} and bound by the subscenario's parameters.


def action_role(action: str) -> str:
    role, _, _ = action.partition(":")
    return role.strip()


def action_command(action: str) -> str:
    _, _, command = action.partition(":")
    return command.strip()


def action_placeholders(action: str) -> tuple[str, ...]:
    return tuple(_PLACEHOLDER.findall(action_command(action)))


# ---------------------------------------------------------------------------
# parsing


def _require_mapping(value: Any, where: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioParseError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def _require_list(value: Any, where: str) -> list:
    if not isinstance(value, list):
        raise ScenarioParseError(f"{where}: expected a list, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: set[str], required: set[str], where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ScenarioParseError(f"{where}: unknown field {key!r}")
    for key in required:
        if key not in mapping:
            raise ScenarioParseError(f"{where}: missing required field {key!r}")


def _get_str(mapping: dict, key: str, where: str) -> str:
    value = mapping[key]
    if not isinstance(value, str):
        raise ScenarioParseError(f"{where}.{key}: expected a string, got {type(value).__name__}")
    return value


def _get_number(mapping: dict, key: str, where: str) -> float:
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"{where}.{key}: expected a number, got {type(value).__name__}")
    return float(value)


def _parse_distribution(raw: Any, where: str) -> DistributionSpec:
    mapping = _require_mapping(raw, where)
    _check_keys(mapping, {"family", "mean", "jitter", "shape"}, {"family", "mean"}, where)
    family = _get_str(mapping, "family", where)
    mean = _get_number(mapping, "mean", where)
    jitter = _get_number(mapping, "jitter", where) if "jitter" in mapping else 0.0
    shape = _get_number(mapping, "shape", where) if "shape" in mapping else None
    return DistributionSpec(family=family, mean=mean, jitter=jitter, shape=shape)


def _parse_parameter(raw: Any, where: str) -> ParameterSpec:
    mapping = _require_mapping(raw, where)
    _check_keys(
        mapping,
        {"name", "source", "family", "mean", "jitter", "shape", "directory", "selection", "alphabet", "length"},
        {"name", "source"},
        where,
    )
    name = _get_str(mapping, "name", where)
    source = _get_str(mapping, "source", where)

    distribution = None
    directory = None
    selection = "uniform"
    alphabet = DEFAULT_ALPHABET
    length = None

    if source == "distribution":
        for key in ("directory", "selection", "alphabet", "length"):
            if key in mapping:
                raise ScenarioParseError(f"{where}.{key}: not allowed for source 'distribution'")
        if "family" not in mapping or "mean" not in mapping:
            raise ScenarioParseError(f"{where}: source 'distribution' requires 'family' and 'mean'")
        distribution = _parse_distribution(
            {k: mapping[k] for k in ("family", "mean", "jitter", "shape") if k in mapping}, where
        )
    elif source == "file_pool":
        for key in ("family", "mean", "jitter", "shape", "alphabet", "length"):
            if key in mapping:
                raise ScenarioParseError(f"{where}.{key}: not allowed for source 'file_pool'")
        if "directory" not in mapping:
            raise ScenarioParseError(f"{where}: source 'file_pool' requires 'directory'")
        directory = _get_str(mapping, "directory", where)
        if "selection" in mapping:
            selection = _get_str(mapping, "selection", where)
    elif source == "credential":
        for key in ("family", "mean", "jitter", "shape", "directory", "selection"):
            if key in mapping:
                raise ScenarioParseError(f"{where}.{key}: not allowed for source 'credential'")
        if "alphabet" in mapping:
            alphabet = _get_str(mapping, "alphabet", where)
        if "length" in mapping:
            length = _parse_distribution(mapping["length"], f"{where}.length")
    # unknown sources survive parsing and are reported by validate()

    return ParameterSpec(
        name=name,
        source=source,
        distribution=distribution,
        directory=directory,
        selection=selection,
        alphabet=alphabet,
        length=length,
    )


def _parse_subscenario(raw: Any, where: str) -> SubscenarioSpec:
    mapping = _require_mapping(raw, where)
    _check_keys(mapping, {"name", "actions", "parameters"}, {"name"}, where)
    name = _get_str(mapping, "name", where)

    actions: list[str] = []
    if "actions" in mapping:
        for i, action in enumerate(_require_list(mapping["actions"], f"{where}.actions")):
            if not isinstance(action, str):
                raise ScenarioParseError(
                    f"{where}.actions[{i}]: expected a 'role: command' string, got {type(action).__name__}"
                )
            if ":" not in action or not action.split(":", 1)[0].strip():
                raise ScenarioParseError(f"{where}.actions[{i}]: missing 'role:' prefix in {action!r}")
            actions.append(action)

    parameters: list[ParameterSpec] = []
    if "parameters" in mapping:
        for i, raw_param in enumerate(_require_list(mapping["parameters"], f"{where}.parameters")):
            parameters.append(_parse_parameter(raw_param, f"{where}.parameters[{i}]"))

    return SubscenarioSpec(name=name, actions=tuple(actions), parameters=tuple(parameters))


def _parse_volume(raw: Any, where: str) -> SharedVolumeSpec:
    mapping = _require_mapping(raw, where)
    _check_keys(mapping, {"source", "target"}, {"source", "target"}, where)
    return SharedVolumeSpec(source=_get_str(mapping, "source", where), target=_get_str(mapping, "target", where))


def _parse_container(raw: Any, where: str) -> ContainerRole:
    mapping = _require_mapping(raw, where)
    _check_keys(
        mapping,
        {"role", "image", "primary", "startup_order", "fixed_ip", "volumes"},
        {"role", "image"},
        where,
    )
    role = _get_str(mapping, "role", where)
    image = _get_str(mapping, "image", where)
    is_primary = False
    if "primary" in mapping:
        if not isinstance(mapping["primary"], bool):
            raise ScenarioParseError(f"{where}.primary: expected a boolean")
        is_primary = mapping["primary"]
    startup_order = 0
    if "startup_order" in mapping:
        value = mapping["startup_order"]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioParseError(f"{where}.startup_order: expected an integer")
        startup_order = value
    fixed_ip = _get_str(mapping, "fixed_ip", where) if "fixed_ip" in mapping else None
    volumes: list[SharedVolumeSpec] = []
    if "volumes" in mapping:
        for i, raw_volume in enumerate(_require_list(mapping["volumes"], f"{where}.volumes")):
            volumes.append(_parse_volume(raw_volume, f"{where}.volumes[{i}]"))
    return ContainerRole(
        role=role,
        image=image,
        is_primary=is_primary,
        startup_order=startup_order,
        fixed_ip=fixed_ip,
        volumes=tuple(volumes),
    )


def _parse_network(raw: Any, where: str) -> NetworkSpec:
    mapping = _require_mapping(raw, where)
    _check_keys(mapping, {"subnet", "gateway", "bridge"}, {"subnet", "gateway", "bridge"}, where)
    return NetworkSpec(
        subnet=_get_str(mapping, "subnet", where),
        gateway=_get_str(mapping, "gateway", where),
        bridge_name=_get_str(mapping, "bridge", where),
    )


def parse_scenario_text(text: str, source: str = "<string>") -> ScenarioSpec:
    """Parse and validate a scenario document from a YAML string.

    Raises ScenarioParseError for structural problems (each message names the
    offending field) and ScenarioValidationError when a model invariant fails.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"{source}: invalid YAML: {exc}") from exc

    mapping = _require_mapping(raw, source)
    _check_keys(
        mapping,
        {"name", "description", "kind", "network", "containers", "subscenarios", "capture"},
        {"name", "description", "kind", "network", "containers", "subscenarios"},
        source,
    )

    containers = tuple(
        _parse_container(raw_container, f"containers[{i}]")
        for i, raw_container in enumerate(_require_list(mapping["containers"], "containers"))
    )
    subscenarios = tuple(
        _parse_subscenario(raw_sub, f"subscenarios[{i}]")
        for i, raw_sub in enumerate(_require_list(mapping["subscenarios"], "subscenarios"))
    )
    capture: tuple[str, ...] | None = None
    if "capture" in mapping:
        capture_list = _require_list(mapping["capture"], "capture")
        for i, role in enumerate(capture_list):
            if not isinstance(role, str):
                raise ScenarioParseError(f"capture[{i}]: expected a role name string")
        capture = tuple(capture_list)

    spec = ScenarioSpec(
        name=_get_str(mapping, "name", source),
        description=_get_str(mapping, "description", source),
        kind=_get_str(mapping, "kind", source),
        containers=containers,
        network=_parse_network(mapping["network"], "network"),
        subscenarios=subscenarios,
        capture=capture,
    )

    violations = validate(spec)
    if violations:
        raise ScenarioValidationError(violations)
    return spec


def parse_scenario_file(path: str | Path) -> ScenarioSpec:
    """Parse and validate one scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_scenario_text(text, source=str(path))


# ---------------------------------------------------------------------------
# validation


def _check_identifier(value: str, where: str, violations: list[str]) -> None:
    if not _IDENTIFIER.match(value):
        violations.append(f"{where}: {value!r} is not a valid identifier")


def validate(spec: ScenarioSpec) -> list[str]:
    """Check every model invariant; returns [] iff the spec is well-formed.

    Violations are human-readable strings, each naming the offending field.
    """
    violations: list[str] = []

    _check_identifier(spec.name, "name", violations)
    if spec.kind not in KINDS:
        violations.append(f"kind: {spec.kind!r} is not one of {', '.join(KINDS)}")

    # --- containers
    if not spec.containers:
        violations.append("containers: at least one container is required")
    roles: list[str] = []
    orders: list[int] = []
    fixed_ips: list[tuple[str, str]] = []
    for i, container in enumerate(spec.containers):
        where = f"containers[{i}]"
        _check_identifier(container.role, f"{where}.role", violations)
        if container.role in roles:
            violations.append(f"{where}.role: duplicate container role {container.role!r}")
        roles.append(container.role)
        if container.startup_order < 0:
            violations.append(f"{where}.startup_order: must be >= 0, got {container.startup_order}")
        if container.startup_order in orders:
            violations.append(
                f"{where}.startup_order: duplicate startup order {container.startup_order} "
                "(launch order must be total)"
            )
        orders.append(container.startup_order)
        if container.fixed_ip is not None:
            fixed_ips.append((f"{where}.fixed_ip", container.fixed_ip))
    if spec.containers and not any(c.is_primary for c in spec.containers):
        violations.append("containers: at least one container must be marked primary")

    # --- network
    network_ok = False
    try:
        subnet = ipaddress.ip_network(spec.network.subnet)
        network_ok = True
    except ValueError as exc:
        violations.append(f"network.subnet: {exc}")
    _check_identifier(spec.network.bridge_name, "network.bridge", violations)
    if network_ok:
        try:
            gateway = ipaddress.ip_address(spec.network.gateway)
            if gateway not in subnet:
                violations.append(f"network.gateway: {spec.network.gateway} is outside subnet {spec.network.subnet}")
        except ValueError as exc:
            violations.append(f"network.gateway: {exc}")
    seen_ips: set[str] = set()
    for where, ip_text in fixed_ips:
        try:
            address = ipaddress.ip_address(ip_text)
        except ValueError as exc:
            violations.append(f"{where}: {exc}")
            continue
        if network_ok and address not in subnet:
            violations.append(f"{where}: {ip_text} is outside subnet {spec.network.subnet}")
        if ip_text == spec.network.gateway:
            violations.append(f"{where}: {ip_text} collides with the gateway address")
        if ip_text in seen_ips:
            violations.append(f"{where}: duplicate fixed ip {ip_text}")
        seen_ips.add(ip_text)

    # --- subscenarios
    if not spec.subscenarios:
        violations.append("subscenarios: at least one subscenario is required")
    seen_subs: set[str] = set()
    for i, sub in enumerate(spec.subscenarios):
        where = f"subscenarios[{i}]"
        _check_identifier(sub.name, f"{where}.name", violations)
        if sub.name in seen_subs:
            violations.append(f"{where}.name: duplicate subscenario name {sub.name!r}")
        seen_subs.add(sub.name)

        param_names: list[str] = []
        for j, param in enumerate(sub.parameters):
            param_where = f"{where}.parameters[{j}]"
            _check_identifier(param.name, f"{param_where}.name", violations)
            if param.name in param_names:
                violations.append(f"{param_where}.name: duplicate parameter name {param.name!r}")
            param_names.append(param.name)
            if param.source not in PARAMETER_SOURCES:
                violations.append(
                    f"{param_where}.source: {param.source!r} is not one of {', '.join(PARAMETER_SOURCES)}"
                )
                continue
            if param.source == "distribution":
                if param.distribution is None:
                    violations.append(f"{param_where}: source 'distribution' requires distribution fields")
                else:
                    for problem in param.distribution.validate():
                        violations.append(f"{param_where}: {problem}")
            elif param.source == "file_pool":
                if not param.directory:
                    violations.append(f"{param_where}.directory: required for source 'file_pool'")
                if param.selection not in SELECTION_RULES:
                    violations.append(
                        f"{param_where}.selection: {param.selection!r} is not one of {', '.join(SELECTION_RULES)}"
                    )
            elif param.source == "credential":
                if not param.alphabet:
                    violations.append(f"{param_where}.alphabet: must not be empty")
                if param.length is not None:
                    for problem in param.length.validate():
                        violations.append(f"{param_where}.length: {problem}")

        bound = set(param_names)
        for k, action in enumerate(sub.actions):
            action_where = f"{where}.actions[{k}]"
            role = action_role(action)
            if role not in roles:
                violations.append(f"{action_where}: references undefined container role {role!r}")
            for placeholder in action_placeholders(action):
                if placeholder not in bound:
                    violations.append(f"{action_where}: placeholder '{{{placeholder}}}' is not bound by any parameter")

    # --- capture list
    if spec.capture is not None:
        if not spec.capture:
            violations.append("capture: when present, must name at least one role")
        for i, role in enumerate(spec.capture):
            if role not in roles:
                violations.append(f"capture[{i}]: references undefined container role {role!r}")
            if role in spec.capture[:i]:
                violations.append(f"capture[{i}]: duplicate role {role!r}")

    return violations


# ---------------------------------------------------------------------------
# serialization


def _distribution_to_plain(dist: DistributionSpec) -> dict:
    plain: dict[str, Any] = {"family": dist.family, "mean": dist.mean}
    if dist.jitter != 0.0:
        plain["jitter"] = dist.jitter
    if dist.shape is not None:
        plain["shape"] = dist.shape
    return plain


def _parameter_to_plain(param: ParameterSpec) -> dict:
    plain: dict[str, Any] = {"name": param.name, "source": param.source}
    if param.source == "distribution" and param.distribution is not None:
        plain.update(_distribution_to_plain(param.distribution))
    elif param.source == "file_pool":
        plain["directory"] = param.directory
        if param.selection != "uniform":
            plain["selection"] = param.selection
    elif param.source == "credential":
        if param.alphabet != DEFAULT_ALPHABET:
            plain["alphabet"] = param.alphabet
        if param.length is not None:
            plain["length"] = _distribution_to_plain(param.length)
    return plain


def serialize_scenario(spec: ScenarioSpec) -> str:
    """Render a spec back to YAML; parse(serialize(spec)) == spec."""
    containers = []
    for container in spec.containers:
        plain: dict[str, Any] = {"role": container.role, "image": container.image}
        if container.is_primary:
            plain["primary"] = True
        if container.startup_order != 0:
            plain["startup_order"] = container.startup_order
        if container.fixed_ip is not None:
            plain["fixed_ip"] = container.fixed_ip
        if container.volumes:
            plain["volumes"] = [{"source": v.source, "target": v.target} for v in container.volumes]
        containers.append(plain)

    subscenarios = []
    for sub in spec.subscenarios:
        plain = {"name": sub.name}
        if sub.actions:
            plain["actions"] = list(sub.actions)
        if sub.parameters:
            plain["parameters"] = [_parameter_to_plain(p) for p in sub.parameters]
        subscenarios.append(plain)

    document: dict[str, Any] = {
        "name": spec.name,
        "description": spec.description,
        "kind": spec.kind,
        "network": {
            "subnet": spec.network.subnet,
            "gateway": spec.network.gateway,
            "bridge": spec.network.bridge_name,
        },
        "containers": containers,
    }
    if spec.capture is not None:
        document["capture"] = list(spec.capture)
    document["subscenarios"] = subscenarios

    return yaml.safe_dump(document, sort_keys=False, default_flow_style=False, width=100)
