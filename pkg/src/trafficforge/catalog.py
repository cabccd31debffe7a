"""The shipped scenario catalog: 29 interactions, benign and malicious.

Every catalog entry is a YAML file under ``data/scenarios/``; this module
loads them in canonical order and flags the subset that the simulated
backend can execute (those with registered trace templates, see
`trafficforge.templates`).  The remaining entries are metadata-only: they
describe the containers and action scripts of the interaction but carry no
behavioral model, and attempting to run them raises a clear error in the
orchestrator.

Malicious entries never embed exploit payloads — their action descriptors
name the traffic pattern (floods, probes, beacons), not attack code.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from importlib import resources

import yaml

from .scenario import ScenarioSpec, parse_scenario_text

__all__ = [
    "CATALOG_ORDER",
    "EXECUTABLE_SCENARIOS",
    "PoolFile",
    "catalog",
    "catalog_scenario",
    "load_example",
    "file_pools",
    "file_pool",
]

# Canonical catalog order: benign entries first, then malicious.
CATALOG_ORDER: tuple[str, ...] = (
    "ping",
    "nginx",
    "apache",
    "ssh",
    "vsftpd",
    "scrapy",
    "wordpress",
    "syncthing",
    "mailx",
    "irc",
    "bittorrent",
    "sql",
    "ntp",
    "mopidy",
    "rtmp",
    "wan_wget",
    "dns",
    "ssh_bruteforce",
    "url_fuzz",
    "basic_bruteforce",
    "goldeneye",
    "slowhttptest",
    "mirai",
    "heartbleed",
    "ares",
    "cryptojacking",
    "xxe",
    "sqli",
    "stepstone",
)

# Scenarios the simulated backend can run: every subscenario of each entry
# here has a trace template registered in trafficforge.templates.  The set
# spans the major traffic shapes: HTTP, FTP, SSH, streaming, DoS, injection.
EXECUTABLE_SCENARIOS: frozenset[str] = frozenset(
    {"ping", "nginx", "vsftpd", "ssh", "rtmp", "wan_wget", "goldeneye", "sqli"}
)


@dataclass(frozen=True)
class PoolFile:
    """One entry of a named file pool: a file name and its size in bytes."""

    name: str
    size: int


def _data_text(relative: str) -> str:
    return resources.files("trafficforge").joinpath("data").joinpath(relative).read_text(encoding="utf-8")


@functools.lru_cache(maxsize=1)
def _catalog_entries() -> tuple[tuple[ScenarioSpec, bool], ...]:
    entries = []
    for name in CATALOG_ORDER:
        source = f"data/scenarios/{name}.yaml"
        spec = parse_scenario_text(_data_text(f"scenarios/{name}.yaml"), source=source)
        if spec.name != name:
            raise RuntimeError(f"{source}: scenario is named {spec.name!r}, expected {name!r}")
        entries.append((spec, name in EXECUTABLE_SCENARIOS))
    return tuple(entries)


def catalog() -> list[tuple[ScenarioSpec, bool]]:
    """All 29 shipped scenarios with their executable flag, in canonical order."""
    return list(_catalog_entries())


def catalog_scenario(name: str) -> ScenarioSpec:
    """Look up one shipped scenario by name."""
    for spec, _ in _catalog_entries():
        if spec.name == name:
            return spec
    raise KeyError(f"unknown scenario {name!r}; available: {', '.join(CATALOG_ORDER)}")


def load_example(filename: str) -> ScenarioSpec:
    """Parse one of the shipped example scenario files (``data/examples/``)."""
    return parse_scenario_text(_data_text(f"examples/{filename}"), source=f"data/examples/{filename}")


@functools.lru_cache(maxsize=1)
def file_pools() -> dict[str, tuple[PoolFile, ...]]:
    """The named file pools backing ``file_pool`` parameters (simulated backend)."""
    raw = yaml.safe_load(_data_text("filepool.yaml"))
    pools: dict[str, tuple[PoolFile, ...]] = {}
    for pool_name, entries in raw["pools"].items():
        pools[pool_name] = tuple(PoolFile(name=e["name"], size=int(e["size"])) for e in entries or ())
    return pools


def file_pool(directory: str) -> tuple[PoolFile, ...]:
    """Resolve one named pool; raises KeyError with the known names on miss."""
    pools = file_pools()
    try:
        return pools[directory]
    except KeyError:
        raise KeyError(f"unknown file pool {directory!r}; available: {', '.join(sorted(pools))}") from None
