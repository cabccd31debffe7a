"""Command-line entry point wiring every module into the standard workflows.

Subcommands
-----------

* ``catalog``        — list the shipped scenarios and their subscenarios.
* ``run``            — execute one subscenario, emitting tagged pcap artifacts.
* ``chunk``          — execute a YAML chunk plan of concurrent runs.
* ``coalesce``       — merge + stitch an artifact directory into one dataset.
* ``validate-repro`` — pairwise K-S reproducibility report over artifacts.
* ``fit-delays``     — grid-search delay profiles against a reference pcap.
* ``classify``       — per-scenario precision/recall curves, train vs test dirs.

Seeds are mandatory for every generating subcommand — reproducibility is the
default, never an option — and identical flags plus an identical seed
reproduce byte-identical outputs on the simulated backend.  Reports land as
CSV/PNG pairs under the output directory; no subcommand ever rewrites its
input artifacts.

Exit codes: 0 success, 1 usage problem, 2 runtime failure (one-line diagnosis
on stderr either way).

Chunk plan files are YAML::

    chunk_duration_s: 60
    max_workers: 4
    runs:
      - scenario: vsftpd          # catalog name
        subscenario: get_valid
        seed: 7
        duration_s: 20            # optional, default 30
        repetitions: 1            # optional
        subnet: 10.40.0.0/24      # optional override for concurrency
        shaped_role: client       # optional, default: primary container
        delay: {family: normal, mean_ms: 50, jitter_ms: 5}   # optional
        loss_pct: 0.5             # optional
        corrupt_pct: 0            # optional
        capture_filter: tcp       # optional
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .capture import extract_flows, read_pcap
from .catalog import CATALOG_ORDER, catalog, catalog_scenario
from .coalescer import (
    CoalesceError,
    merge_chunk,
    stitch_chunks,
    validate_manifest,
    write_dataset,
)
from .engine import ENGINE_SOCKET_ENV, EngineBackend
from .learn import (
    LabeledDataset,
    LearnError,
    classification_curves,
    distinguishability,
    iat_vector_rows,
    packet_feature_rows,
)
from .orchestrator import (
    ChunkPlan,
    ExecutionBackend,
    OrchestratorError,
    RunPlan,
    SimulatedBackend,
    execute_scenario,
    read_artifact_metadata,
    run_chunk,
)
from .randomness import FAMILIES, DistributionSpec, SeededRng, child_seed
from .report import (
    DelayFitRow,
    write_classification_report,
    write_delay_fit_report,
    write_reproducibility_report,
)
from .scenario import ScenarioSpec
from .shaper import (
    GRID_FAMILIES,
    GRID_MEANS_MS,
    NetemProfile,
    ProfileBounds,
    grid_profile,
    grid_search_space,
    randomize_profile,
)
from .stats import reproducibility_report

__all__ = [
    "RunConfig",
    "UsageError",
    "build_parser",
    "main",
    "cmd_catalog",
    "cmd_run",
    "cmd_chunk",
    "cmd_coalesce",
    "cmd_validate_repro",
    "cmd_fit_delays",
    "cmd_classify",
]

logger = logging.getLogger("trafficforge.cli")

# `chunk` is generating too, but its seeds are per-run entries in the plan
# file (each mandatory there), not a global flag.
GENERATING_COMMANDS = frozenset({"run", "fit-delays", "classify"})


class UsageError(Exception):
    """Bad flags, arguments, or plan files; maps to exit code 1."""


@dataclass(frozen=True)
class RunConfig:
    """Global settings every subcommand shares."""

    command: str
    seed: int | None
    out_dir: Path
    backend_name: str
    verbosity: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.command in GENERATING_COMMANDS and self.seed is None:
            problems.append(f"{self.command} generates data and needs --seed")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            problems.append("seed must be an integer in [0, 2^64)")
        if self.backend_name not in ("simulated", "engine"):
            problems.append(f"unknown backend {self.backend_name!r}")
        return problems


# ---------------------------------------------------------------------------
# flag value parsers


def _seed_type(text: str) -> int:
    try:
        return int(text, 0)  # accepts decimal and 0x... hex
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")


def _range_type(text: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        values = []
    if len(values) == 1:
        return values[0], values[0]
    if len(values) == 2:
        return values[0], values[1]
    raise argparse.ArgumentTypeError(f"expected NUMBER or LO:HI, got {text!r}")


def _means_type(text: str) -> tuple[int, ...]:
    try:
        means = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        means = ()
    if not means:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return means


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D401 — argparse hook
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (default: ./out)")
    common.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug")

    seeded = _Parser(add_help=False)
    seeded.add_argument("--seed", type=_seed_type, required=True,
                        help="generator seed (decimal or 0x-hex); mandatory, never defaulted")

    backend = _Parser(add_help=False)
    backend.add_argument("--backend", choices=("simulated", "engine"), default="simulated",
                         help=f"execution backend; 'engine' reads its socket from ${ENGINE_SOCKET_ENV}")
    backend.add_argument("--allow-malicious", action="store_true",
                         help="opt in to running malicious-catalog scenarios on the real backend")

    parser = _Parser(
        prog="trafficforge",
        description="Scenario-driven generation of labeled, reproducible traffic datasets.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("catalog", parents=[common], help="list scenarios and subscenarios")
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("run", parents=[common, seeded, backend],
                       help="execute one subscenario, writing pcap artifacts + tags")
    p.add_argument("--scenario", required=True, choices=CATALOG_ORDER, metavar="NAME",
                   help="catalog scenario name (see 'catalog')")
    p.add_argument("--subscenario", required=True, metavar="NAME")
    p.add_argument("--duration", type=float, default=30.0, help="run duration in seconds")
    p.add_argument("--reps", type=int, default=1, help="repetitions (distinct artifacts per role)")
    p.add_argument("--capture-filter", default=None, help="e.g. 'tcp', 'udp port 53'")
    p.add_argument("--subnet", default=None, help="override the scenario subnet")
    p.add_argument("--shaped-role", default=None,
                   help="role the netem profile attaches to (default: primary container)")
    p.add_argument("--delay-family", choices=sorted(FAMILIES),
                   default="normal", help="delay distribution family")
    p.add_argument("--delay-mean", type=_range_type, default=None, metavar="MS[:MS]",
                   help="delay mean bound(s) in ms; one value pins it, LO:HI draws uniformly")
    p.add_argument("--delay-jitter", type=_range_type, default=None, metavar="MS[:MS]")
    p.add_argument("--loss", type=_range_type, default=None, metavar="PCT[:PCT]")
    p.add_argument("--corrupt", type=_range_type, default=None, metavar="PCT[:PCT]")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("chunk", parents=[common, backend],
                       help="execute a YAML chunk plan of concurrent runs")
    p.add_argument("plan_file", type=Path, help="chunk plan YAML (see module docs)")
    p.add_argument("--chunk-duration", type=float, default=None,
                   help="override the plan's chunk_duration_s")
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("coalesce", parents=[common],
                       help="merge + stitch an artifact directory into one dataset")
    p.add_argument("artifact_dir", type=Path)
    p.add_argument("--gap", type=float, default=1.0, help="inter-chunk gap in seconds")
    p.add_argument("--chunk-duration", type=float, default=None,
                   help="declared chunk length; merged chunks spanning longer are rejected")
    p.add_argument("--no-dedup", action="store_true",
                   help="keep every perspective's copy of dual-observed packets")
    p.add_argument("--stem", default="dataset", help="output file stem")
    p.set_defaults(func=cmd_coalesce)

    p = sub.add_parser("validate-repro", parents=[common],
                       help="pairwise K-S reproducibility report over an artifact directory")
    p.add_argument("artifact_dir", type=Path)
    p.add_argument("--alpha", type=float, default=0.01, help="per-test significance level")
    p.set_defaults(func=cmd_validate_repro)

    p = sub.add_parser("fit-delays", parents=[common, seeded],
                       help="grid-search delay profiles against a reference pcap")
    p.add_argument("reference_pcap", type=Path, help="the traffic condition to imitate")
    p.add_argument("--scenario", default="wan_wget", choices=CATALOG_ORDER, metavar="NAME",
                   help="generator scenario (default: wan_wget)")
    p.add_argument("--subscenario", default="fetch", metavar="NAME")
    p.add_argument("--grid-family", action="append", choices=GRID_FAMILIES, default=None,
                   help="restrict the grid to this family (repeatable; default: all four)")
    p.add_argument("--grid-means", type=_means_type, default=GRID_MEANS_MS, metavar="MS,MS,...",
                   help="grid means in ms (default: 40,50,60,70)")
    p.add_argument("--runs-per-point", type=int, default=6,
                   help="generator runs per grid point")
    p.add_argument("--duration", type=float, default=30.0, help="seconds per generator run")
    p.add_argument("--trees", type=int, default=200, help="forest size per comparison")
    p.add_argument("--shaped-role", default=None)
    p.set_defaults(func=cmd_fit_delays)

    p = sub.add_parser("classify", parents=[common, seeded],
                       help="per-scenario precision/recall curves from artifact directories")
    p.add_argument("train_dir", type=Path)
    p.add_argument("test_dir", type=Path)
    p.add_argument("--max-packets", type=int, default=12,
                   help="largest packet prefix length k")
    p.add_argument("--trees", type=int, default=100, help="forest size per k")
    p.set_defaults(func=cmd_classify)

    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(
        command=args.command,
        seed=getattr(args, "seed", None),
        out_dir=args.out,
        backend_name=getattr(args, "backend", "simulated"),
        verbosity=args.verbose,
    )
    problems = config.validate()
    if problems:
        raise UsageError("; ".join(problems))
    return config


def _backend(config: RunConfig) -> ExecutionBackend:
    if config.backend_name == "engine":
        return EngineBackend()
    return SimulatedBackend()


def _primary_role(scenario: ScenarioSpec) -> str:
    for container in scenario.containers:
        if container.is_primary:
            return container.role
    return scenario.containers[0].role


def _scan_artifacts(directory: Path) -> list:
    """Load every tagged pcap in `directory` (sorted by name, strict on tags)."""
    from .orchestrator import CaptureArtifact

    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    artifacts = []
    for pcap_path in sorted(directory.glob("*.pcap")):
        try:
            tag = read_artifact_metadata(pcap_path)
        except FileNotFoundError:
            raise CoalesceError(
                f"{pcap_path.name} has no metadata tag; not a generated artifact"
            )
        artifacts.append(CaptureArtifact(pcap_path=pcap_path, tag=tag))
    return artifacts


def _concat_datasets(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    if not datasets:
        raise LearnError("no artifacts produced any feature rows")
    return LabeledDataset(
        features=np.vstack([d.features for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        feature_names=datasets[0].feature_names,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_catalog(args: argparse.Namespace, config: RunConfig | None = None) -> int:
    """Table-style listing of every shipped scenario."""
    entries = catalog()
    width = max(len(spec.name) for spec, _ in entries) + 2
    print(f"{'scenario':<{width}} {'kind':<10} {'backends':<18} subscenarios")
    templated = 0
    for spec, has_template in entries:
        backends = "simulated+engine" if has_template else "engine-only"
        templated += has_template
        subs = ", ".join(s.name for s in spec.subscenarios)
        print(f"{spec.name:<{width}} {spec.kind:<10} {backends:<18} {subs}")
    malicious = sum(spec.kind == "malicious" for spec, _ in entries)
    print(f"\n{len(entries)} scenarios ({templated} with simulated templates), "
          f"{malicious} malicious")
    return 0


def _run_profiles(args: argparse.Namespace, scenario: ScenarioSpec, seed: int
                  ) -> dict[str, NetemProfile]:
    """Resolve the netem bounds flags into a per-role profile mapping."""
    bounded = [args.delay_mean, args.delay_jitter, args.loss, args.corrupt]
    if all(b is None for b in bounded):
        return {}
    bounds = ProfileBounds(
        delay_family=args.delay_family,
        mean_ms=args.delay_mean or (0.0, 0.0),
        jitter_ms=args.delay_jitter or (0.0, 0.0),
        loss_pct=args.loss or (0.0, 0.0),
        corrupt_pct=args.corrupt or (0.0, 0.0),
    )
    problems = bounds.validate()
    if problems:
        raise UsageError("bad netem bounds: " + "; ".join(problems))
    role = args.shaped_role or _primary_role(scenario)
    profile = randomize_profile(bounds, SeededRng(seed).child("netem"))
    logger.info("netem profile for %s: %s", role, profile)
    return {role: profile}


def cmd_run(args: argparse.Namespace, config: RunConfig | None = None) -> int:
    """Execute one subscenario; one profile draw covers all repetitions.

    Per-trace netem randomization across a dataset comes from varying seeds
    across runs (or a chunk plan), keeping each run individually reproducible.
    """
    config = config or _config(args)
    scenario = catalog_scenario(args.scenario)
    if not any(s.name == args.subscenario for s in scenario.subscenarios):
        names = ", ".join(s.name for s in scenario.subscenarios)
        raise UsageError(f"unknown subscenario {args.subscenario!r} (have: {names})")

    plan = RunPlan(
        scenario=scenario,
        subscenario=args.subscenario,
        seed=config.seed,
        duration_s=args.duration,
        repetitions=args.reps,
        profiles=_run_profiles(args, scenario, config.seed),
        capture_filter=args.capture_filter,
        subnet=args.subnet,
    )
    problems = plan.validate()
    if problems:
        raise UsageError("; ".join(problems))

    artifacts = execute_scenario(plan, _backend(config), config.out_dir,
                                 allow_malicious=args.allow_malicious)
    for artifact in artifacts:
        print(f"{artifact.pcap_path}  complete={str(artifact.tag.complete).lower()}")
    print(f"wrote {len(artifacts)} artifacts to {config.out_dir}")
    return 0


def _plan_profile(entry: Mapping, scenario: ScenarioSpec) -> dict[str, NetemProfile]:
    delay = entry.get("delay")
    loss = float(entry.get("loss_pct", 0.0))
    corrupt = float(entry.get("corrupt_pct", 0.0))
    if delay is None and loss == 0.0 and corrupt == 0.0:
        return {}
    spec = DistributionSpec(
        family=str(delay.get("family", "normal")) if delay else "constant",
        mean=float(delay.get("mean_ms", 0.0)) if delay else 0.0,
        jitter=float(delay.get("jitter_ms", 0.0)) if delay else 0.0,
        shape=delay.get("shape") if delay else None,
    )
    role = entry.get("shaped_role") or _primary_role(scenario)
    return {str(role): NetemProfile(delay=spec, loss_pct=loss, corrupt_pct=corrupt)}


_PLAN_RUN_KEYS = {
    "scenario", "subscenario", "seed", "duration_s", "repetitions", "subnet",
    "shaped_role", "delay", "loss_pct", "corrupt_pct", "capture_filter",
}


def _load_chunk_plan(path: Path) -> ChunkPlan:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"plan file not found: {path}")
    except yaml.YAMLError as exc:
        raise UsageError(f"malformed plan file {path}: {exc}")
    if not isinstance(data, dict) or not isinstance(data.get("runs"), list) or not data["runs"]:
        raise UsageError(f"plan file {path} needs a top-level mapping with a non-empty 'runs' list")

    runs = []
    for i, entry in enumerate(data["runs"]):
        if not isinstance(entry, dict):
            raise UsageError(f"run {i} is not a mapping")
        unknown = set(entry) - _PLAN_RUN_KEYS
        if unknown:
            raise UsageError(f"run {i} has unknown keys: {', '.join(sorted(unknown))}")
        for key in ("scenario", "subscenario", "seed"):
            if key not in entry:
                raise UsageError(f"run {i} is missing {key!r}")
        try:
            scenario = catalog_scenario(str(entry["scenario"]))
        except KeyError as exc:
            raise UsageError(f"run {i}: {exc.args[0]}")
        runs.append(RunPlan(
            scenario=scenario,
            subscenario=str(entry["subscenario"]),
            seed=int(entry["seed"]),
            duration_s=float(entry.get("duration_s", 30.0)),
            repetitions=int(entry.get("repetitions", 1)),
            profiles=_plan_profile(entry, scenario),
            capture_filter=entry.get("capture_filter"),
            subnet=entry.get("subnet"),
        ))
    return ChunkPlan(
        chunk_duration_s=float(data.get("chunk_duration_s", 0.0)),
        runs=tuple(runs),
        max_workers=int(data.get("max_workers", 4)),
    )


def cmd_chunk(args: argparse.Namespace, config: RunConfig | None = None) -> int:
    """Execute a plan file's runs concurrently under one chunk id."""
    config = config or _config(args)
    plan = _load_chunk_plan(args.plan_file)
    if args.chunk_duration is not None:
        plan = ChunkPlan(chunk_duration_s=args.chunk_duration, runs=plan.runs,
                         max_workers=plan.max_workers)
    problems = plan.validate()
    if problems:
        raise UsageError("invalid chunk plan: " + "; ".join(problems))

    artifacts = run_chunk(plan, _backend(config), config.out_dir,
                          allow_malicious=args.allow_malicious)
    for artifact in artifacts:
        print(f"{artifact.pcap_path}  complete={str(artifact.tag.complete).lower()}")
    print(f"wrote {len(artifacts)} artifacts to {config.out_dir} "
          f"(chunk {plan.chunk_id()})")
    return 0


def cmd_coalesce(args: argparse.Namespace, config: RunConfig | None = None) -> int:
    """Merge an artifact directory and stitch the chunks into one dataset.

    Artifacts group by their chunk id; loose artifacts (no chunk id) group by
    (scenario, subscenario, seed, repetition) so every perspective of one run
    merges together, with each run treated as its own chunk.
    """
    config = config or _config(args)
    artifacts = _scan_artifacts(args.artifact_dir)
    if not artifacts:
        raise CoalesceError(f"no artifacts found in {args.artifact_dir}")

    groups: dict[tuple, list] = {}
    for artifact in artifacts:
        tag = artifact.tag
        if tag.chunk_id is not None:
            key: tuple = ("chunk", tag.chunk_id)
        else:
            key = ("run", tag.scenario, tag.subscenario, f"{tag.seed:016x}", tag.repetition)
        groups.setdefault(key, []).append(artifact)

    merged = [merge_chunk(group, dedup=not args.no_dedup)
              for _, group in sorted(groups.items())]
    if args.chunk_duration is not None:
        for chunk in merged:
            span_s = chunk.span_us / 1e6
            if span_s > args.chunk_duration:
                raise CoalesceError(
                    f"chunk {chunk.chunk_id or '(loose run)'} spans {span_s:.3f}s, "
                    f"longer than the declared --chunk-duration {args.chunk_duration:g}s"
                )

    manifest, packets = stitch_chunks(merged, gap_s=args.gap)
    problems = validate_manifest(manifest, packets)
    if problems:
        raise CoalesceError("merged dataset failed validation: " + "; ".join(problems[:5]))

    pcap_path, manifest_path = write_dataset(manifest, packets, config.out_dir, stem=args.stem)
    print(f"{pcap_path}  packets={len(packets)}")
    print(f"{manifest_path}  chunks={len(manifest.chunks)} labels={len(manifest.label_records)}")
    return 0


def cmd_validate_repro(args: argparse.Namespace, config: RunConfig | None = None) -> int:
    """Pairwise K-S reproducibility over an artifact directory, as CSV + PNG."""
    config = config or _config(args)
    artifacts = _scan_artifacts(args.artifact_dir)
    report = reproducibility_report(artifacts, alpha=args.alpha)
    csv_path, png_path = write_reproducibility_report(report, config.out_dir)
    print(f"pass fraction {report.pass_fraction:.4f} over "
          f"{len(report.artifact_names)} artifacts (alpha={args.alpha:g})")
    print(f"{csv_path}\n{png_path}")
    return 0


def _feature_dataset_from_runs(
    scenario: ScenarioSpec,
    subscenario: str,
    profile: NetemProfile | None,
    *,
    seed: int,
    tokens: tuple,
    runs: int,
    duration_s: float,
    role: str,
    label: int,
) -> LabeledDataset:
    """Per-packet (IAT, size) rows observed at `role` over fresh simulated runs."""
    backend = SimulatedBackend()
    datasets = []
    with tempfile.TemporaryDirectory(prefix="trafficforge-fit-") as workdir:
        for i in range(runs):
            plan = RunPlan(
                scenario=scenario,
                subscenario=subscenario,
                seed=child_seed(seed, *tokens, i),
                duration_s=duration_s,
                profiles={role: profile} if profile is not None else {},
            )
            for artifact in execute_scenario(plan, backend, workdir):
                if artifact.tag.container_role != role:
                    continue
                flows = extract_flows(read_pcap(artifact.pcap_path))
                if flows:
                    datasets.append(packet_feature_rows(flows, label=label))
    return _concat_datasets(datasets)


def _balanced(a: LabeledDataset, b: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    n = min(len(a), len(b))
    index = np.arange(n)
    return a.take(index), b.take(index)


def cmd_fit_delays(args: argparse.Namespace, config: RunConfig | None = None) -> int:
    """Grid-search delay profiles for the best match against a reference pcap.

    Every grid point (plus the baseline and constant-delay anchors) generates
    shaped traffic, featurizes the primary perspective into per-packet
    (IAT, size) rows, and scores distinguishability against the reference —
    lower is better, 0.5 is indistinguishable.
    """
    config = config or _config(args)
    reference_flows = extract_flows(read_pcap(args.reference_pcap))
    reference = packet_feature_rows(reference_flows, label=1)

    scenario = catalog_scenario(args.scenario)
    if not any(s.name == args.subscenario for s in scenario.subscenarios):
        names = ", ".join(s.name for s in scenario.subscenarios)
        raise UsageError(f"unknown subscenario {args.subscenario!r} (have: {names})")
    role = args.shaped_role or _primary_role(scenario)

    families = tuple(dict.fromkeys(args.grid_family)) if args.grid_family else GRID_FAMILIES
    grid = grid_search_space(families, args.grid_means)
    points: list[tuple[str, float, float]] = [
        ("baseline", 0.0, 0.0),
        ("constant", float(min(args.grid_means)), 0.0),
        *[(f, float(m), float(j)) for f, m, j in grid],
    ]

    rows = []
    for family, mean, jitter in points:
        profile = None if family == "baseline" else grid_profile(family, mean, jitter)
        point_id = f"{family}/{mean:g}/{jitter:g}"
        local = _feature_dataset_from_runs(
            scenario, args.subscenario, profile,
            seed=config.seed, tokens=("fit", point_id),
            runs=args.runs_per_point, duration_s=args.duration, role=role, label=0,
        )
        a, b = _balanced(local, reference)
        accuracy = distinguishability(
            a, b, n_trees=args.trees,
            rng=SeededRng(config.seed).child("fit-score", point_id),
        )
        rows.append(DelayFitRow(family, mean, jitter, accuracy))
        logger.info("%-28s accuracy %.4f (%d vs %d rows)",
                    rows[-1].label, accuracy, len(a), len(b))

    csv_path, png_path = write_delay_fit_report(rows, config.out_dir)
    best = min(rows, key=lambda r: (r.accuracy, r.family, r.mean_ms, r.jitter_ms))
    print(f"best match: {best.label} (accuracy {best.accuracy:.4f})")
    print(f"{csv_path}\n{png_path}")
    return 0


def _labeled_dir(directory: Path, class_ids: Mapping[str, int], n_packets: int) -> LabeledDataset:
    datasets = []
    for artifact in _scan_artifacts(directory):
        flows = extract_flows(read_pcap(artifact.pcap_path))
        if not flows:
            logger.warning("no flows in %s; skipping", artifact.pcap_path.name)
            continue
        datasets.append(iat_vector_rows(flows, label=class_ids[artifact.tag.scenario],
                                        n_packets=n_packets))
    return _concat_datasets(datasets)


def cmd_classify(args: argparse.Namespace, config: RunConfig | None = None) -> int:
    """Scenario classification curves: train on one directory, test on another."""
    config = config or _config(args)
    train_artifacts = _scan_artifacts(args.train_dir)
    test_artifacts = _scan_artifacts(args.test_dir)
    names = sorted({a.tag.scenario for a in train_artifacts}
                   | {a.tag.scenario for a in test_artifacts})
    class_ids = {name: i for i, name in enumerate(names)}

    train = _labeled_dir(args.train_dir, class_ids, args.max_packets)
    test = _labeled_dir(args.test_dir, class_ids, args.max_packets)
    curves = classification_curves(
        train, test, max_packets=args.max_packets, n_trees=args.trees,
        rng=SeededRng(config.seed).child("classify"),
    )
    csv_path, png_path = write_classification_report(
        curves, config.out_dir, class_names={i: name for name, i in class_ids.items()},
    )
    top = curves.points[-1]
    print(f"classes: {', '.join(names)}")
    print(f"macro precision {top.matrix.macro_precision:.4f} / "
          f"recall {top.matrix.macro_recall:.4f} at k={top.k}")
    print(f"{csv_path}\n{png_path}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args.verbose)
        config = _config(args)
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OrchestratorError, CoalesceError, LearnError, ValueError, KeyError, OSError) as exc:
        message = str(exc) or exc.__class__.__name__
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
