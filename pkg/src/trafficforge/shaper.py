"""WAN emulation profiles: per-interface delay/loss/corruption shaping.

A `NetemProfile` describes what a container's interface should suffer:
a delay distribution plus loss/corruption/reordering percentages and an
optional rate cap.  `render_tc_commands` turns a profile into the exact
traffic-control command strings a real backend runs inside the container;
the simulated backend consumes the profile directly and never shells out.

`grid_search_space` enumerates the delay-fitting grid: four distribution
families, means 40–70 ms in 10 ms steps, jitters in 5 ms steps up to half
the mean — 88 combinations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .randomness import DistributionSpec, SeededRng

__all__ = [
    "GRID_FAMILIES",
    "GRID_MEANS_MS",
    "NetemProfile",
    "ProfileBounds",
    "NO_SHAPING",
    "randomize_profile",
    "render_tc_commands",
    "render_tc_teardown",
    "grid_search_space",
    "grid_profile",
]

GRID_FAMILIES = ("normal", "pareto", "paretonormal", "weibull")
GRID_MEANS_MS = (40, 50, 60, 70)

# netem's built-in jitter behavior is uniform; these families need an
# explicit `distribution` clause (weibull via a custom quantized table,
# see trafficforge.netem_table).
_TABLE_CLAUSE_FAMILIES = frozenset({"normal", "pareto", "paretonormal", "weibull"})


@dataclass(frozen=True)
class NetemProfile:
    """What one interface suffers: delay distribution, loss, corruption, rate."""

    delay: DistributionSpec = field(default_factory=lambda: DistributionSpec("constant", 0.0))
    loss_pct: float = 0.0
    corrupt_pct: float = 0.0
    reorder_pct: float = 0.0
    rate_limit: int | None = None  # bits per second

    def validate(self) -> list[str]:
        problems = [f"delay: {p}" for p in self.delay.validate()]
        if self.delay.mean < 0:
            problems.append("delay: mean must be >= 0")
        for name, value in (
            ("loss_pct", self.loss_pct),
            ("corrupt_pct", self.corrupt_pct),
            ("reorder_pct", self.reorder_pct),
        ):
            if not 0.0 <= value <= 100.0:
                problems.append(f"{name}: {value} is outside [0, 100]")
        if self.rate_limit is not None and self.rate_limit <= 0:
            problems.append(f"rate_limit: {self.rate_limit} must be positive")
        return problems

    def is_noop(self) -> bool:
        return (
            self.delay.mean == 0.0
            and self.delay.jitter == 0.0
            and self.loss_pct == 0.0
            and self.corrupt_pct == 0.0
            and self.reorder_pct == 0.0
            and self.rate_limit is None
        )


NO_SHAPING = NetemProfile()


@dataclass(frozen=True)
class ProfileBounds:
    """Uniform sampling ranges for each profile field.

    The delay family is fixed (not drawn); every numeric field is drawn
    uniformly from its inclusive [lo, hi] range.  A degenerate range pins the
    field.  `rate_limit` stays unset when its bounds are None.
    """

    delay_family: str = "normal"
    delay_shape: float | None = None
    mean_ms: tuple[float, float] = (0.0, 100.0)
    jitter_ms: tuple[float, float] = (0.0, 10.0)
    loss_pct: tuple[float, float] = (0.0, 0.0)
    corrupt_pct: tuple[float, float] = (0.0, 0.0)
    reorder_pct: tuple[float, float] = (0.0, 0.0)
    rate_limit: tuple[int, int] | None = None

    def validate(self) -> list[str]:
        problems = []
        probe = DistributionSpec(self.delay_family, 1.0, 1.0, self.delay_shape)
        problems.extend(f"delay_family: {p}" for p in probe.validate())
        ranges: list[tuple[str, tuple[float, float], float, float]] = [
            ("mean_ms", self.mean_ms, 0.0, float("inf")),
            ("jitter_ms", self.jitter_ms, 0.0, float("inf")),
            ("loss_pct", self.loss_pct, 0.0, 100.0),
            ("corrupt_pct", self.corrupt_pct, 0.0, 100.0),
            ("reorder_pct", self.reorder_pct, 0.0, 100.0),
        ]
        if self.rate_limit is not None:
            ranges.append(("rate_limit", self.rate_limit, 1, float("inf")))
        for name, (lo, hi), floor, ceiling in ranges:
            if lo > hi:
                problems.append(f"{name}: lo {lo} > hi {hi}")
            if lo < floor or hi > ceiling:
                problems.append(f"{name}: [{lo}, {hi}] outside [{floor}, {ceiling}]")
        return problems


def _draw(rng: SeededRng, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    return float(rng.gen.uniform(lo, hi))


def randomize_profile(bounds: ProfileBounds, rng: SeededRng) -> NetemProfile:
    """Draw each profile field uniformly within its bounds; seed-deterministic."""
    problems = bounds.validate()
    if problems:
        raise ValueError("malformed profile bounds: " + "; ".join(problems))
    delay = DistributionSpec(
        family=bounds.delay_family,
        mean=_draw(rng, *bounds.mean_ms),
        jitter=_draw(rng, *bounds.jitter_ms),
        shape=bounds.delay_shape,
    )
    rate = None
    if bounds.rate_limit is not None:
        rate = int(round(_draw(rng, float(bounds.rate_limit[0]), float(bounds.rate_limit[1]))))
    return NetemProfile(
        delay=delay,
        loss_pct=_draw(rng, *bounds.loss_pct),
        corrupt_pct=_draw(rng, *bounds.corrupt_pct),
        reorder_pct=_draw(rng, *bounds.reorder_pct),
        rate_limit=rate,
    )


def render_tc_commands(profile: NetemProfile, interface: str) -> list[str]:
    """Render the traffic-control commands installing `profile` on `interface`.

    Returns [] for a no-op profile.  Zero-valued fields are omitted from the
    command.  Families with quantized delay tables get a `distribution` clause;
    the weibull table is not shipped with stock netem and must be installed
    from `trafficforge.netem_table` before the command runs (the engine backend
    does this).  A uniform delay spec U(mean, mean+jitter) is re-centered to
    netem's `delay center spread` convention.
    """
    if not interface:
        raise ValueError("interface name must be non-empty")
    problems = profile.validate()
    if problems:
        raise ValueError("invalid netem profile: " + "; ".join(problems))
    if profile.is_noop():
        return []

    clauses: list[str] = []
    delay = profile.delay
    if delay.mean > 0 or delay.jitter > 0:
        if delay.family == "uniform" and delay.jitter > 0:
            center = delay.mean + delay.jitter / 2.0
            spread = delay.jitter / 2.0
            clauses.append(f"delay {center:g}ms {spread:g}ms")
        elif delay.jitter > 0:
            clauses.append(f"delay {delay.mean:g}ms {delay.jitter:g}ms")
            if delay.family in _TABLE_CLAUSE_FAMILIES:
                clauses.append(f"distribution {delay.family}")
        else:
            clauses.append(f"delay {delay.mean:g}ms")
    if profile.loss_pct > 0:
        clauses.append(f"loss {profile.loss_pct:g}%")
    if profile.corrupt_pct > 0:
        clauses.append(f"corrupt {profile.corrupt_pct:g}%")
    if profile.reorder_pct > 0:
        clauses.append(f"reorder {profile.reorder_pct:g}%")
    if profile.rate_limit is not None:
        clauses.append(f"rate {profile.rate_limit:g}bit")

    return [f"tc qdisc replace dev {interface} root netem " + " ".join(clauses)]


def render_tc_teardown(interface: str) -> str:
    """The command removing any root qdisc previously installed on `interface`."""
    if not interface:
        raise ValueError("interface name must be non-empty")
    return f"tc qdisc del dev {interface} root"


def grid_search_space(
    families: Sequence[str] = GRID_FAMILIES,
    means_ms: Sequence[int] = GRID_MEANS_MS,
) -> list[tuple[str, int, int]]:
    """The delay-fitting grid: (family, mean ms, jitter ms), 88 points by default.

    Jitters run in 5 ms steps from 5 up to mean/2 inclusive, so the default
    per-family counts are 4 + 5 + 6 + 7 = 22.  Narrower families/means keep
    the same jitter rule.
    """
    space = []
    for family in families:
        for mean in means_ms:
            for jitter in range(5, mean // 2 + 1, 5):
                space.append((family, int(mean), jitter))
    return space


def grid_profile(family: str, mean_ms: float, jitter_ms: float) -> NetemProfile:
    """The profile used for one grid point: pure delay, no loss or corruption."""
    return NetemProfile(delay=DistributionSpec(family, float(mean_ms), float(jitter_ms)))
