"""Seeded sampling for input randomization and delay emulation.

Everything that draws randomness in this package goes through a
:class:`SeededRng`, and independent consumers derive child generators with
:func:`child_seed` so that adding a new draw site never perturbs existing
streams.  Identical seed + identical call sequence yields identical samples.

Distribution conventions
------------------------
``DistributionSpec(family, mean, jitter, shape)`` is interpreted as:

- ``uniform``:   mean + jitter * U,  U ~ U(0, 1)   (i.e. U(location, location+scale))
- ``normal``:    mean + jitter * Z,  Z ~ N(0, 1)
- ``pareto``:    mean + jitter * standardized Pareto(shape), shape > 2
- ``weibull``:   mean + jitter * standardized Weibull(shape)
- ``paretonormal``: 0.25 * (normal draw) + 0.75 * (pareto draw), both
  components parameterized with this spec's mean/jitter
- ``cauchy``:    mean + jitter * C,  C standard Cauchy
- ``constant``:  mean, always

"Standardized" means the family draw is shifted/scaled to zero mean and unit
standard deviation, so ``jitter`` is the scale (standard deviation where it
exists) of the emulated quantity, matching the mu/sigma convention of kernel
network emulation.  Draws from :func:`sample` are clamped at 0 because a
negative delay cannot be emulated; every quantity this package randomizes
(delays, lengths, sizes) is nonnegative.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

FAMILIES = ("uniform", "normal", "pareto", "paretonormal", "weibull", "cauchy", "constant")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

_DEFAULT_PARETO_SHAPE = 2.5
_DEFAULT_WEIBULL_SHAPE = 1.0

CREDENTIAL_MIN_LEN = 4
CREDENTIAL_MAX_LEN = 64
DEFAULT_CREDENTIAL_LENGTH_DIST = None  # filled in below, after DistributionSpec exists


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _token_value(token: int | str) -> int:
    if isinstance(token, (int, np.integer)):
        return int(token) & _MASK64
    if isinstance(token, str):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"seed token must be int or str, got {type(token).__name__}")


def child_seed(seed: int, *tokens: int | str) -> int:
    """Derive a stable child seed from a parent seed and a stream id.

    The derivation is a splitmix64 chain over the tokens (strings are folded
    to 64 bits through SHA-256 first).  It is part of the package's
    reproducibility contract: the mapping is frozen and regression-tested, so
    artifacts generated today can be regenerated bit-for-bit later.
    """
    h = int(seed) & _MASK64
    for token in tokens:
        h = _splitmix64(h ^ _token_value(token))
    return h


class SeededRng:
    """Deterministic random generator with documented child derivation.

    Wraps ``numpy.random.Generator`` (PCG64).  Instances are single-owner:
    code that needs parallel or independent sampling derives children via
    :meth:`child` instead of sharing one instance.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.gen = np.random.default_rng(self.seed)

    def child(self, *tokens: int | str) -> "SeededRng":
        """A fresh generator for the stream identified by ``tokens``."""
        return SeededRng(child_seed(self.seed, *tokens))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"SeededRng(seed={self.seed:#018x})"


@dataclass(frozen=True)
class DistributionSpec:
    """A distribution family with location/scale (and optional shape).

    ``mean`` is the location parameter (mean for the delay families), in
    contextual units: milliseconds for delays, characters for credential
    lengths, bytes for sizes.  ``jitter`` is the scale parameter and must be
    nonnegative.  ``shape`` applies to pareto (default 2.5) and weibull
    (default 1.0) only.
    """

    family: str
    mean: float
    jitter: float = 0.0
    shape: float | None = None

    def validate(self) -> list[str]:
        problems: list[str] = []
        if self.family not in FAMILIES:
            problems.append(f"unknown distribution family {self.family!r}")
            return problems
        if not math.isfinite(self.mean):
            problems.append("mean must be finite")
        if not math.isfinite(self.jitter) or self.jitter < 0:
            problems.append("jitter (scale) must be finite and >= 0")
        if self.family == "constant" and self.jitter != 0:
            problems.append("constant distribution must have jitter 0")
        shape = self.effective_shape()
        if self.family in ("pareto", "paretonormal"):
            if shape is None or shape <= 2:
                problems.append("pareto shape must be > 2 for finite variance")
        elif self.family == "weibull":
            if shape is None or shape <= 0:
                problems.append("weibull shape must be > 0")
        elif self.shape is not None:
            problems.append(f"family {self.family!r} takes no shape parameter")
        return problems

    def effective_shape(self) -> float | None:
        if self.shape is not None:
            return self.shape
        if self.family in ("pareto", "paretonormal"):
            return _DEFAULT_PARETO_SHAPE
        if self.family == "weibull":
            return _DEFAULT_WEIBULL_SHAPE
        return None


DEFAULT_CREDENTIAL_LENGTH_DIST = DistributionSpec("cauchy", mean=12.0, jitter=3.0)


def _require_valid(dist: DistributionSpec) -> None:
    problems = dist.validate()
    if problems:
        raise ValueError(f"invalid distribution {dist}: " + "; ".join(problems))


def _pareto_moments(shape: float) -> tuple[float, float]:
    """Mean and standard deviation of the classic Pareto with x_m = 1."""
    mu = shape / (shape - 1.0)
    var = shape / ((shape - 1.0) ** 2 * (shape - 2.0))
    return mu, math.sqrt(var)


def _weibull_moments(shape: float) -> tuple[float, float]:
    mu = math.gamma(1.0 + 1.0 / shape)
    var = math.gamma(1.0 + 2.0 / shape) - mu * mu
    return mu, math.sqrt(max(var, 0.0))


def _standardized(family: str, shape: float | None, rng: SeededRng, n: int) -> np.ndarray:
    """n zero-mean unit-scale draws from the standardized family."""
    gen = rng.gen
    if family == "normal":
        return gen.standard_normal(n)
    if family == "pareto":
        # numpy's pareto() is the Lomax form; +1 recovers the classic x_m=1 form
        mu, sigma = _pareto_moments(shape)
        return ((gen.pareto(shape, n) + 1.0) - mu) / sigma
    if family == "weibull":
        mu, sigma = _weibull_moments(shape)
        return (gen.weibull(shape, n) - mu) / sigma
    if family == "cauchy":
        return gen.standard_cauchy(n)
    raise ValueError(f"no standardized form for family {family!r}")


def sample_many(dist: DistributionSpec, rng: SeededRng, n: int) -> np.ndarray:
    """n draws from ``dist``; negative values are clamped to 0."""
    _require_valid(dist)
    family = dist.family
    gen = rng.gen
    if family == "constant":
        raw = np.full(n, dist.mean, dtype=np.float64)
    elif family == "uniform":
        raw = dist.mean + dist.jitter * gen.random(n)
    elif family == "paretonormal":
        shape = dist.effective_shape()
        x = dist.mean + dist.jitter * _standardized("normal", None, rng, n)
        y = dist.mean + dist.jitter * _standardized("pareto", shape, rng, n)
        raw = 0.25 * x + 0.75 * y
    else:
        raw = dist.mean + dist.jitter * _standardized(family, dist.effective_shape(), rng, n)
    return np.maximum(raw, 0.0)


def sample(dist: DistributionSpec, rng: SeededRng) -> float:
    """One draw from ``dist`` (clamped at 0)."""
    return float(sample_many(dist, rng, 1)[0])


def sample_credential(
    alphabet: str | Sequence[str],
    rng: SeededRng,
    length_dist: DistributionSpec | None = None,
) -> str:
    """A random credential string with a heavy-tailed length.

    Length is one draw from ``length_dist`` (default Cauchy, location 12,
    scale 3), truncated to an integer and clamped to [4, 64]; characters are
    picked uniformly from ``alphabet``.
    """
    if len(alphabet) == 0:
        raise ValueError("credential alphabet must be non-empty")
    if length_dist is None:
        length_dist = DEFAULT_CREDENTIAL_LENGTH_DIST
    raw = sample(length_dist, rng)
    length = int(min(max(int(raw), CREDENTIAL_MIN_LEN), CREDENTIAL_MAX_LEN))
    idx = rng.gen.integers(0, len(alphabet), size=length)
    return "".join(alphabet[i] for i in idx)


T = TypeVar("T")


def pick_file(pool: Sequence[T], rng: SeededRng) -> T:
    """Uniform selection from a non-empty pool of file descriptors."""
    if len(pool) == 0:
        raise ValueError("file pool is empty")
    return pool[int(rng.gen.integers(0, len(pool)))]
