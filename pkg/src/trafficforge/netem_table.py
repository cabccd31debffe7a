"""Quantized inverse-CDF tables in the kernel network-emulation format.

The kernel's network emulator draws delays as ``mu + (sigma * t) >> 13``
where ``t`` comes from a table of signed 16-bit fixed-point quantiles of a
zero-mean, unit-scale distribution (so one table serves every mu/sigma
combination).  :func:`make_netem_table` builds such tables for the normal,
pareto, paretonormal and weibull families; custom families beyond the
kernel's built-ins (weibull in particular) are the whole point of emitting
tables ourselves.

Table entries are ``round(z_q * 8192)`` clipped to int16, where ``z_q`` is
the standardized quantile at probability ``(i + 0.5) / table_size``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .randomness import DistributionSpec, _pareto_moments, _weibull_moments

NETEM_SCALE = 8192
TABLE_FAMILIES = ("normal", "pareto", "paretonormal", "weibull")
_MIN_TABLE_SIZE = 256

# SD of 0.25*Z_normal + 0.75*Z_pareto with independent standardized components
_PARETONORMAL_SD = float(np.sqrt(0.25**2 + 0.75**2))


def _norm_cdf(x: np.ndarray) -> np.ndarray:
    """Standard normal CDF (Zelen-Severo polynomial, |err| < 7.5e-8)."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    t = 1.0 / (1.0 + 0.2316419 * ax)
    poly = t * (0.319381530 + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))))
    pdf = np.exp(-0.5 * ax * ax) / np.sqrt(2.0 * np.pi)
    upper = 1.0 - pdf * poly
    return np.where(x >= 0, upper, 1.0 - upper)


def _norm_ppf(q: np.ndarray) -> np.ndarray:
    """Standard normal inverse CDF (Acklam rational approximation, |rel err| < 1.2e-9)."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile probabilities must lie strictly in (0, 1)")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    q_low = 0.02425
    out = np.empty_like(q)

    lo = q < q_low
    hi = q > 1.0 - q_low
    mid = ~(lo | hi)

    if np.any(mid):
        r = q[mid] - 0.5
        s = r * r
        num = ((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]
        den = ((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1.0
        out[mid] = r * num / den
    for mask, sign in ((lo, 1.0), (hi, -1.0)):
        if np.any(mask):
            qq = q[mask] if sign > 0 else 1.0 - q[mask]
            r = np.sqrt(-2.0 * np.log(qq))
            num = ((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]
            den = (((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0
            out[mask] = sign * num / den
    return out


def _pareto_ppf_std(q: np.ndarray, shape: float) -> np.ndarray:
    """Standardized classic-Pareto (x_m = 1) inverse CDF; needs shape > 2."""
    mu, sigma = _pareto_moments(shape)
    x = np.power(1.0 - np.asarray(q, dtype=np.float64), -1.0 / shape)
    return (x - mu) / sigma


def _weibull_ppf_std(q: np.ndarray, shape: float) -> np.ndarray:
    """Standardized Weibull inverse CDF."""
    mu, sigma = _weibull_moments(shape)
    x = np.power(-np.log1p(-np.asarray(q, dtype=np.float64)), 1.0 / shape)
    return (x - mu) / sigma


_GL_NODES = 512


def _paretonormal_ppf_std(q: np.ndarray, shape: float) -> np.ndarray:
    """Standardized paretonormal inverse CDF by numeric inversion.

    The mixture W = 0.25*Zn + 0.75*Zp (both components standardized) has CDF
    F(w) = ∫0..1 Phi((w - 0.75*Qp(u)) / 0.25) du, evaluated with fixed
    Gauss-Legendre quadrature; quantiles are found by vectorized bisection
    and rescaled by the mixture's own SD so the result is unit scale.
    """
    q = np.asarray(q, dtype=np.float64)
    nodes, weights = np.polynomial.legendre.leggauss(_GL_NODES)
    u = 0.5 * (nodes + 1.0)
    wt = 0.5 * weights
    qp = _pareto_ppf_std(u, shape)  # (m,)

    def cdf(w: np.ndarray) -> np.ndarray:
        # w: (k,) -> F(w): (k,)
        z = (w[:, None] - 0.75 * qp[None, :]) / 0.25
        return _norm_cdf(z) @ wt

    lo = np.full_like(q, 0.25 * -9.0 + 0.75 * float(_pareto_ppf_std(np.array([1e-12]), shape)[0]) - 1.0)
    hi = 0.25 * 9.0 + 0.75 * _pareto_ppf_std(np.minimum(q + (1 - q) * 0.5, 1 - 1e-15), shape) + 1.0
    hi = np.maximum(hi, lo + 1.0)
    # expand hi until every target quantile is bracketed
    for _ in range(60):
        short = cdf(hi) < q
        if not np.any(short):
            break
        hi[short] = lo[short] + 2.0 * (hi[short] - lo[short])
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi) / _PARETONORMAL_SD


def standardized_ppf(family: str, q: np.ndarray, shape: float | None = None) -> np.ndarray:
    """Zero-mean unit-scale inverse CDF for a table family."""
    if family == "normal":
        return _norm_ppf(q)
    if family == "pareto":
        return _pareto_ppf_std(q, shape)
    if family == "weibull":
        return _weibull_ppf_std(q, shape)
    if family == "paretonormal":
        return _paretonormal_ppf_std(q, shape)
    raise ValueError(f"unsupported table family {family!r}; expected one of {TABLE_FAMILIES}")


def make_netem_table(dist: DistributionSpec, table_size: int = 4096) -> np.ndarray:
    """Signed 16-bit fixed-point quantile table for ``dist``'s family.

    Location and scale of ``dist`` are irrelevant here (tables are
    normalized); only family and shape matter.  Entries are monotone
    non-decreasing by construction.
    """
    if dist.family not in TABLE_FAMILIES:
        raise ValueError(f"unsupported table family {dist.family!r}; expected one of {TABLE_FAMILIES}")
    problems = dist.validate()
    if problems:
        raise ValueError(f"invalid distribution {dist}: " + "; ".join(problems))
    if table_size < _MIN_TABLE_SIZE:
        raise ValueError(f"table_size must be >= {_MIN_TABLE_SIZE}, got {table_size}")
    q = (np.arange(table_size, dtype=np.float64) + 0.5) / table_size
    z = standardized_ppf(dist.family, q, dist.effective_shape())
    fixed = np.clip(np.rint(z * NETEM_SCALE), -32768, 32767)
    fixed = np.maximum.accumulate(fixed)
    return fixed.astype(np.int16)


def netem_table_bytes(table: np.ndarray) -> bytes:
    """Raw little-endian int16 layout, as handed to the kernel."""
    arr = np.asarray(table, dtype=np.int16)
    return struct.pack(f"<{arr.size}h", *arr.tolist())


def format_netem_table(table: np.ndarray) -> str:
    """Textual dump in the conventional distribution-file layout (8 per line)."""
    arr = np.asarray(table, dtype=np.int16)
    lines = []
    for row_start in range(0, arr.size, 8):
        row = arr[row_start:row_start + 8]
        lines.append(" " + " ".join(f"{int(v):6d}" for v in row))
    return "\n".join(lines) + "\n"


def write_netem_table(table: np.ndarray, path: str | Path, text: bool = False) -> None:
    """Write a table to disk, binary by default or as a textual debug dump."""
    path = Path(path)
    if text:
        path.write_text(format_netem_table(table))
    else:
        path.write_bytes(netem_table_bytes(table))
