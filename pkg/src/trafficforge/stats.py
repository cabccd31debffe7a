"""Two-sample Kolmogorov-Smirnov testing and pairwise reproducibility reports.

The p-value comes from the asymptotic Kolmogorov distribution evaluated at
sqrt(n_e) * D with the effective size n_e = n1*n2/(n1+n2); an exhaustive
permutation p-value is available via ``method="exact"`` for small samples
(it enumerates every split of the pooled sample and handles ties exactly).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .capture import SERIES_NAMES, extract_flows, flow_series, read_pcap

_EXACT_LIMIT = 26  # C(26,13) = 10.4M splits; beyond this enumeration is unreasonable


@dataclass(frozen=True)
class KsResult:
    statistic_d: float
    p_value: float
    n1: int
    n2: int


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the Kolmogorov distribution, Q(λ) = 2·Σ (−1)^{r−1} e^{−2 r² λ²}."""
    if lam <= 0.0:
        return 1.0
    total = 0.0
    for r in range(1, 200):
        term = (-1.0) ** (r - 1) * math.exp(-2.0 * r * r * lam * lam)
        total += term
        if abs(term) < 1e-18:
            break
    return min(1.0, max(0.0, 2.0 * total))


def _ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    pooled = np.concatenate([a, b])
    pooled.sort(kind="mergesort")
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


def _exact_permutation_p(a: np.ndarray, b: np.ndarray, d_obs: float) -> float:
    """P(D >= d_obs) over all C(n1+n2, n1) assignments of the pooled sample.

    Independent of the searchsorted route: walks the sorted pooled values
    with integer membership counts, evaluating the CDF gap only at distinct-
    value boundaries, so ties are handled exactly.
    """
    n1, n2 = a.size, b.size
    n = n1 + n2
    if n > _EXACT_LIMIT:
        raise ValueError(f"exact permutation p-value limited to n1+n2 <= {_EXACT_LIMIT}, got {n}")
    pooled = np.sort(np.concatenate([a, b]))
    # boundary[i]: position i ends a run of equal values
    boundary = np.empty(n, dtype=bool)
    boundary[-1] = True
    boundary[:-1] = pooled[:-1] != pooled[1:]
    combos = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(n), n1)),
        dtype=np.int64,
    ).reshape(-1, n1)
    member = np.zeros((combos.shape[0], n), dtype=np.int8)
    np.put_along_axis(member, combos, 1, axis=1)
    cum_a = np.cumsum(member, axis=1, dtype=np.int64)
    positions = np.arange(1, n + 1, dtype=np.int64)
    cum_b = positions[None, :] - cum_a
    gaps = np.abs(cum_a / n1 - cum_b / n2)
    d_all = gaps[:, boundary].max(axis=1)
    return float(np.count_nonzero(d_all >= d_obs - 1e-12) / d_all.size)


def ks_two_sample(a: Sequence[float], b: Sequence[float], method: str = "asymptotic") -> KsResult:
    """Two-sample K-S test.

    D is the supremum distance between the two empirical CDFs.  With the
    default method the p-value is Q(sqrt(n_e)·D); ``method="exact"`` uses the
    exhaustive permutation distribution instead (small samples only).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_two_sample requires non-empty samples")
    d = _ks_statistic(a, b)
    if method == "asymptotic":
        n_e = a.size * b.size / (a.size + b.size)
        p = kolmogorov_sf(math.sqrt(n_e) * d)
    elif method == "exact":
        p = _exact_permutation_p(a, b, d)
    else:
        raise ValueError(f"unknown method {method!r}; expected 'asymptotic' or 'exact'")
    return KsResult(statistic_d=d, p_value=p, n1=a.size, n2=b.size)


# ---------------------------------------------------------------------------
# pairwise reproducibility protocol


@dataclass
class SeriesCheck:
    pair: tuple[int, int]
    flow_index: int
    series: str
    result: KsResult | None  # None when the series pair was vacuous or mismatched
    passed: bool
    note: str = ""


@dataclass
class ReproducibilityReport:
    artifact_names: list[str]
    alpha: float
    pass_matrix: np.ndarray  # bool, symmetric, True on diagonal
    checks: list[SeriesCheck] = field(repr=False, default_factory=list)

    @property
    def pass_fraction(self) -> float:
        n = self.pass_matrix.shape[0]
        if n < 2:
            return 1.0
        idx = np.triu_indices(n, k=1)
        return float(self.pass_matrix[idx].mean())

    def format_table(self) -> str:
        """Structured text: pair id, per-series D and p, verdict."""
        lines = [f"{'pair':<9} {'flow':>4} {'series':<14} {'n1':>4} {'n2':>4} {'D':>8} {'p':>8}  verdict"]
        for chk in self.checks:
            pair_id = f"{chk.pair[0]:03d}-{chk.pair[1]:03d}"
            if chk.result is None:
                d_s = p_s = n1_s = n2_s = "-"
            else:
                d_s = f"{chk.result.statistic_d:.4f}"
                p_s = f"{chk.result.p_value:.4f}"
                n1_s = str(chk.result.n1)
                n2_s = str(chk.result.n2)
            verdict = "pass" if chk.passed else "FAIL"
            note = f"  ({chk.note})" if chk.note else ""
            lines.append(f"{pair_id:<9} {chk.flow_index:>4} {chk.series:<14} {n1_s:>4} {n2_s:>4} {d_s:>8} {p_s:>8}  {verdict}{note}")
        n = self.pass_matrix.shape[0]
        total = n * (n - 1) // 2
        passed = int(round(self.pass_fraction * total)) if total else 0
        lines.append(f"summary: artifacts {n}, pairs {total}, passed {passed}, pass fraction {self.pass_fraction:.4f}")
        return "\n".join(lines)


def _artifact_series(artifact) -> tuple[str, str, list[dict[str, np.ndarray]]]:
    """(scenario, subscenario, per-flow series) for one capture artifact."""
    flows = extract_flows(read_pcap(artifact.pcap_path))
    return artifact.tag.scenario, artifact.tag.subscenario, [flow_series(f) for f in flows]


def reproducibility_report(artifacts: Sequence, alpha: float = 0.01,
                           method: str = "asymptotic", strict: bool = True) -> ReproducibilityReport:
    """Pairwise K-S similarity over all artifacts of one scenario/subscenario.

    For every artifact pair, flows are matched positionally by start order
    and all six series (iat/size × overall/up/down) are tested.  A pair
    passes iff every test has p >= alpha (``strict=False`` relaxes this to
    at least half of the tested series per pair).  Series that are empty on
    both sides are vacuously passing; an empty-vs-non-empty series or a flow
    count mismatch fails the pair outright.
    """
    if len(artifacts) < 2:
        raise ValueError("reproducibility_report needs at least 2 artifacts")
    loaded = [_artifact_series(a) for a in artifacts]
    scen_sub = {(s, sub) for s, sub, _ in loaded}
    if len(scen_sub) > 1:
        raise ValueError(f"artifacts span multiple scenario/subscenario combinations: {sorted(scen_sub)}")

    n = len(artifacts)
    matrix = np.eye(n, dtype=bool)
    checks: list[SeriesCheck] = []
    for i, j in itertools.combinations(range(n), 2):
        series_i, series_j = loaded[i][2], loaded[j][2]
        results: list[bool] = []
        hard_fail = False
        if len(series_i) != len(series_j):
            checks.append(SeriesCheck((i, j), -1, "flow-count", None, False,
                                      note=f"{len(series_i)} vs {len(series_j)} flows"))
            hard_fail = True
        else:
            for fidx, (si, sj) in enumerate(zip(series_i, series_j)):
                for name in SERIES_NAMES:
                    sa, sb = si[name], sj[name]
                    if sa.size == 0 and sb.size == 0:
                        checks.append(SeriesCheck((i, j), fidx, name, None, True, note="both empty"))
                        continue
                    if sa.size == 0 or sb.size == 0:
                        checks.append(SeriesCheck((i, j), fidx, name, None, False, note="presence mismatch"))
                        hard_fail = True
                        continue
                    res = ks_two_sample(sa, sb, method=method)
                    ok = res.p_value >= alpha
                    results.append(ok)
                    checks.append(SeriesCheck((i, j), fidx, name, res, ok))
        if hard_fail:
            ok_pair = False
        elif strict:
            ok_pair = all(results)
        else:
            ok_pair = not results or (sum(results) >= len(results) / 2)
        matrix[i, j] = matrix[j, i] = ok_pair
    return ReproducibilityReport(
        artifact_names=[str(getattr(a, "pcap_path", f"artifact-{k}")) for k, a in enumerate(artifacts)],
        alpha=alpha,
        pass_matrix=matrix,
        checks=checks,
    )
