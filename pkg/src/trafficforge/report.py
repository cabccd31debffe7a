"""CSV-plus-figure writers for the experiment reports.

Every report lands as a pair of files side by side in the output directory:
a delimited table (the machine-readable result) and a rendered PNG of the
same numbers (the glanceable one).  Three report shapes are covered:

* reproducibility — the pairwise K-S verdict table and its pass matrix;
* delay fitting — accuracy per (family, mean, jitter) grid point, sorted
  ascending so the hardest-to-distinguish profile tops the table;
* classification — per-class precision/recall as a function of the packet
  prefix length k.

The writers are deterministic: identical inputs produce byte-identical CSV
and PNG files, so report outputs participate in the same reproducibility
contract as the capture artifacts themselves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .learn import CurveReport  # noqa: E402
from .stats import ReproducibilityReport  # noqa: E402

__all__ = [
    "DelayFitRow",
    "write_reproducibility_report",
    "write_delay_fit_report",
    "write_classification_report",
]

_PNG_METADATA = {"Software": "trafficforge"}  # drop the library's version string


@dataclass(frozen=True)
class DelayFitRow:
    """One grid point of the delay-fitting study.

    ``accuracy`` is the distinguishability of the shaped traffic against the
    reference condition: 0.5 means the forest cannot tell them apart, 1.0
    means it always can.  The special families ``baseline`` (no shaping) and
    ``constant`` (fixed delay, no jitter) anchor the two ends of the table.
    """

    family: str
    mean_ms: float
    jitter_ms: float
    accuracy: float

    @property
    def label(self) -> str:
        if self.family == "baseline":
            return "baseline (no delay)"
        return f"{self.family} {self.mean_ms:g}±{self.jitter_ms:g} ms"


def _prepare(out_dir: Path | str, stem: str) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / f"{stem}.csv", out_dir / f"{stem}.png"


def _save(fig, png_path: Path) -> None:
    fig.savefig(png_path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def write_reproducibility_report(
    report: ReproducibilityReport, out_dir: Path | str, stem: str = "reproducibility"
) -> tuple[Path, Path]:
    """One CSV row per K-S check, plus a pass-matrix figure."""
    csv_path, png_path = _prepare(out_dir, stem)

    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["artifact_i", "artifact_j", "flow_index", "series", "n1", "n2",
             "statistic_d", "p_value", "passed", "note"]
        )
        for chk in report.checks:
            if chk.result is None:
                d_s = p_s = n1_s = n2_s = ""
            else:
                d_s = f"{chk.result.statistic_d:.6f}"
                p_s = f"{chk.result.p_value:.6f}"
                n1_s = str(chk.result.n1)
                n2_s = str(chk.result.n2)
            writer.writerow(
                [chk.pair[0], chk.pair[1], chk.flow_index, chk.series,
                 n1_s, n2_s, d_s, p_s, str(chk.passed).lower(), chk.note]
            )

    n = report.pass_matrix.shape[0]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.3 * n + 2.0),) * 2)
    ax.imshow(report.pass_matrix.astype(float), cmap="RdYlGn", vmin=0.0, vmax=1.0)
    ax.set_xlabel("artifact index")
    ax.set_ylabel("artifact index")
    ax.set_title(
        f"pairwise K-S verdicts (alpha={report.alpha:g}) — "
        f"pass fraction {report.pass_fraction:.3f}"
    )
    fig.tight_layout()
    _save(fig, png_path)
    return csv_path, png_path


def write_delay_fit_report(
    rows: Sequence[DelayFitRow], out_dir: Path | str, stem: str = "delay_fit"
) -> tuple[Path, Path]:
    """The grid-search table sorted ascending by accuracy, plus a bar chart.

    Ascending order puts the best-matching profile (lowest accuracy, i.e.
    closest to indistinguishable) at the top of the table and chart.
    """
    if not rows:
        raise ValueError("no delay-fit rows to report")
    ordered = sorted(rows, key=lambda r: (r.accuracy, r.family, r.mean_ms, r.jitter_ms))

    csv_path, png_path = _prepare(out_dir, stem)
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["family", "mean_ms", "jitter_ms", "accuracy"])
        for row in ordered:
            writer.writerow(
                [row.family, f"{row.mean_ms:g}", f"{row.jitter_ms:g}", f"{row.accuracy:.6f}"]
            )

    fig, ax = plt.subplots(figsize=(7.0, max(2.5, 0.28 * len(ordered) + 1.2)))
    positions = np.arange(len(ordered))[::-1]  # best at the top
    ax.barh(positions, [r.accuracy for r in ordered], color="#4878a8")
    ax.set_yticks(positions)
    ax.set_yticklabels([r.label for r in ordered], fontsize=7)
    ax.axvline(0.5, color="black", linestyle="--", linewidth=0.8)
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("distinguishability vs reference (0.5 = indistinguishable)")
    ax.set_title("delay-profile fit, best match first")
    fig.tight_layout()
    _save(fig, png_path)
    return csv_path, png_path


def write_classification_report(
    curves: CurveReport,
    out_dir: Path | str,
    stem: str = "classification",
    class_names: Mapping[int, str] | None = None,
) -> tuple[Path, Path]:
    """Long-format (k, class, precision, recall) CSV plus the curve figure."""
    if not curves.points:
        raise ValueError("no curve points to report")
    names = class_names or {}

    def display(cls) -> str:
        return str(names.get(cls, cls))

    csv_path, png_path = _prepare(out_dir, stem)
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "class", "precision", "recall"])
        for row in curves.rows():
            writer.writerow(
                [row["k"], display(row["class"]),
                 f"{row['precision']:.6f}", f"{row['recall']:.6f}"]
            )

    ks = [p.k for p in curves.points]
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for cls in curves.points[0].matrix.classes:
        ax.plot(
            ks,
            [p.matrix.precision(cls) for p in curves.points],
            linewidth=0.9,
            alpha=0.45,
            label=f"precision {display(cls)}",
        )
    ax.plot(ks, [p.matrix.macro_precision for p in curves.points],
            linewidth=2.2, color="black", label="macro precision")
    ax.plot(ks, [p.matrix.macro_recall for p in curves.points],
            linewidth=2.2, color="black", linestyle="--", label="macro recall")
    ax.set_xlabel("packets seen (k)")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(ks)
    ax.legend(fontsize=7, ncol=2)
    ax.set_title("per-scenario precision/recall vs packet prefix length")
    fig.tight_layout()
    _save(fig, png_path)
    return csv_path, png_path
