"""Seeded random forest plus the distinguishability / classification studies.

The forest is grown from scratch (axis-aligned Gini splits, bootstrap per
tree, ceil(sqrt(d)) candidate features per split, trees grown to purity,
min-leaf 1) so that every random draw flows from one :class:`SeededRng` and
runs reproduce bit-for-bit.  Prediction is majority vote over trees with ties
broken toward the lowest class id — at both the leaf and the vote level.

Two experiment drivers sit on top:

* ``distinguishability`` — can a forest tell dataset A from dataset B?  Near
  0.5 the two are statistically indistinguishable; the emulation studies use
  this as their quality score, asking how close shaped traffic gets to a
  reference condition.
* ``classification_curves`` — per-class precision/recall as a function of how
  many leading packets (k = 2..12) the classifier may see.

Feature-row builders bridge capture flows into datasets: per-packet
(IAT, size) rows for distinguishability, padded leading-IAT vectors for the
classification curves (short flows pad with the out-of-range sentinel
``PAD_MS`` rather than being dropped).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._forest import draws_needed, grow_tree, tree_votes
from .capture import PAD_MS, FlowRecord
from .randomness import SeededRng

__all__ = [
    "LearnError",
    "LabeledDataset",
    "ForestModel",
    "ConfusionMatrix",
    "CurvePoint",
    "CurveReport",
    "split_train_test",
    "train_forest",
    "predict",
    "predict_many",
    "distinguishability",
    "classification_curves",
    "packet_feature_rows",
    "iat_vector_rows",
]


class LearnError(ValueError):
    """Bad dataset or model usage."""


# ---------------------------------------------------------------------------
# datasets


@dataclass
class LabeledDataset:
    """Feature matrix + integer class labels (one row per sample)."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise LearnError("features must be a 2-D matrix (rows x features)")
        if self.labels.shape != (self.features.shape[0],):
            raise LearnError(
                f"got {self.labels.shape[0] if self.labels.ndim == 1 else '?'} labels "
                f"for {self.features.shape[0]} feature rows"
            )
        if self.feature_names and len(self.feature_names) != self.features.shape[1]:
            raise LearnError("feature_names length must match feature count")

    @classmethod
    def from_rows(
        cls, rows: Iterable[tuple[Sequence[float], int]], feature_names: tuple[str, ...] = ()
    ) -> "LabeledDataset":
        rows = list(rows)
        if not rows:
            raise LearnError("no rows")
        widths = {len(vec) for vec, _ in rows}
        if len(widths) != 1:
            raise LearnError(f"ragged feature rows: widths {sorted(widths)}")
        features = np.array([vec for vec, _ in rows], dtype=np.float64)
        labels = np.array([label for _, label in rows], dtype=np.int64)
        return cls(features=features, labels=labels, feature_names=feature_names)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def relabeled(self, label: int) -> "LabeledDataset":
        return LabeledDataset(
            features=self.features,
            labels=np.full(len(self), label, dtype=np.int64),
            feature_names=self.feature_names,
        )

    def first_features(self, n: int) -> "LabeledDataset":
        """The leading ``n`` feature columns (for the k-packet curves)."""
        if not 1 <= n <= self.n_features:
            raise LearnError(f"cannot take first {n} of {self.n_features} features")
        return LabeledDataset(
            features=self.features[:, :n],
            labels=self.labels,
            feature_names=self.feature_names[:n] if self.feature_names else (),
        )

    def take(self, index: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            features=self.features[index],
            labels=self.labels[index],
            feature_names=self.feature_names,
        )


def split_train_test(
    data: LabeledDataset, fraction: float = 0.8, rng: SeededRng | None = None
) -> tuple[LabeledDataset, LabeledDataset]:
    """Shuffled deterministic split; train gets ⌊fraction·n⌋ rows."""
    if not 0.0 < fraction < 1.0:
        raise LearnError(f"split fraction must be in (0, 1), got {fraction}")
    if rng is None:
        raise LearnError("split_train_test needs a SeededRng")
    n = len(data)
    n_train = math.floor(fraction * n)
    if n_train == 0 or n_train == n:
        raise LearnError(f"degenerate split: {n_train}/{n - n_train} of {n} rows")
    perm = rng.gen.permutation(n)
    return data.take(perm[:n_train]), data.take(perm[n_train:])


# ---------------------------------------------------------------------------
# the forest


@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) class distribution per node


@dataclass(frozen=True)
class ForestModel:
    """A trained forest; immutable, safe to share across threads."""

    trees: tuple[_Tree, ...]
    classes: np.ndarray  # original class ids, ascending; votes index into this
    n_features: int
    features_per_split: int
    feature_names: tuple[str, ...] = ()

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def train_forest(train: LabeledDataset, n_trees: int, rng: SeededRng) -> ForestModel:
    """Fit ``n_trees`` CARTs on bootstrap resamples of ``train``.

    Candidate features per split = ceil(sqrt(d)).  Bootstrap indices and the
    per-split feature draws both come from ``rng``, consumed in tree order,
    so equal (data, n_trees, seed) yields an identical model.
    """
    if n_trees < 1:
        raise LearnError("n_trees must be >= 1")
    classes = train.classes()
    if classes.size < 2:
        raise LearnError(f"training needs >= 2 classes, got {classes.size}")
    n, d = train.features.shape
    y = np.searchsorted(classes, train.labels).astype(np.int64)
    max_features = math.ceil(math.sqrt(d))

    trees = []
    for _ in range(n_trees):
        boot = rng.gen.integers(0, n, size=n)
        rand_ints = rng.gen.integers(0, 2**31, size=draws_needed(n, max_features))
        feature, threshold, left, right, counts, n_nodes = grow_tree(
            train.features[boot], y[boot], classes.size, max_features, rand_ints
        )
        trees.append(
            _Tree(
                feature=feature[:n_nodes],
                threshold=threshold[:n_nodes],
                left=left[:n_nodes],
                right=right[:n_nodes],
                counts=counts[:n_nodes],
            )
        )
    return ForestModel(
        trees=tuple(trees),
        classes=classes,
        n_features=d,
        features_per_split=max_features,
        feature_names=train.feature_names,
    )


def predict_many(model: ForestModel, features: np.ndarray) -> np.ndarray:
    """Majority vote over trees for each row; ties go to the lowest class id."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise LearnError(
            f"feature matrix must be (rows, {model.n_features}), got {X.shape}"
        )
    tally = np.zeros((X.shape[0], model.classes.size), dtype=np.int64)
    votes = np.empty(X.shape[0], dtype=np.int64)
    for tree in model.trees:
        tree_votes(tree.feature, tree.threshold, tree.left, tree.right, tree.counts, X, votes)
        tally[np.arange(X.shape[0]), votes] += 1
    return model.classes[np.argmax(tally, axis=1)]


def predict(model: ForestModel, features: Sequence[float]) -> int:
    """One row in, one class id out."""
    vec = np.asarray(features, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != model.n_features:
        raise LearnError(f"expected {model.n_features} features, got shape {vec.shape}")
    return int(predict_many(model, vec.reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# scoring


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns predicted; order matches ``classes``."""

    classes: tuple[int, ...]
    counts: np.ndarray

    @classmethod
    def from_predictions(
        cls, y_true: np.ndarray, y_pred: np.ndarray, classes: Sequence[int]
    ) -> "ConfusionMatrix":
        classes = tuple(int(c) for c in classes)
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[index[int(t)], index[int(p)]] += 1
        return cls(classes=classes, counts=counts)

    def _class_index(self, cls_id: int) -> int:
        try:
            return self.classes.index(cls_id)
        except ValueError:
            raise LearnError(f"class {cls_id} not in matrix classes {self.classes}") from None

    def precision(self, cls_id: int) -> float:
        i = self._class_index(cls_id)
        predicted = int(self.counts[:, i].sum())
        return (int(self.counts[i, i]) / predicted) if predicted else 0.0

    def recall(self, cls_id: int) -> float:
        i = self._class_index(cls_id)
        actual = int(self.counts[i, :].sum())
        return (int(self.counts[i, i]) / actual) if actual else 0.0

    @property
    def macro_precision(self) -> float:
        return float(np.mean([self.precision(c) for c in self.classes]))

    @property
    def macro_recall(self) -> float:
        return float(np.mean([self.recall(c) for c in self.classes]))

    @property
    def accuracy(self) -> float:
        total = int(self.counts.sum())
        return (int(np.trace(self.counts)) / total) if total else 0.0


# ---------------------------------------------------------------------------
# experiments


def distinguishability(
    a: LabeledDataset,
    b: LabeledDataset,
    n_trees: int = 1000,
    rng: SeededRng | None = None,
    fraction: float = 0.8,
) -> float:
    """Held-out accuracy of a forest separating dataset a (0) from b (1).

    0.5 means the two are indistinguishable; 1.0 means trivially separable.
    Input labels are ignored — membership is the class.
    """
    if rng is None:
        raise LearnError("distinguishability needs a SeededRng")
    if len(a) == 0 or len(b) == 0:
        raise LearnError("both datasets must be non-empty")
    if a.n_features != b.n_features:
        raise LearnError(
            f"feature widths differ: {a.n_features} vs {b.n_features}"
        )
    combined = LabeledDataset(
        features=np.vstack([a.features, b.features]),
        labels=np.concatenate(
            [np.zeros(len(a), dtype=np.int64), np.ones(len(b), dtype=np.int64)]
        ),
        feature_names=a.feature_names,
    )
    train, test = split_train_test(combined, fraction, rng.child("split"))
    model = train_forest(train, n_trees, rng.child("forest"))
    predictions = predict_many(model, test.features)
    return float(np.mean(predictions == test.labels))


@dataclass(frozen=True)
class CurvePoint:
    """One k on the learning curve: k packets seen → k−1 IAT features."""

    k: int
    matrix: ConfusionMatrix


@dataclass
class CurveReport:
    """Precision/recall per class for every packet budget k = 2..max."""

    points: list[CurvePoint] = field(default_factory=list)

    def point(self, k: int) -> CurvePoint:
        for p in self.points:
            if p.k == k:
                return p
        raise LearnError(f"no curve point for k={k}")

    def macro_precision(self, k: int) -> float:
        return self.point(k).matrix.macro_precision

    def rows(self) -> list[dict]:
        """Long-format table: one row per (k, class) plus macro rows."""
        out: list[dict] = []
        for p in self.points:
            for cls_id in p.matrix.classes:
                out.append(
                    {
                        "k": p.k,
                        "class": cls_id,
                        "precision": p.matrix.precision(cls_id),
                        "recall": p.matrix.recall(cls_id),
                    }
                )
            out.append(
                {
                    "k": p.k,
                    "class": "macro",
                    "precision": p.matrix.macro_precision,
                    "recall": p.matrix.macro_recall,
                }
            )
        return out


def classification_curves(
    train: LabeledDataset,
    test: LabeledDataset,
    max_packets: int = 12,
    n_trees: int = 100,
    rng: SeededRng | None = None,
) -> CurveReport:
    """Retrain on the first k−1 IATs for k = 2..max_packets and score each k.

    Feature columns are leading IATs; a fresh forest is fit per k so later
    packets cannot leak into earlier budgets.
    """
    if rng is None:
        raise LearnError("classification_curves needs a SeededRng")
    if max_packets < 2:
        raise LearnError("max_packets must be >= 2")
    needed = max_packets - 1
    if train.n_features < needed or test.n_features < needed:
        raise LearnError(
            f"need >= {needed} IAT columns, got {train.n_features} train / "
            f"{test.n_features} test"
        )
    train_classes = set(train.classes().tolist())
    missing = sorted(set(test.classes().tolist()) - train_classes)
    if missing:
        raise LearnError(f"test classes absent from train set: {missing}")

    report = CurveReport()
    classes = sorted(train_classes)
    for k in range(2, max_packets + 1):
        model = train_forest(train.first_features(k - 1), n_trees, rng.child("k", k))
        predictions = predict_many(model, test.first_features(k - 1).features)
        matrix = ConfusionMatrix.from_predictions(test.labels, predictions, classes)
        report.points.append(CurvePoint(k=k, matrix=matrix))
    return report


# ---------------------------------------------------------------------------
# feature-row builders (flows -> datasets)


def packet_feature_rows(
    flows: Iterable[FlowRecord], label: int, include_sizes: bool = True
) -> LabeledDataset:
    """Per-packet rows: (IAT to previous packet in flow [ms], size [bytes]).

    The first packet of each flow has no predecessor and contributes no row.
    ``include_sizes=False`` keeps only the IAT column.
    """
    rows: list[tuple[float, ...]] = []
    for flow in flows:
        packets = flow.packets
        for prev, cur in zip(packets, packets[1:]):
            iat_ms = (cur[0] - prev[0]) / 1000.0
            rows.append((iat_ms, float(cur[1])) if include_sizes else (iat_ms,))
    if not rows:
        raise LearnError("no packets with a predecessor: nothing to featurize")
    names = ("iat_ms", "size") if include_sizes else ("iat_ms",)
    features = np.array(rows, dtype=np.float64)
    return LabeledDataset(
        features=features,
        labels=np.full(features.shape[0], label, dtype=np.int64),
        feature_names=names,
    )


def iat_vector_rows(
    flows: Iterable[FlowRecord], label: int, n_packets: int = 12
) -> LabeledDataset:
    """Per-flow rows: IATs of the first ``n_packets`` packets, padded.

    Flows shorter than ``n_packets`` pad the missing IATs with ``PAD_MS``
    (−1 ms, outside the valid range) instead of being dropped; flows with a
    single packet yield an all-padding row.
    """
    if n_packets < 2:
        raise LearnError("n_packets must be >= 2")
    width = n_packets - 1
    rows = []
    for flow in flows:
        times = [t for t, _, _ in flow.packets[:n_packets]]
        iats = [(b - a) / 1000.0 for a, b in zip(times, times[1:])]
        rows.append(iats[:width] + [PAD_MS] * (width - len(iats)))
    if not rows:
        raise LearnError("no flows to featurize")
    names = tuple(f"iat_{i + 1:02d}" for i in range(width))
    features = np.array(rows, dtype=np.float64)
    return LabeledDataset(
        features=features,
        labels=np.full(features.shape[0], label, dtype=np.int64),
        feature_names=names,
    )
