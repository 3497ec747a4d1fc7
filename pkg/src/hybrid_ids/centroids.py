"""Centroid-signature misuse classifier.

One stored centroid per fine attack label (the arithmetic mean of the
label's standardized training vectors); classification picks the entry at
minimum Euclidean distance. The "normal" signature makes alarm
verification possible: an alarm whose nearest centroid is normal is a
false positive.

``clusters_per_label`` > 1 optionally sub-clusters each label with a small
seeded Lloyd iteration, producing several signatures per label.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import CoarseLabel, Dataset
from .persist import atomic_write, check_version, fmt_floats, parse_floats, version_line

_CHUNK = 2048


@dataclass(frozen=True)
class CentroidEntry:
    fine_label: str
    coarse_label: CoarseLabel
    centroid: np.ndarray
    support: int


class CentroidModel:
    """Entries sorted by (fine_label, sub-cluster index); sorting makes the
    minimum-distance tie rule (lexicographically smallest fine label) fall
    out of the first-argmin convention."""

    def __init__(self, entries: list[CentroidEntry], stats_fingerprint: str = ""):
        if not entries:
            raise ValueError("centroid model needs at least one entry")
        self.entries = entries
        self.stats_fingerprint = stats_fingerprint
        self._matrix = np.stack([e.centroid for e in entries])
        self._coarse = np.array([int(e.coarse_label) for e in entries], dtype=np.int64)

    @property
    def fine_labels(self) -> list[str]:
        return [e.fine_label for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Plain k-means on one label's points; returns (centroids, sizes)."""
    distinct = np.unique(X, axis=0)
    k = min(k, len(distinct))
    start = rng.choice(len(distinct), size=k, replace=False)
    centers = distinct[np.sort(start)].copy()
    assignment = None
    for _round in range(100):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignment = np.argmin(d2, axis=1)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(k):
            members = X[assignment == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    sizes = np.bincount(assignment, minlength=k)
    keep = sizes > 0
    return centers[keep], sizes[keep]


def fit(ds: Dataset, clusters_per_label: int = 1, seed: int = 0) -> CentroidModel:
    """Per-fine-label centroids of an already-standardized dataset."""
    if len(ds) == 0:
        raise ValueError("cannot fit centroids on an empty dataset")
    if clusters_per_label < 1:
        raise ValueError("clusters_per_label must be >= 1")
    labels = sorted(set(ds.fine_labels))
    if "normal" not in labels:
        raise ValueError("training data has no 'normal' records; verification impossible")
    rng = np.random.default_rng(seed)
    entries: list[CentroidEntry] = []
    for label in labels:
        mask = ds.fine_labels == label
        points = ds.X[mask]
        coarse = CoarseLabel(int(ds.coarse[mask][0]))
        if clusters_per_label == 1:
            entries.append(
                CentroidEntry(label, coarse, points.mean(axis=0), int(mask.sum()))
            )
        else:
            centers, sizes = _lloyd(points, clusters_per_label, rng)
            for c, s in zip(centers, sizes):
                entries.append(CentroidEntry(label, coarse, c, int(s)))
    return CentroidModel(entries)


def _distances(model: CentroidModel, X: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, chunked to bound memory."""
    out = np.empty((len(X), len(model.entries)))
    for start in range(0, len(X), _CHUNK):
        block = X[start : start + _CHUNK]
        out[start : start + _CHUNK] = (
            (block[:, None, :] - model._matrix[None, :, :]) ** 2
        ).sum(axis=2)
    return out


def assign_batch(model: CentroidModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (entry index, Euclidean distance) of the nearest centroid."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model._matrix.shape[1]:
        raise ValueError(f"expected (n, {model._matrix.shape[1]}) inputs")
    d2 = _distances(model, X)
    nearest = np.argmin(d2, axis=1)
    return nearest, np.sqrt(d2[np.arange(len(X)), nearest])


def assign(model: CentroidModel, x: np.ndarray) -> tuple[str, CoarseLabel, float]:
    """Nearest signature for one standardized vector: (fine label, coarse
    class, distance). Exact distance ties pick the lexicographically
    smallest fine label."""
    x = np.asarray(x, dtype=np.float64)
    idx, dist = assign_batch(model, x[None, :])
    entry = model.entries[int(idx[0])]
    return entry.fine_label, entry.coarse_label, float(dist[0])


def verify_alarm(model: CentroidModel, x: np.ndarray) -> CoarseLabel:
    """Coarse class of the nearest signature; 'normal' clears the alarm."""
    return assign(model, x)[1]


@dataclass
class MisuseEvaluation:
    fine_accuracy: float  # percent, exact fine-label match
    coarse_accuracy: float  # percent, coarse family match
    n_fine_classes: int


def evaluate_misuse(model: CentroidModel, test: Dataset) -> MisuseEvaluation:
    if len(test) == 0:
        raise ValueError("empty test set")
    nearest, _ = assign_batch(model, test.X)
    assigned_fine = np.array(model.fine_labels, dtype=object)[nearest]
    assigned_coarse = model._coarse[nearest]
    fine_acc = 100.0 * float((assigned_fine == test.fine_labels).mean())
    coarse_acc = 100.0 * float((assigned_coarse == test.coarse).mean())
    return MisuseEvaluation(
        fine_accuracy=fine_acc,
        coarse_accuracy=coarse_acc,
        n_fine_classes=len(set(model.fine_labels)),
    )


def signature_collisions(model: CentroidModel) -> list[str]:
    """Fine labels whose own centroid assigns elsewhere (shadowed
    signatures); reported as warnings by the CLI."""
    nearest, _ = assign_batch(model, model._matrix)
    collisions = []
    for i, e in enumerate(model.entries):
        if model.entries[int(nearest[i])].fine_label != e.fine_label:
            collisions.append(e.fine_label)
    return collisions


def save_centroids(path: str | Path, model: CentroidModel) -> None:
    lines = [
        version_line("centroids"),
        f"stats_id={model.stats_fingerprint}",
        f"entries={len(model.entries)}",
    ]
    for e in model.entries:
        lines.append(
            f"entry {e.fine_label} {e.coarse_label} {e.support} " + fmt_floats(e.centroid)
        )
    atomic_write(path, "\n".join(lines) + "\n")


def load_centroids(path: str | Path) -> CentroidModel:
    with open(path) as fh:
        check_version(fh.readline(), "centroids")
        stats_id = fh.readline().strip().split("=", 1)[1]
        n = int(fh.readline().strip().split("=", 1)[1])
        entries = []
        for _ in range(n):
            parts = fh.readline().split(maxsplit=4)
            if len(parts) != 5 or parts[0] != "entry":
                raise ValueError(f"malformed centroid file {path}")
            entries.append(
                CentroidEntry(
                    fine_label=parts[1],
                    coarse_label=CoarseLabel.from_name(parts[2]),
                    support=int(parts[3]),
                    centroid=parse_floats(parts[4]),
                )
            )
    return CentroidModel(entries, stats_fingerprint=stats_id)
