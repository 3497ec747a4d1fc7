"""Sequential hybrid pipeline: both anomaly detectors run in parallel, the
union of their alarms (plus any disagreement) routes to the misuse stage,
and the misuse stage's nearest-signature verdict verifies each alarm and
refines it into a fine attack class.

A record is never emitted as an attack unless at least one anomaly model
flagged it: the misuse stage can only confirm, refine, or trim alarms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import centroids as misuse
from . import neural_net as nn
from . import random_forest as rf
from .centroids import CentroidModel
from .dataset import (
    CoarseLabel,
    Dataset,
    RawRecord,
    StandardizationStats,
    Taxonomy,
    encode_features,
    load_stats,
    load_taxonomy,
    save_stats,
    save_taxonomy,
    standardize_apply,
    standardize_dataset,
    standardize_fit,
)
from .neural_net import MLPModel, TrainConfig
from .persist import atomic_write, check_version, version_line
from .random_forest import ForestConfig, ForestModel

log = logging.getLogger(__name__)

MODES = ("verify", "classify")


def route(nn_label: CoarseLabel, rf_label: CoarseLabel) -> bool:
    """True when the record must go to the misuse stage: either detector
    raised an alarm, or the two disagree."""
    return (
        nn_label != CoarseLabel.NORMAL
        or rf_label != CoarseLabel.NORMAL
        or nn_label != rf_label
    )


@dataclass(frozen=True)
class FinalPrediction:
    coarse: CoarseLabel
    fine: str | None
    routed: bool
    nn_vote: CoarseLabel
    rf_vote: CoarseLabel
    misuse_vote: CoarseLabel | None


@dataclass
class RoutingStats:
    total: int = 0
    routed: int = 0
    trimmed: int = 0  # routed alarms resolved to normal by the misuse stage
    confirmed: int = 0  # routed alarms confirmed as attacks
    errors: int = 0

    def describe(self) -> str:
        return (
            f"records={self.total} routed={self.routed} trimmed={self.trimmed} "
            f"confirmed={self.confirmed} errors={self.errors}"
        )


@dataclass
class HybridConfig:
    nn: TrainConfig = field(default_factory=TrainConfig)
    rf: ForestConfig = field(default_factory=ForestConfig)
    clusters_per_label: int = 1
    misuse_seed: int = 0
    mode: str = "verify"
    prune_forest: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class HybridModel:
    mlp: MLPModel
    forest: ForestModel
    centroids: CentroidModel
    stats: StandardizationStats
    taxonomy: Taxonomy
    mode: str = "verify"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def train_all(
    train: Dataset, config: HybridConfig, taxonomy: Taxonomy | None = None
) -> HybridModel:
    """Fit standardization on the training split, then train all three
    sub-models on the same standardized data.

    When no taxonomy is given, the fine-to-coarse mapping observed in the
    training data is recorded in the manifest.
    """
    config.validate()
    stats = standardize_fit(train)
    std_train = standardize_dataset(stats, train)

    mlp = nn.train(std_train, config.nn)
    mlp.stats_fingerprint = stats.fingerprint

    forest = rf.train_forest(std_train, config.rf)
    forest.stats_fingerprint = stats.fingerprint
    if config.prune_forest:
        forest = rf.prune_and_retrain(std_train, forest, config.rf)
        forest.stats_fingerprint = stats.fingerprint

    cen = misuse.fit(std_train, config.clusters_per_label, config.misuse_seed)
    cen.stats_fingerprint = stats.fingerprint
    collisions = misuse.signature_collisions(cen)
    if collisions:
        log.warning("signature collisions (shadowed centroids): %s", ", ".join(collisions))

    if taxonomy is None:
        taxonomy = Taxonomy({e.fine_label: e.coarse_label for e in cen.entries})
    return HybridModel(
        mlp=mlp, forest=forest, centroids=cen,
        stats=stats, taxonomy=taxonomy, mode=config.mode,
    )


def _compose(
    h: HybridModel,
    nn_vote: CoarseLabel,
    rf_vote: CoarseLabel,
    x_std: np.ndarray,
) -> FinalPrediction:
    if not route(nn_vote, rf_vote):
        return FinalPrediction(
            coarse=CoarseLabel.NORMAL, fine=None, routed=False,
            nn_vote=nn_vote, rf_vote=rf_vote, misuse_vote=None,
        )
    fine, coarse, _dist = misuse.assign(h.centroids, x_std)
    return FinalPrediction(
        coarse=coarse, fine=fine, routed=True,
        nn_vote=nn_vote, rf_vote=rf_vote, misuse_vote=coarse,
    )


def predict(h: HybridModel, record: RawRecord) -> FinalPrediction:
    """Full chain for one parsed record: encode, standardize, anomaly votes,
    routing, misuse verdict."""
    x = standardize_apply(h.stats, encode_features(record))
    nn_vote = nn.predict(h.mlp, x)
    rf_vote = rf.predict(h.forest, x)
    return _compose(h, nn_vote, rf_vote, x)


def batch_predict(
    h: HybridModel, records: Iterable[RawRecord]
) -> tuple[list[FinalPrediction | None], RoutingStats]:
    """Per-record predictions plus routing statistics.

    Per-record failures yield None in the output list and count as errors
    instead of aborting the batch.
    """
    out: list[FinalPrediction | None] = []
    stats = RoutingStats()
    for record in records:
        try:
            pred = predict(h, record)
        except Exception as exc:  # record-level fault, keep going
            log.warning("prediction failed: %s", exc)
            out.append(None)
            stats.total += 1
            stats.errors += 1
            continue
        out.append(pred)
        _tally(stats, pred)
    return out, stats


def _tally(stats: RoutingStats, pred: FinalPrediction) -> None:
    stats.total += 1
    if pred.routed:
        stats.routed += 1
        if pred.coarse == CoarseLabel.NORMAL:
            stats.trimmed += 1
        else:
            stats.confirmed += 1


def predict_dataset(h: HybridModel, ds: Dataset) -> tuple[list[FinalPrediction], RoutingStats]:
    """Vectorized chain over an encoded (unstandardized) dataset."""
    X = standardize_apply(h.stats, ds.X)
    nn_votes = nn.predict_batch(h.mlp, X)
    rf_votes = rf.predict_batch(h.forest, X)
    routed_mask = (nn_votes != int(CoarseLabel.NORMAL)) | (rf_votes != int(CoarseLabel.NORMAL))
    preds: list[FinalPrediction] = []
    stats = RoutingStats()
    routed_idx = np.flatnonzero(routed_mask)
    fine_by_row: dict[int, tuple[str, CoarseLabel]] = {}
    if len(routed_idx):
        nearest, _ = misuse.assign_batch(h.centroids, X[routed_idx])
        for row, entry_idx in zip(routed_idx, nearest):
            e = h.centroids.entries[int(entry_idx)]
            fine_by_row[int(row)] = (e.fine_label, e.coarse_label)
    for i in range(len(ds)):
        nn_vote = CoarseLabel(int(nn_votes[i]))
        rf_vote = CoarseLabel(int(rf_votes[i]))
        if i in fine_by_row:
            fine, coarse = fine_by_row[i]
            pred = FinalPrediction(
                coarse=coarse, fine=fine, routed=True,
                nn_vote=nn_vote, rf_vote=rf_vote, misuse_vote=coarse,
            )
        else:
            pred = FinalPrediction(
                coarse=CoarseLabel.NORMAL, fine=None, routed=False,
                nn_vote=nn_vote, rf_vote=rf_vote, misuse_vote=None,
            )
        preds.append(pred)
        _tally(stats, pred)
    return preds, stats


# ---------------------------------------------------------------------------
# Persistence: a manifest referencing the sub-model, stats, and taxonomy
# files; loading cross-checks dimensions and stats fingerprints.

MANIFEST_FILES = {
    "mlp": "mlp.model",
    "forest": "forest.model",
    "centroids": "centroids.model",
    "stats": "stats.txt",
    "taxonomy": "taxonomy.txt",
}


def save_hybrid(directory: str | Path, h: HybridModel, manifest_name: str = "hybrid.manifest") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_stats(directory / MANIFEST_FILES["stats"], h.stats)
    save_taxonomy(directory / MANIFEST_FILES["taxonomy"], h.taxonomy)
    nn.save_mlp(directory / MANIFEST_FILES["mlp"], h.mlp)
    rf.save_forest(directory / MANIFEST_FILES["forest"], h.forest)
    misuse.save_centroids(directory / MANIFEST_FILES["centroids"], h.centroids)
    lines = [version_line("hybrid"), f"mode={h.mode}"]
    lines += [f"{key}={name}" for key, name in MANIFEST_FILES.items()]
    manifest = directory / manifest_name
    atomic_write(manifest, "\n".join(lines) + "\n")
    return manifest


def load_hybrid(manifest_path: str | Path) -> HybridModel:
    manifest_path = Path(manifest_path)
    directory = manifest_path.parent
    entries: dict[str, str] = {}
    with open(manifest_path) as fh:
        check_version(fh.readline(), "hybrid")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, value = line.split("=", 1)
            entries[key] = value
    mode = entries.pop("mode", "verify")
    missing = [k for k in MANIFEST_FILES if k not in entries]
    if missing:
        raise ValueError(f"manifest missing entries: {missing}")
    stats = load_stats(directory / entries["stats"])
    taxonomy = load_taxonomy(directory / entries["taxonomy"])
    mlp = nn.load_mlp(directory / entries["mlp"])
    forest = rf.load_forest(directory / entries["forest"])
    cen = misuse.load_centroids(directory / entries["centroids"])
    fingerprint = stats.fingerprint
    for name, got in (
        ("mlp", mlp.stats_fingerprint),
        ("forest", forest.stats_fingerprint),
        ("centroids", cen.stats_fingerprint),
    ):
        if got != fingerprint:
            raise ValueError(
                f"stats fingerprint mismatch: {name} model was standardized with "
                f"'{got}', manifest stats are '{fingerprint}'"
            )
    n_in = stats.mean.shape[0]
    if mlp.dims[0] != n_in or forest.n_features != n_in:
        raise ValueError("model input dimensions disagree with the stats file")
    if cen.entries[0].centroid.shape[0] != n_in:
        raise ValueError("centroid dimension disagrees with the stats file")
    for e in cen.entries:
        if e.fine_label in taxonomy and taxonomy.coarse(e.fine_label) != e.coarse_label:
            raise ValueError(
                f"centroid '{e.fine_label}' is tagged {e.coarse_label} but the "
                f"taxonomy maps it to {taxonomy.coarse(e.fine_label)}"
            )
    return HybridModel(
        mlp=mlp, forest=forest, centroids=cen,
        stats=stats, taxonomy=taxonomy, mode=mode,
    )
