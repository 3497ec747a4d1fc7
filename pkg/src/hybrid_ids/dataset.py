"""KDD-format connection records: parsing, dedup, label taxonomy, encoding,
class rebalancing, standardization, and stratified splitting.

The encoded feature vector has exactly 41 columns: ``service`` and ``flag``
are dropped, ``protocol_type`` becomes three indicator columns (tcp, udp,
icmp) in place, and the remaining 37 numeric columns pass through. See
``ENCODED_COLUMNS`` for the fixed order.
"""

from __future__ import annotations

import enum
import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ParseError, UnmappedLabelError
from .persist import (
    atomic_write,
    check_version,
    fmt_floats,
    parse_floats,
    stats_fingerprint,
    version_line,
)

# Canonical KDD column order; the 42nd field is the label.
KDD_COLUMNS = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins",
    "logged_in", "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files",
    "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate",
    "srv_rerror_rate", "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate",
    "dst_host_count", "dst_host_srv_count", "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate", "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)

N_RAW_FEATURES = len(KDD_COLUMNS)  # 41
PROTOCOL_INDEX = 1
SERVICE_INDEX = 2
FLAG_INDEX = 3
PROTOCOLS = ("tcp", "udp", "icmp")
_SYMBOLIC = frozenset((PROTOCOL_INDEX, SERVICE_INDEX, FLAG_INDEX))
_NUMERIC_INDICES = tuple(i for i in range(N_RAW_FEATURES) if i not in _SYMBOLIC)

# Fixed encoded order: protocol_type expands in place, service/flag drop out.
ENCODED_COLUMNS = (
    ("duration", "protocol_tcp", "protocol_udp", "protocol_icmp")
    + KDD_COLUMNS[4:]
)
N_FEATURES = len(ENCODED_COLUMNS)  # 41


class CoarseLabel(enum.IntEnum):
    """The five connection classes in the fixed canonical order used for
    every tie-break in the package."""

    NORMAL = 0
    DOS = 1
    PROBE = 2
    R2L = 3
    U2R = 4

    def __str__(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "CoarseLabel":
        canon = name.strip().lower()
        if canon == "rtl":  # accepted alias for r2l
            canon = "r2l"
        try:
            return cls[canon.upper()]
        except KeyError:
            raise ValueError(f"unknown coarse class '{name}'") from None


COARSE_NAMES = tuple(str(c) for c in CoarseLabel)

# Fine labels of the KDD training data mapped to their attack families.
_DEFAULT_TAXONOMY = {
    "normal": CoarseLabel.NORMAL,
    "back": CoarseLabel.DOS,
    "land": CoarseLabel.DOS,
    "neptune": CoarseLabel.DOS,
    "pod": CoarseLabel.DOS,
    "smurf": CoarseLabel.DOS,
    "teardrop": CoarseLabel.DOS,
    "ipsweep": CoarseLabel.PROBE,
    "nmap": CoarseLabel.PROBE,
    "portsweep": CoarseLabel.PROBE,
    "satan": CoarseLabel.PROBE,
    "ftp_write": CoarseLabel.R2L,
    "guess_passwd": CoarseLabel.R2L,
    "imap": CoarseLabel.R2L,
    "multihop": CoarseLabel.R2L,
    "phf": CoarseLabel.R2L,
    "spy": CoarseLabel.R2L,
    "warezclient": CoarseLabel.R2L,
    "warezmaster": CoarseLabel.R2L,
    "buffer_overflow": CoarseLabel.U2R,
    "loadmodule": CoarseLabel.U2R,
    "perl": CoarseLabel.U2R,
    "rootkit": CoarseLabel.U2R,
}


class Taxonomy:
    """Total mapping from fine attack labels to coarse classes.

    Unknown labels raise :class:`UnmappedLabelError` rather than being
    guessed; callers extend the table via config when feeding data that
    contains labels outside the KDD training set.
    """

    def __init__(self, mapping: dict[str, CoarseLabel]):
        self._mapping = dict(mapping)

    @classmethod
    def default(cls) -> "Taxonomy":
        return cls(_DEFAULT_TAXONOMY)

    def coarse(self, fine_label: str) -> CoarseLabel:
        try:
            return self._mapping[fine_label]
        except KeyError:
            raise UnmappedLabelError(fine_label) from None

    def __contains__(self, fine_label: str) -> bool:
        return fine_label in self._mapping

    def extended(self, extra: dict[str, CoarseLabel]) -> "Taxonomy":
        merged = dict(self._mapping)
        merged.update(extra)
        return Taxonomy(merged)

    def items(self):
        return sorted(self._mapping.items())


def map_fine_to_coarse(taxonomy: Taxonomy, fine_label: str) -> CoarseLabel:
    return taxonomy.coarse(fine_label)


@dataclass(frozen=True, slots=True)
class RawRecord:
    """One parsed KDD connection line.

    ``fields`` keeps the 41 feature values as the original strings so that
    duplicate detection is string-exact; numeric conversion happens at
    encode time.
    """

    fields: tuple[str, ...]
    fine_label: str


def parse_kdd_line(line: str, line_no: int = 1, labeled: bool = True) -> RawRecord:
    """Parse one comma-separated KDD record.

    A trailing '.' on the label is stripped. ``labeled=False`` accepts
    41-field lines (prediction inputs without ground truth); the record
    then carries an empty fine label.
    """
    parts = line.strip().split(",")
    expected = N_RAW_FEATURES + 1 if labeled else N_RAW_FEATURES
    if len(parts) != expected:
        raise ParseError(f"expected {expected} fields, got {len(parts)}", line_no)
    if labeled:
        fine_label = parts[-1].rstrip(".")
        if not fine_label:
            raise ParseError("empty label field", line_no, "label")
        parts = parts[:-1]
    else:
        fine_label = ""
    if parts[PROTOCOL_INDEX] not in PROTOCOLS:
        raise ParseError(
            f"unknown protocol_type '{parts[PROTOCOL_INDEX]}'", line_no, "protocol_type"
        )
    for i in _NUMERIC_INDICES:
        try:
            value = float(parts[i])
        except ValueError:
            raise ParseError(
                f"unparseable numeric value '{parts[i]}'", line_no, KDD_COLUMNS[i]
            ) from None
        if value < 0:
            raise ParseError(
                f"negative value {parts[i]}", line_no, KDD_COLUMNS[i]
            )
    return RawRecord(fields=tuple(parts), fine_label=fine_label)


def read_kdd_file(path: str | Path) -> Iterator[RawRecord]:
    """Yield records from an uncompressed or gzip KDD file.

    Blank lines are skipped; any malformed line aborts with a
    :class:`ParseError` naming the line number.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield parse_kdd_line(line, line_no)


def deduplicate(records: Sequence[RawRecord]) -> list[RawRecord]:
    """Collapse exact duplicates (all 41 fields and the label equal) to the
    first occurrence, preserving relative order."""
    seen: set[tuple] = set()
    out = []
    for rec in records:
        key = (rec.fields, rec.fine_label)
        if key not in seen:
            seen.add(key)
            out.append(rec)
    return out


@dataclass(frozen=True, slots=True)
class EncodedRecord:
    x: np.ndarray  # 41 floats, fixed ENCODED_COLUMNS order
    fine_label: str
    coarse_label: CoarseLabel


def encode_features(record: RawRecord) -> np.ndarray:
    """Numeric 41-vector for one record (drop service/flag, one-hot protocol)."""
    f = record.fields
    x = np.empty(N_FEATURES, dtype=np.float64)
    x[0] = float(f[0])
    proto = f[PROTOCOL_INDEX]
    x[1] = 1.0 if proto == "tcp" else 0.0
    x[2] = 1.0 if proto == "udp" else 0.0
    x[3] = 1.0 if proto == "icmp" else 0.0
    for out_i, raw_i in enumerate(range(4, N_RAW_FEATURES), start=4):
        x[out_i] = float(f[raw_i])
    return x


def encode(record: RawRecord, taxonomy: Taxonomy) -> EncodedRecord:
    return EncodedRecord(
        x=encode_features(record),
        fine_label=record.fine_label,
        coarse_label=taxonomy.coarse(record.fine_label),
    )


@dataclass
class Provenance:
    source: str = ""
    deduplicated: bool = False
    sampling: str = ""

    def describe(self) -> str:
        bits = [f"source={self.source or '-'}", f"dedup={str(self.deduplicated).lower()}"]
        if self.sampling:
            bits.append(f"sampling={self.sampling}")
        return " ".join(bits)


class Dataset:
    """Encoded records held as parallel arrays, immutable by convention.

    ``X`` is (n, 41) float64, ``fine_labels`` an object array of strings,
    ``coarse`` an int array of :class:`CoarseLabel` values.
    """

    def __init__(
        self,
        X: np.ndarray,
        fine_labels: Sequence[str],
        coarse: Sequence[int],
        provenance: Provenance | None = None,
    ):
        self.X = np.asarray(X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] != N_FEATURES:
            raise ValueError(f"feature matrix must be (n, {N_FEATURES})")
        self.fine_labels = np.asarray(list(fine_labels), dtype=object)
        self.coarse = np.asarray(coarse, dtype=np.int64)
        if not (len(self.X) == len(self.fine_labels) == len(self.coarse)):
            raise ValueError("X, fine_labels and coarse must have equal length")
        self.provenance = provenance or Provenance()

    @classmethod
    def from_records(
        cls, records: Iterable[EncodedRecord], provenance: Provenance | None = None
    ) -> "Dataset":
        records = list(records)
        if records:
            X = np.stack([r.x for r in records])
        else:
            X = np.empty((0, N_FEATURES))
        return cls(
            X,
            [r.fine_label for r in records],
            [int(r.coarse_label) for r in records],
            provenance,
        )

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            self.X[indices],
            self.fine_labels[indices],
            self.coarse[indices],
            Provenance(
                self.provenance.source,
                self.provenance.deduplicated,
                self.provenance.sampling,
            ),
        )

    def counts_by_coarse(self) -> dict[CoarseLabel, int]:
        counts = np.bincount(self.coarse, minlength=len(CoarseLabel))
        return {c: int(counts[c]) for c in CoarseLabel}

    def counts_by_fine(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for label in self.fine_labels:
            out[label] = out.get(label, 0) + 1
        return dict(sorted(out.items()))


def coarse_counts(records: Sequence[RawRecord], taxonomy: Taxonomy) -> dict[CoarseLabel, int]:
    """Per-class record counts for raw (pre-encoding) records."""
    out = {c: 0 for c in CoarseLabel}
    for rec in records:
        out[taxonomy.coarse(rec.fine_label)] += 1
    return out


@dataclass(frozen=True)
class SamplingPlan:
    """Per-class target counts. Classes above target are drawn down without
    replacement, classes below keep every original and add draws with
    replacement."""

    targets: dict[CoarseLabel, int]
    rng_seed: int = 0

    # Targets the source material balances the training split to.
    DEFAULT_TARGETS = {
        CoarseLabel.NORMAL: 39524,
        CoarseLabel.DOS: 27285,
        CoarseLabel.PROBE: 2131,
        CoarseLabel.R2L: 999,
        CoarseLabel.U2R: 86,
    }

    @classmethod
    def default(cls, rng_seed: int = 0) -> "SamplingPlan":
        return cls(dict(cls.DEFAULT_TARGETS), rng_seed)

    def describe(self) -> str:
        return ",".join(f"{c}:{self.targets[c]}" for c in CoarseLabel if c in self.targets)


def resample(ds: Dataset, plan: SamplingPlan) -> Dataset:
    """Rebalance per-class counts to the plan's exact targets.

    Deterministic for a given seed: classes are processed in canonical
    order and kept rows preserve their original relative order.
    """
    for c in CoarseLabel:
        if c not in plan.targets:
            raise ValueError(f"sampling plan missing target for class '{c}'")
        if plan.targets[c] < 0:
            raise ValueError(f"negative target for class '{c}'")
    rng = np.random.default_rng(plan.rng_seed)
    pieces = []
    for c in CoarseLabel:
        idx = np.flatnonzero(ds.coarse == int(c))
        target = plan.targets[c]
        n = len(idx)
        if n == 0:
            if target > 0:
                raise ValueError(f"cannot sample {target} records for empty class '{c}'")
            continue
        if target < n:
            chosen = rng.choice(n, size=target, replace=False)
            pieces.append(idx[np.sort(chosen)])
        elif target > n:
            extra = rng.choice(n, size=target - n, replace=True)
            pieces.append(np.concatenate([idx, idx[extra]]))
        else:
            pieces.append(idx)
    order = np.concatenate(pieces) if pieces else np.empty(0, dtype=np.int64)
    out = ds.subset(order)
    out.provenance.sampling = plan.describe()
    return out


@dataclass(frozen=True)
class StandardizationStats:
    """Per-column mean and population stddev fitted on training data.

    Zero-variance columns are recorded and scaled by divisor 1 so constant
    features map to 0 instead of NaN.
    """

    mean: np.ndarray
    stddev: np.ndarray

    @property
    def divisor(self) -> np.ndarray:
        return np.where(self.stddev == 0.0, 1.0, self.stddev)

    @property
    def zero_variance_columns(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.stddev == 0.0))

    @property
    def fingerprint(self) -> str:
        return stats_fingerprint(self.mean, self.stddev)


def standardize_fit(ds: Dataset) -> StandardizationStats:
    if len(ds) == 0:
        raise ValueError("cannot fit standardization on an empty dataset")
    mean = ds.X.mean(axis=0)
    stddev = ds.X.std(axis=0)  # population stddev
    return StandardizationStats(mean=mean, stddev=stddev)


def standardize_apply(stats: StandardizationStats, x: np.ndarray) -> np.ndarray:
    """Pure transform (x - mean) / stddev; accepts a vector or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: expected {stats.mean.shape[0]}, got {x.shape[-1]}"
        )
    return (x - stats.mean) / stats.divisor


def standardize_dataset(stats: StandardizationStats, ds: Dataset) -> Dataset:
    out = Dataset(
        standardize_apply(stats, ds.X), ds.fine_labels, ds.coarse, ds.provenance
    )
    return out


def _per_class_shuffled(ds: Dataset, rng: np.random.Generator) -> list[np.ndarray]:
    groups = []
    for c in CoarseLabel:
        idx = np.flatnonzero(ds.coarse == int(c))
        if len(idx):
            groups.append(idx[rng.permutation(len(idx))])
    return groups


def stratified_kfold(
    ds: Dataset, k: int, seed: int = 0
) -> list[tuple[Dataset, Dataset]]:
    """Partition into k folds with per-class fold sizes within +-1.

    Returns (train, validation) dataset pairs; the validation folds are
    pairwise disjoint and their union is the dataset.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    counts = ds.counts_by_coarse()
    for c, n in counts.items():
        if 0 < n < k:
            raise ValueError(f"class '{c}' has {n} records, fewer than k={k}")
    rng = np.random.default_rng(seed)
    fold_members: list[list[np.ndarray]] = [[] for _ in range(k)]
    for idx in _per_class_shuffled(ds, rng):
        for f in range(k):
            fold_members[f].append(idx[f::k])
    splits = []
    all_idx = np.arange(len(ds))
    for f in range(k):
        val_idx = np.sort(np.concatenate(fold_members[f]))
        mask = np.ones(len(ds), dtype=bool)
        mask[val_idx] = False
        splits.append((ds.subset(all_idx[mask]), ds.subset(val_idx)))
    return splits


def stratified_split(
    ds: Dataset, test_fraction: float, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Single train/test split, stratified by coarse class."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    test_parts, train_parts = [], []
    for idx in _per_class_shuffled(ds, rng):
        n_test = int(np.floor(len(idx) * test_fraction + 0.5))
        n_test = min(n_test, len(idx))
        test_parts.append(idx[:n_test])
        train_parts.append(idx[n_test:])
    train_idx = np.sort(np.concatenate(train_parts)) if train_parts else np.empty(0, int)
    test_idx = np.sort(np.concatenate(test_parts)) if test_parts else np.empty(0, int)
    return ds.subset(train_idx), ds.subset(test_idx)


# ---------------------------------------------------------------------------
# Processed-dataset files: version line, provenance, header, CSV rows.

def save_dataset(path: str | Path, ds: Dataset) -> None:
    lines = [
        "# " + version_line("dataset"),
        f"# provenance: {ds.provenance.describe()}",
        ",".join(ENCODED_COLUMNS + ("fine_label", "coarse_label")),
    ]
    for i in range(len(ds)):
        row = ",".join(repr(float(v)) for v in ds.X[i])
        lines.append(f"{row},{ds.fine_labels[i]},{CoarseLabel(ds.coarse[i])}")
    atomic_write(path, "\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    with open(path) as fh:
        check_version(fh.readline(), "dataset")
        provenance_line = fh.readline().strip()
        header = fh.readline().strip()
        expected_header = ",".join(ENCODED_COLUMNS + ("fine_label", "coarse_label"))
        if header != expected_header:
            raise ValueError(f"unexpected dataset header in {path}")
        X, fine, coarse = [], [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != N_FEATURES + 2:
                raise ValueError(f"bad row width in {path}: {len(parts)}")
            X.append([float(v) for v in parts[:N_FEATURES]])
            fine.append(parts[N_FEATURES])
            coarse.append(int(CoarseLabel.from_name(parts[N_FEATURES + 1])))
    source = ""
    if provenance_line.startswith("# provenance: "):
        source = provenance_line[len("# provenance: "):]
    prov = Provenance(source=source)
    X_arr = np.array(X, dtype=np.float64) if X else np.empty((0, N_FEATURES))
    return Dataset(X_arr, fine, coarse, prov)


def save_stats(path: str | Path, stats: StandardizationStats) -> None:
    text = "\n".join(
        [
            version_line("stats"),
            f"id={stats.fingerprint}",
            "mean " + fmt_floats(stats.mean),
            "stddev " + fmt_floats(stats.stddev),
        ]
    )
    atomic_write(path, text + "\n")


def load_stats(path: str | Path) -> StandardizationStats:
    with open(path) as fh:
        check_version(fh.readline(), "stats")
        fh.readline()  # id line, recomputed below
        mean_line = fh.readline().split(maxsplit=1)
        std_line = fh.readline().split(maxsplit=1)
    if mean_line[0] != "mean" or std_line[0] != "stddev":
        raise ValueError(f"malformed stats file {path}")
    return StandardizationStats(
        mean=parse_floats(mean_line[1], N_FEATURES),
        stddev=parse_floats(std_line[1], N_FEATURES),
    )


def save_taxonomy(path: str | Path, taxonomy: Taxonomy) -> None:
    lines = [version_line("taxonomy")]
    lines += [f"{fine} {coarse}" for fine, coarse in taxonomy.items()]
    atomic_write(path, "\n".join(lines) + "\n")


def load_taxonomy(path: str | Path) -> Taxonomy:
    mapping: dict[str, CoarseLabel] = {}
    with open(path) as fh:
        check_version(fh.readline(), "taxonomy")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fine, coarse = line.split()
            mapping[fine] = CoarseLabel.from_name(coarse)
    return Taxonomy(mapping)
