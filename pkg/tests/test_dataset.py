"""Parsing, dedup, taxonomy, encoding, resampling, standardization, folds."""

from __future__ import annotations

import gzip
from collections import Counter

import numpy as np
import pytest

from hybrid_ids.dataset import (
    ENCODED_COLUMNS,
    KDD_COLUMNS,
    N_FEATURES,
    CoarseLabel,
    Dataset,
    Provenance,
    SamplingPlan,
    Taxonomy,
    deduplicate,
    encode,
    encode_features,
    load_dataset,
    load_stats,
    load_taxonomy,
    map_fine_to_coarse,
    parse_kdd_line,
    read_kdd_file,
    resample,
    save_dataset,
    save_stats,
    save_taxonomy,
    standardize_apply,
    standardize_dataset,
    standardize_fit,
    stratified_kfold,
    stratified_split,
)
from hybrid_ids.errors import ParseError, UnmappedLabelError

from conftest import separable_dataset

# Hand-built line in canonical column order: an http connection with
# duration 0, 181 bytes out, 5450 bytes back, 8 connections to the same
# host, 9 to the same destination, 11% same-source-port rate.
SAMPLE_LINE = (
    "0,tcp,http,SF,181,5450,0,0,0,0,0,1,0,0,0,0,0,0,0,0,0,0,8,8,"
    "0.00,0.00,0.00,0.00,1.00,0.00,0.00,9,9,1.00,0.00,0.11,0.00,0.00,0.00,0.00,0.00,normal."
)


def test_parse_sample_line_fields():
    rec = parse_kdd_line(SAMPLE_LINE)
    assert len(rec.fields) == 41
    assert rec.fields[0] == "0"
    assert rec.fields[1] == "tcp"
    assert rec.fields[2] == "http"
    assert rec.fields[3] == "SF"
    assert rec.fields[4] == "181"
    assert rec.fields[5] == "5450"
    assert rec.fields[22] == "8"
    assert rec.fields[31] == "9"
    assert rec.fields[35] == "0.11"
    assert rec.fine_label == "normal"


def test_parse_strips_trailing_dot():
    line = SAMPLE_LINE.replace("normal.", "smurf.")
    assert parse_kdd_line(line).fine_label == "smurf"


def test_parse_label_without_dot():
    line = SAMPLE_LINE.replace("normal.", "neptune")
    assert parse_kdd_line(line).fine_label == "neptune"


def test_parse_wrong_field_count():
    short = ",".join(SAMPLE_LINE.split(",")[:41])
    with pytest.raises(ParseError, match="expected 42 fields"):
        parse_kdd_line(short, line_no=17)
    try:
        parse_kdd_line(short, line_no=17)
    except ParseError as exc:
        assert exc.line_no == 17


def test_parse_unknown_protocol():
    bad = SAMPLE_LINE.replace(",tcp,", ",gre,")
    with pytest.raises(ParseError, match="protocol_type"):
        parse_kdd_line(bad, line_no=3)


def test_parse_bad_numeric_names_column():
    parts = SAMPLE_LINE.split(",")
    parts[4] = "abc"
    with pytest.raises(ParseError, match="src_bytes"):
        parse_kdd_line(",".join(parts))


def test_parse_negative_numeric_rejected():
    parts = SAMPLE_LINE.split(",")
    parts[5] = "-4"
    with pytest.raises(ParseError, match="negative"):
        parse_kdd_line(",".join(parts))


def test_parse_unlabeled_line():
    unlabeled = ",".join(SAMPLE_LINE.split(",")[:41])
    rec = parse_kdd_line(unlabeled, labeled=False)
    assert rec.fine_label == ""
    assert len(rec.fields) == 41


def test_read_kdd_file_gzip(tmp_path):
    path = tmp_path / "mini.gz"
    with gzip.open(path, "wt") as fh:
        fh.write(SAMPLE_LINE + "\n\n" + SAMPLE_LINE.replace("normal.", "smurf.") + "\n")
    records = list(read_kdd_file(path))
    assert [r.fine_label for r in records] == ["normal", "smurf"]


def test_dedup_collapses_exact_duplicates():
    r = parse_kdd_line(SAMPLE_LINE)
    s = parse_kdd_line(SAMPLE_LINE.replace("normal.", "smurf."))
    assert deduplicate([r, r, s]) == [r, s]


def test_dedup_preserves_order_and_is_idempotent():
    lines = [SAMPLE_LINE, SAMPLE_LINE.replace("181", "182"), SAMPLE_LINE]
    records = [parse_kdd_line(l) for l in lines]
    once = deduplicate(records)
    assert once == [records[0], records[1]]
    assert deduplicate(once) == once


def test_dedup_label_participates_in_key():
    same_features_a = parse_kdd_line(SAMPLE_LINE)
    same_features_b = parse_kdd_line(SAMPLE_LINE.replace("normal.", "smurf."))
    assert len(deduplicate([same_features_a, same_features_b])) == 2


def test_taxonomy_mappings():
    tax = Taxonomy.default()
    assert map_fine_to_coarse(tax, "neptune") == CoarseLabel.DOS
    assert map_fine_to_coarse(tax, "normal") == CoarseLabel.NORMAL
    assert map_fine_to_coarse(tax, "guess_passwd") == CoarseLabel.R2L
    assert map_fine_to_coarse(tax, "satan") == CoarseLabel.PROBE
    assert map_fine_to_coarse(tax, "rootkit") == CoarseLabel.U2R


def test_taxonomy_unmapped_label_errors():
    tax = Taxonomy.default()
    with pytest.raises(UnmappedLabelError, match="saint_v2"):
        tax.coarse("saint_v2")


def test_taxonomy_extension():
    tax = Taxonomy.default().extended({"saint": CoarseLabel.PROBE})
    assert tax.coarse("saint") == CoarseLabel.PROBE
    assert "saint" not in Taxonomy.default()


def test_coarse_label_rtl_alias_and_order():
    assert CoarseLabel.from_name("rtl") == CoarseLabel.R2L
    assert CoarseLabel.from_name("R2L") == CoarseLabel.R2L
    assert [int(c) for c in CoarseLabel] == [0, 1, 2, 3, 4]
    assert str(CoarseLabel.DOS) == "dos"


def test_encode_one_hot_blocks():
    tax = Taxonomy.default()
    tcp = encode(parse_kdd_line(SAMPLE_LINE), tax)
    assert tuple(tcp.x[1:4]) == (1.0, 0.0, 0.0)
    udp_line = SAMPLE_LINE.replace(",tcp,", ",udp,")
    assert tuple(encode(parse_kdd_line(udp_line), tax).x[1:4]) == (0.0, 1.0, 0.0)
    icmp_line = SAMPLE_LINE.replace(",tcp,", ",icmp,")
    assert tuple(encode(parse_kdd_line(icmp_line), tax).x[1:4]) == (0.0, 0.0, 1.0)


def test_encode_dimension_and_columns():
    assert len(ENCODED_COLUMNS) == 41
    assert len(KDD_COLUMNS) == 41
    rec = encode(parse_kdd_line(SAMPLE_LINE), Taxonomy.default())
    assert rec.x.shape == (N_FEATURES,)
    assert rec.coarse_label == CoarseLabel.NORMAL
    # spot-check passthrough positions against the documented order
    assert rec.x[0] == 0.0
    assert rec.x[4] == 181.0
    assert rec.x[5] == 5450.0
    assert rec.x[ENCODED_COLUMNS.index("dst_host_same_src_port_rate")] == 0.11


def test_encode_ignores_dropped_columns():
    a = parse_kdd_line(SAMPLE_LINE)
    b = parse_kdd_line(SAMPLE_LINE.replace(",SF,", ",REJ,"))
    c = parse_kdd_line(SAMPLE_LINE.replace(",http,", ",smtp,"))
    assert np.array_equal(encode_features(a), encode_features(b))
    assert np.array_equal(encode_features(a), encode_features(c))


def test_encode_deterministic():
    a = encode_features(parse_kdd_line(SAMPLE_LINE))
    b = encode_features(parse_kdd_line(SAMPLE_LINE))
    assert np.array_equal(a, b)


def _tiny_dataset(counts: dict[CoarseLabel, int], seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    X, fine, coarse = [], [], []
    for c, n in counts.items():
        for _ in range(n):
            X.append(rng.normal(size=N_FEATURES))
            fine.append(f"label_{int(c)}")
            coarse.append(int(c))
    return Dataset(np.array(X), fine, coarse)


def test_resample_hits_targets_exactly():
    ds = _tiny_dataset({c: n for c, n in zip(CoarseLabel, (50, 40, 30, 20, 10))})
    plan = SamplingPlan(
        {
            CoarseLabel.NORMAL: 25,
            CoarseLabel.DOS: 40,
            CoarseLabel.PROBE: 45,
            CoarseLabel.R2L: 20,
            CoarseLabel.U2R: 17,
        },
        rng_seed=3,
    )
    out = resample(ds, plan)
    got = out.counts_by_coarse()
    assert got == plan.targets
    assert len(out) == sum(plan.targets.values())


def test_resample_identity_plan_keeps_multiset():
    ds = _tiny_dataset({c: n for c, n in zip(CoarseLabel, (5, 4, 3, 2, 2))})
    plan = SamplingPlan({c: int(n) for c, n in ds.counts_by_coarse().items()}, rng_seed=1)
    out = resample(ds, plan)
    before = Counter(map(tuple, ds.X))
    after = Counter(map(tuple, out.X))
    assert before == after


def test_resample_upsample_contains_all_originals():
    # 52 -> 86: every original row present, 34 extra drawn from the originals
    ds = _tiny_dataset({CoarseLabel.U2R: 52, CoarseLabel.NORMAL: 5})
    plan = SamplingPlan({CoarseLabel.NORMAL: 5, CoarseLabel.DOS: 0,
                         CoarseLabel.PROBE: 0, CoarseLabel.R2L: 0,
                         CoarseLabel.U2R: 86}, rng_seed=11)
    out = resample(ds, plan)
    originals = Counter(map(tuple, ds.X[ds.coarse == int(CoarseLabel.U2R)]))
    sampled = Counter(map(tuple, out.X[out.coarse == int(CoarseLabel.U2R)]))
    assert sum(sampled.values()) == 86
    for row, n in originals.items():
        assert sampled[row] >= n  # every original survives up-sampling
    assert set(sampled) == set(originals)  # no invented rows


def test_resample_downsample_is_without_replacement():
    ds = _tiny_dataset({CoarseLabel.NORMAL: 30, CoarseLabel.DOS: 4})
    plan = SamplingPlan({CoarseLabel.NORMAL: 12, CoarseLabel.DOS: 4,
                         CoarseLabel.PROBE: 0, CoarseLabel.R2L: 0,
                         CoarseLabel.U2R: 0}, rng_seed=2)
    out = resample(ds, plan)
    rows = list(map(tuple, out.X[out.coarse == int(CoarseLabel.NORMAL)]))
    assert len(rows) == len(set(rows)) == 12
    originals = set(map(tuple, ds.X[ds.coarse == int(CoarseLabel.NORMAL)]))
    assert set(rows) <= originals


def test_resample_empty_class_with_positive_target_errors():
    ds = _tiny_dataset({CoarseLabel.NORMAL: 5})
    plan = SamplingPlan({CoarseLabel.NORMAL: 5, CoarseLabel.DOS: 3,
                         CoarseLabel.PROBE: 0, CoarseLabel.R2L: 0,
                         CoarseLabel.U2R: 0}, rng_seed=0)
    with pytest.raises(ValueError, match="empty class"):
        resample(ds, plan)


def test_resample_deterministic_per_seed():
    ds = _tiny_dataset({c: 20 for c in CoarseLabel})
    plan = SamplingPlan({c: 10 for c in CoarseLabel}, rng_seed=5)
    a = resample(ds, plan)
    b = resample(ds, plan)
    assert np.array_equal(a.X, b.X)


def test_standardize_hand_case():
    X = np.zeros((2, N_FEATURES))
    X[0, 0], X[1, 0] = 1.0, 3.0
    ds = Dataset(X, ["normal", "normal"], [0, 0])
    stats = standardize_fit(ds)
    assert stats.mean[0] == 2.0
    assert stats.stddev[0] == 1.0  # population stddev of {1, 3}
    out = standardize_apply(stats, ds.X)
    assert out[0, 0] == -1.0 and out[1, 0] == 1.0


def test_standardize_constant_column_maps_to_zero():
    X = np.full((3, N_FEATURES), 7.0)
    ds = Dataset(X, ["a"] * 3, [0] * 3)
    stats = standardize_fit(ds)
    assert 0 in stats.zero_variance_columns
    out = standardize_apply(stats, ds.X)
    assert np.all(out == 0.0)


def test_standardize_fit_then_apply_centers_brute_force():
    ds = separable_dataset(n_per_label=15, seed=4)
    stats = standardize_fit(ds)
    out = standardize_apply(stats, ds.X)
    # independent re-check: plain per-column mean of the transformed data
    for j in range(N_FEATURES):
        assert abs(sum(out[:, j]) / len(out)) < 1e-9


def test_standardize_dimension_mismatch():
    ds = separable_dataset(n_per_label=5)
    stats = standardize_fit(ds)
    with pytest.raises(ValueError, match="dimension"):
        standardize_apply(stats, np.zeros(7))


def test_stratified_kfold_hand_counts():
    ds = _tiny_dataset({CoarseLabel.NORMAL: 6, CoarseLabel.DOS: 4})
    folds = stratified_kfold(ds, 2, seed=0)
    assert len(folds) == 2
    for train, val in folds:
        assert val.counts_by_coarse()[CoarseLabel.NORMAL] == 3
        assert val.counts_by_coarse()[CoarseLabel.DOS] == 2
        assert len(train) + len(val) == 10


def test_stratified_kfold_partitions_dataset():
    ds = separable_dataset(n_per_label=13, seed=1)
    folds = stratified_kfold(ds, 3, seed=2)
    seen = []
    for _, val in folds:
        seen.extend(map(tuple, val.X))
    assert len(seen) == len(ds)
    assert Counter(seen) == Counter(map(tuple, ds.X))
    for c, n in ds.counts_by_coarse().items():
        if n == 0:
            continue
        sizes = [f[1].counts_by_coarse()[c] for f in folds]
        assert max(sizes) - min(sizes) <= 1


def test_stratified_kfold_deterministic():
    ds = separable_dataset(n_per_label=8, seed=3)
    a = stratified_kfold(ds, 2, seed=9)
    b = stratified_kfold(ds, 2, seed=9)
    for (ta, va), (tb, vb) in zip(a, b):
        assert np.array_equal(ta.X, tb.X)
        assert np.array_equal(va.X, vb.X)


def test_stratified_kfold_small_class_errors():
    ds = _tiny_dataset({CoarseLabel.NORMAL: 6, CoarseLabel.U2R: 1})
    with pytest.raises(ValueError, match="fewer than k"):
        stratified_kfold(ds, 2, seed=0)


def test_stratified_split_fractions():
    ds = _tiny_dataset({CoarseLabel.NORMAL: 10, CoarseLabel.DOS: 10})
    train, test = stratified_split(ds, 0.3, seed=0)
    assert test.counts_by_coarse()[CoarseLabel.NORMAL] == 3
    assert test.counts_by_coarse()[CoarseLabel.DOS] == 3
    assert len(train) == 14 and len(test) == 6


def test_dataset_file_round_trip(tmp_path):
    ds = separable_dataset(n_per_label=6, seed=8)
    ds.provenance = Provenance(source="synthetic", deduplicated=True)
    path = tmp_path / "ds.csv"
    save_dataset(path, ds)
    first = path.read_text().splitlines()[0]
    assert first.startswith("# hybrid-ids dataset v1")
    loaded = load_dataset(path)
    assert np.array_equal(loaded.X, ds.X)
    assert list(loaded.fine_labels) == list(ds.fine_labels)
    assert np.array_equal(loaded.coarse, ds.coarse)


def test_stats_file_round_trip(tmp_path):
    ds = separable_dataset(n_per_label=6, seed=2)
    stats = standardize_fit(ds)
    path = tmp_path / "stats.txt"
    save_stats(path, stats)
    loaded = load_stats(path)
    assert np.array_equal(loaded.mean, stats.mean)
    assert np.array_equal(loaded.stddev, stats.stddev)
    assert loaded.fingerprint == stats.fingerprint


def test_taxonomy_file_round_trip(tmp_path):
    tax = Taxonomy.default().extended({"saint": CoarseLabel.PROBE})
    path = tmp_path / "taxonomy.txt"
    save_taxonomy(path, tax)
    loaded = load_taxonomy(path)
    assert loaded.coarse("saint") == CoarseLabel.PROBE
    assert loaded.coarse("neptune") == CoarseLabel.DOS
    assert dict(loaded.items()) == dict(tax.items())


def test_standardize_dataset_wrapper():
    ds = separable_dataset(n_per_label=5, seed=6)
    stats = standardize_fit(ds)
    out = standardize_dataset(stats, ds)
    assert np.allclose(out.X, (ds.X - stats.mean) / stats.divisor)
    assert list(out.fine_labels) == list(ds.fine_labels)


def test_version_mismatch_rejected(tmp_path):
    from hybrid_ids.errors import FormatError

    ds = separable_dataset(n_per_label=4, seed=7)
    path = tmp_path / "ds.csv"
    save_dataset(path, ds)
    body = path.read_text().splitlines()
    body[0] = "# hybrid-ids dataset v9"
    path.write_text("\n".join(body) + "\n")
    with pytest.raises(FormatError, match="expected format line"):
        load_dataset(path)
    stats_path = tmp_path / "stats.txt"
    save_stats(stats_path, standardize_fit(ds))
    tampered = stats_path.read_text().replace("stats v1", "stats v2")
    stats_path.write_text(tampered)
    with pytest.raises(FormatError):
        load_stats(stats_path)
