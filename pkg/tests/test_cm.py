import math

import numpy as np
import pytest

from cmverify.cm import (
    EMPTY_LABEL,
    ColumnDistribution,
    ConfusionMatrix,
    DistanceBands,
    DistanceParamCM,
    FixtureFormatError,
    ZeroColumnError,
    aggregate,
    as_single_band,
    band_for_distance,
    class_label_set,
    format_table,
    normalize_column,
    parse_fixture,
    prop_label_for,
    prop_label_set,
    prop_members,
    render_fixture,
)

from testutil import DEFAULT_BANDS, identity_class_cm


# --- label sets ------------------------------------------------------------

def test_class_labels_end_with_emp():
    labels = class_label_set(["ped", "obs"])
    assert labels.names == ("ped", "obs", "emp")
    assert labels.index("emp") == 2


def test_prop_labels_canonical_order():
    labels = prop_label_set(["ped", "obs"])
    assert labels.names == ("ped", "obs", "ped+obs", "emp")
    assert prop_members("ped+obs") == frozenset({"ped", "obs"})
    assert prop_members("emp") == frozenset()
    assert prop_label_for(labels, {"obs", "ped"}) == "ped+obs"
    assert prop_label_for(labels, set()) == "emp"


def test_prop_labels_three_classes():
    labels = prop_label_set(["a", "b", "c"])
    assert labels.names == ("a", "b", "c", "a+b", "a+c", "b+c", "a+b+c", "emp")


@pytest.mark.parametrize("classes", [[], ["emp"], ["ped", "ped"], ["pe+d"]])
def test_bad_class_sets_rejected(classes):
    with pytest.raises(ValueError):
        class_label_set(classes)


# --- distance bands --------------------------------------------------------

def test_band_below_first_edge():
    assert band_for_distance(DEFAULT_BANDS, 9.5) == 0


def test_band_boundary_inclusive_right():
    assert band_for_distance(DEFAULT_BANDS, 10.0) == 0
    assert band_for_distance(DEFAULT_BANDS, 10.0001) == 1


def test_band_clamps_beyond_last_edge():
    assert band_for_distance(DEFAULT_BANDS, 250) == 9


@pytest.mark.parametrize("d", [0.0, -1.0, math.inf, math.nan])
def test_band_rejects_invalid_distance(d):
    with pytest.raises(ValueError):
        band_for_distance(DEFAULT_BANDS, d)


def test_band_total_and_monotone():
    rng = np.random.default_rng(3)
    ds = np.sort(rng.uniform(1e-6, 400, size=200))
    ks = [band_for_distance(DEFAULT_BANDS, d) for d in ds]
    assert all(0 <= k <= 9 for k in ks)
    assert all(a <= b for a, b in zip(ks, ks[1:]))


def test_bands_must_increase():
    with pytest.raises(ValueError):
        DistanceBands((10, 10))
    with pytest.raises(ValueError):
        DistanceBands((10, 5))
    with pytest.raises(ValueError):
        DistanceBands((-1, 5))


# --- normalize_column ------------------------------------------------------

def test_normalize_class_ped_column(class_cm):
    dist = normalize_column(class_cm.per_band[0], "ped")
    expected = np.array([31 / 158, 0.0, 127 / 158])
    assert np.all(np.abs(dist.probs - expected) < 1e-12)
    assert abs(dist.probs.sum() - 1.0) < 1e-12


def test_normalize_prop_ped_column(prop_cm):
    dist = normalize_column(prop_cm.per_band[0], "ped")
    expected = np.array([22 / 85, 0.0, 0.0, 63 / 85])
    assert np.all(np.abs(dist.probs - expected) < 1e-12)


def test_normalize_identity_is_point_mass():
    cm = identity_class_cm().per_band[0]
    for name in cm.labels.names:
        dist = normalize_column(cm, name)
        assert dist.prob(name) == 1.0
        assert dist.probs.sum() == 1.0


def test_normalize_all_bundled_columns(class_cm, prop_cm):
    for dp in (class_cm, prop_cm):
        for m in dp.per_band:
            for name in m.labels.names:
                dist = normalize_column(m, name)
                assert abs(dist.probs.sum() - 1.0) < 1e-12
                assert np.all(dist.probs >= 0) and np.all(dist.probs <= 1)


def test_zero_column_strict_raises():
    labels = class_label_set(["ped", "obs"])
    counts = np.zeros((3, 3), dtype=int)
    counts[2, 2] = 5
    cm = ConfusionMatrix(labels, counts)
    with pytest.raises(ZeroColumnError):
        normalize_column(cm, "ped")


def test_zero_column_fallback_is_emp_point_mass():
    labels = class_label_set(["ped", "obs"])
    counts = np.zeros((3, 3), dtype=int)
    counts[2, 2] = 5
    cm = ConfusionMatrix(labels, counts)
    dist = normalize_column(cm, "ped", on_zero="emp")
    assert dist.prob(EMPTY_LABEL) == 1.0
    assert dist.prob("ped") == 0.0


def test_unknown_label_rejected(class_cm):
    with pytest.raises(KeyError):
        normalize_column(class_cm.per_band[0], "bicycle")


# --- matrix validation -----------------------------------------------------

def test_counts_must_be_square_nonnegative_integers():
    labels = class_label_set(["ped", "obs"])
    with pytest.raises(ValueError):
        ConfusionMatrix(labels, np.zeros((2, 3), dtype=int))
    with pytest.raises(ValueError):
        ConfusionMatrix(labels, np.full((3, 3), -1))
    with pytest.raises(ValueError):
        ConfusionMatrix(labels, np.full((3, 3), 0.5))


def test_counts_frozen(class_cm):
    with pytest.raises(ValueError):
        class_cm.per_band[0].counts[0, 0] = 99


def test_column_distribution_invariants():
    labels = class_label_set(["ped", "obs"])
    with pytest.raises(ValueError):
        ColumnDistribution("ped", labels, np.array([0.5, 0.2, 0.2]))
    with pytest.raises(ValueError):
        ColumnDistribution("ped", labels, np.array([1.2, -0.2, 0.0]))


# --- aggregate -------------------------------------------------------------

def test_aggregate_two_bands_sums_elementwise():
    labels = class_label_set(["ped", "obs"])
    a = np.arange(9).reshape(3, 3)
    b = np.arange(9, 18).reshape(3, 3)
    dp = DistanceParamCM(
        DistanceBands((10, 20)),
        (ConfusionMatrix(labels, a), ConfusionMatrix(labels, b)),
    )
    assert np.array_equal(aggregate(dp).counts, a + b)


def test_aggregate_single_band_is_identity():
    labels = class_label_set(["ped", "obs"])
    m = ConfusionMatrix(labels, np.arange(9).reshape(3, 3))
    dp = DistanceParamCM(DistanceBands((10,)), (m,))
    assert aggregate(dp) == m


def test_aggregate_bundled_class_tables(class_cm):
    # oracle: plain-python elementwise sum over the parsed band tables
    n = len(class_cm.labels)
    expected = [[0] * n for _ in range(n)]
    for m in class_cm.per_band:
        for i in range(n):
            for j in range(n):
                expected[i][j] += int(m.counts[i, j])
    agg = aggregate(class_cm)
    assert np.array_equal(agg.counts, np.array(expected))
    assert agg.counts[2, 2] == 24884  # 3227+1969+1387+1474+1733+2188+2742+3077+3436+3651


def test_aggregate_commutes_with_column_sums(class_cm, prop_cm):
    for dp in (class_cm, prop_cm):
        agg = aggregate(dp)
        for name in dp.labels.names:
            assert agg.column_sum(name) == sum(m.column_sum(name) for m in dp.per_band)


def test_aggregate_rejects_mismatched_labels():
    a = ConfusionMatrix(class_label_set(["ped", "obs"]), np.zeros((3, 3), int))
    b = ConfusionMatrix(class_label_set(["obs", "ped"]), np.zeros((3, 3), int))
    with pytest.raises(ValueError):
        DistanceParamCM(DistanceBands((10, 20)), (a, b))


def test_as_single_band_covers_all_distances(class_cm):
    single = as_single_band(class_cm)
    assert len(single.bands) == 1
    assert single.per_band[0] == aggregate(class_cm)
    assert band_for_distance(single.bands, 5) == 0
    assert band_for_distance(single.bands, 500) == 0


# --- fixture serialization -------------------------------------------------

def test_round_trip_bundled(class_cm, prop_cm):
    for dp in (class_cm, prop_cm):
        assert parse_fixture(render_fixture(dp)) == dp


def test_round_trip_aggregated(class_cm):
    agg = aggregate(class_cm)
    parsed = parse_fixture(render_fixture(agg))
    assert isinstance(parsed, ConfusionMatrix)
    assert parsed == agg


def test_round_trip_random_matrices():
    rng = np.random.default_rng(11)
    for _ in range(25):
        classes = ["ped", "obs", "cyc"][: int(rng.integers(1, 4))]
        labels = prop_label_set(classes) if rng.random() < 0.5 else class_label_set(classes)
        n_bands = int(rng.integers(1, 5))
        bands = DistanceBands(tuple(sorted(rng.uniform(1, 200, size=n_bands))))
        mats = tuple(
            ConfusionMatrix(labels, rng.integers(0, 50, size=(len(labels), len(labels))))
            for _ in range(n_bands)
        )
        dp = DistanceParamCM(bands, mats)
        assert parse_fixture(render_fixture(dp)) == dp


@pytest.mark.parametrize(
    "text",
    [
        "bands: 10\nband 0\n1\n",
        "labels: ped, obs, emp\nbands: 10\nband 1\n1 0 0\n0 1 0\n0 0 1\n",
        "labels: ped, obs, emp\nbands: 10\nband 0\n1 0\n0 1\n0 0\n",
        "labels: ped, obs, emp\nbands: 10\nband 0\n1 0 x\n0 1 0\n0 0 1\n",
        "labels: ped, obs, emp\nbands: 10\nband 0\n-1 0 0\n0 1 0\n0 0 1\n",
        "labels: ped, obs\nbands: 10\nband 0\n1 0\n0 1\n",
        "labels: ped, obs, emp\nbands: 10, 20\nband 0\n1 0 0\n0 1 0\n0 0 1\n",
    ],
)
def test_malformed_fixture_rejected(text):
    with pytest.raises(FixtureFormatError):
        parse_fixture(text)


def test_format_table_layout(class_cm):
    table = format_table(class_cm.per_band[0])
    lines = table.splitlines()
    assert len(lines) == 4
    assert "3227" in lines[-1]
    assert lines[1].lstrip().startswith("ped")
