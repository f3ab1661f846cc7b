import logging

import numpy as np
import pandas as pd
import pytest

from App.calibration.data_model import ALL_GROUP
from App.calibration.errors import ConfigError, NameCollision, TooFewSamples, UnknownColumn
from App.calibration.grouping import (
    FeatureTable,
    ThresholdRule,
    cluster_groups,
    fit_clusters,
    groups_from_annotations,
    groups_from_thresholds,
)


def _blobs(fixtures):
    return FeatureTable(pd.read_csv(fixtures / "blobs.csv"))


def test_annotations_pass_through():
    result = groups_from_annotations([[1], [0], [1]], ["math"])
    groups = result.groups

    assert groups.names == (ALL_GROUP, "math")
    assert groups.column(ALL_GROUP).all()
    np.testing.assert_array_equal(groups.column("math"), [True, False, True])
    assert result.empty_groups == []


def test_empty_annotation_group_is_kept_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        result = groups_from_annotations([[1, 0, 0], [0, 0, 1]], ["math", "rare", "art"])

    assert result.empty_groups == ["rare"]
    assert result.groups.names == (ALL_GROUP, "math", "rare", "art")
    assert not result.groups.column("rare").any()
    assert "rare" in caplog.text


def test_annotation_named_all_is_rejected():
    with pytest.raises(NameCollision):
        groups_from_annotations([[1]], [ALL_GROUP])


def test_kmeans_separates_blobs(fixtures):
    result = fit_clusters(_blobs(fixtures), k=2, seed=0)
    membership = result.groups.membership[:, 1:]

    assert result.groups.names == (ALL_GROUP, "cluster_0", "cluster_1")
    np.testing.assert_array_equal(membership.sum(axis=1), np.ones(10))
    assert len(set(result.labels[:5])) == 1
    assert len(set(result.labels[5:])) == 1
    assert result.labels[0] != result.labels[5]
    assert result.empty_clusters == []


def test_kmeans_is_deterministic(fixtures):
    first = fit_clusters(_blobs(fixtures), k=3, seed=11)
    second = fit_clusters(_blobs(fixtures), k=3, seed=11)

    np.testing.assert_array_equal(first.labels, second.labels)
    assert first.inertia == second.inertia


def test_kmeans_with_one_point_per_cluster():
    features = FeatureTable.from_array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]])

    result = fit_clusters(features, k=4, seed=3)

    assert result.inertia == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_array_equal(result.groups.counts[1:], [1, 1, 1, 1])


def test_kmeans_on_identical_points_flags_empty_clusters():
    features = FeatureTable.from_array(np.ones((6, 2)))

    result = fit_clusters(features, k=2, seed=0)

    np.testing.assert_array_equal(result.groups.membership[:, 1:].sum(axis=1), np.ones(6))
    assert set(result.empty_clusters) == set(result.groups.empty_groups)


def test_kmeans_needs_enough_rows():
    features = FeatureTable.from_array(np.arange(3.0))

    with pytest.raises(TooFewSamples):
        fit_clusters(features, k=4, seed=0)
    with pytest.raises(ConfigError):
        fit_clusters(features, k=1, seed=0)


def test_kmeans_on_selected_columns(fixtures):
    groups = cluster_groups(_blobs(fixtures), k=2, seed=1, standardize=True)

    assert groups.k == 3
    with pytest.raises(UnknownColumn):
        fit_clusters(_blobs(fixtures), k=2, seed=0, columns=["z"])


def test_threshold_rule():
    features = FeatureTable.from_array([0.95, 0.5], ["score"])

    groups = groups_from_thresholds(features, [ThresholdRule("score", ">=", 0.9, "high_conf")])

    np.testing.assert_array_equal(groups.column("high_conf"), [True, False])


def test_overlapping_threshold_rules():
    features = FeatureTable.from_array([[1.0], [5.0], [9.0]], ["age"])
    rules = [ThresholdRule("age", "<", 6.0, "young"), ThresholdRule("age", ">=", 5.0, "old")]

    groups = groups_from_thresholds(features, rules)

    np.testing.assert_array_equal(groups.column("young"), [True, True, False])
    np.testing.assert_array_equal(groups.column("old"), [False, True, True])


def test_threshold_on_missing_column():
    features = FeatureTable.from_array([0.5], ["score"])

    with pytest.raises(UnknownColumn):
        groups_from_thresholds(features, [ThresholdRule("age", "<", 30.0, "young")])


def test_threshold_operator_is_checked():
    with pytest.raises(ConfigError):
        ThresholdRule("age", "==", 30.0, "thirty")
