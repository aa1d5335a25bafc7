import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from apps.clusternet.metrics import accuracy, confusion, confusion_from_predictions
from apps.clusternet.network import ClusterNet
from shared.schemas import ClusterConfig, LabeledImageSet


def test_perfect_predictor():
    labels = np.repeat(np.arange(10), 3)
    c = confusion_from_predictions(labels, labels)
    assert_array_equal(c.percent, 100.0 * np.eye(10))
    assert c.accuracy == 100.0
    assert c.missing == []


def test_constant_predictor():
    labels = np.repeat(np.arange(10), 2)
    c = confusion_from_predictions(labels, np.full(20, 3))
    expected = np.zeros((10, 10))
    expected[:, 3] = 100.0
    assert_array_equal(c.percent, expected)
    assert c.accuracy == 10.0


def test_rows_sum_to_one_hundred(rng):
    labels = rng.integers(0, 10, size=500)
    preds = rng.integers(0, 10, size=500)
    c = confusion_from_predictions(labels, preds)
    present = c.counts.sum(axis=1) > 0
    assert np.allclose(c.percent[present].sum(axis=1), 100.0, atol=1e-9)
    assert c.counts.sum() == 500


def test_missing_class_row_is_nan():
    c = confusion_from_predictions([0, 1, 1], [0, 1, 0], n_classes=3)
    assert c.missing == [2]
    assert all(math.isnan(v) for v in c.percent[2])
    assert_array_equal(c.percent[1], [50.0, 50.0, 0.0])
    assert abs(c.accuracy - 200.0 / 3.0) < 1e-12


def test_bad_inputs():
    with pytest.raises(ValueError):
        confusion_from_predictions([], [])
    with pytest.raises(ValueError):
        confusion_from_predictions([1, 2], [1])


def test_confusion_of_a_network_on_its_own_centers(rng):
    cfg = ClusterConfig(height=6, width=6, shift_radius=1, n_classes=4, per_class=1)
    centers = rng.uniform(0, 1, size=(4, 6, 6))
    net = ClusterNet.from_centers(cfg, centers, [0, 1, 2, 3])
    testset = LabeledImageSet(centers, np.arange(4))
    c = confusion(net, testset, workers=2)
    assert_array_equal(c.percent, 100.0 * np.eye(4))
    assert accuracy(net, testset) == 100.0
