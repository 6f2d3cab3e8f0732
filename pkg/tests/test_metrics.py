"""Accuracy and support-recovery metrics."""

import numpy as np
import pytest

from gridmix.errors import ValidationError
from gridmix.metrics import l1_bias, rmise, support_metrics
from gridmix.model import build_grid, cdf_indicator


def test_rmise_hand_computed():
    thetas = np.array([[1.0, 0.0], [0.5, 0.5]])
    indicator = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    truth = np.array([0.5, 1.0, 0.0])
    # run 1 errors: (0.5, 0, 0); run 2 errors: (0, 0, 0)
    expected = np.sqrt(np.mean([np.mean([0.25, 0.0, 0.0]), 0.0]))
    assert abs(rmise(thetas, indicator, truth) - expected) < 1e-15


def test_rmise_single_run_matches_direct_formula():
    rng = np.random.default_rng(0)
    grid = build_grid([[-1.0, 1.0], [-1.0, 1.0]], 9)
    theta = rng.dirichlet(np.ones(9))
    points = rng.uniform(-1.5, 1.5, size=(200, 2))
    indicator = cdf_indicator(grid, points)
    truth = rng.uniform(size=200)
    direct = np.sqrt(np.mean((indicator @ theta - truth) ** 2))
    assert abs(rmise(theta, indicator, truth) - direct) < 1e-14


def test_rmise_shape_validation():
    with pytest.raises(ValidationError):
        rmise(np.ones((1, 3)), np.ones((2, 2)), np.ones(2))
    with pytest.raises(ValidationError):
        rmise(np.ones((1, 2)), np.ones((2, 2)), np.ones(3))


def test_l1_bias_hand_computed():
    thetas = np.array([[0.6, 0.4], [0.4, 0.6]])
    truth = np.array([0.5, 0.5])
    assert abs(l1_bias(thetas, truth) - 0.1) < 1e-15
    assert l1_bias(truth, truth) == 0.0


def test_support_metrics_worked_example():
    theta = np.array([0.5, 0.3, 5e-4, 0.2, 0.0])
    mask = np.array([True, True, True, False, False])
    got = support_metrics(theta, mask)
    # detections at 1e-3: indices 0, 1, 3
    assert got.pos == 3
    assert abs(got.true_pos_share - 2 / 3) < 1e-15
    # flags agree with truth at indices 0, 1, 4
    assert abs(got.sign_share - 3 / 5) < 1e-15


def test_support_metrics_threshold_override():
    theta = np.array([0.5, 0.04, 0.46])
    mask = np.array([True, False, True])
    strict = support_metrics(theta, mask, threshold=0.05)
    assert strict.pos == 2 and strict.sign_share == 1.0


def test_support_metrics_validation():
    with pytest.raises(ValidationError):
        support_metrics(np.ones(3), np.zeros(3, dtype=bool))
    with pytest.raises(ValidationError):
        support_metrics(np.ones(3), np.ones(2, dtype=bool))
