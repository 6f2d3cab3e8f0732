"""Accuracy metrics for estimated mixing distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

#: weights above this count as detected support
SUPPORT_THRESHOLD = 1e-3


def rmise(thetas, indicator, true_values):
    """Root mean integrated squared error of step CDFs against a truth.

    thetas: (M, R) estimated weight vectors, one per run.
    indicator: (E, R) step-CDF evaluation matrix (see model.cdf_indicator).
    true_values: (E,) true CDF at the same evaluation points.

    The integrated squared error of run m is averaged over the E evaluation
    points; the result is the square root of the mean over runs.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    true_values = np.asarray(true_values, dtype=float).reshape(-1)
    if indicator.shape[0] != true_values.shape[0]:
        raise ValidationError("indicator rows must match the evaluation points")
    if indicator.shape[1] != thetas.shape[1]:
        raise ValidationError("indicator columns must match the weight length")
    errors = thetas @ indicator.T - true_values
    return float(np.sqrt(np.mean(np.mean(errors**2, axis=1))))


def l1_bias(thetas, true_theta):
    """Mean absolute weight error, averaged over grid points then runs."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    true_theta = np.asarray(true_theta, dtype=float).reshape(-1)
    if thetas.shape[1] != true_theta.shape[0]:
        raise ValidationError("weight vectors must match the true weight length")
    return float(np.mean(np.abs(thetas - true_theta)))


@dataclass(frozen=True)
class SupportMetrics:
    """Support recovery for one fitted weight vector.

    pos: number of weights above the threshold.
    true_pos_share: detected fraction of the true support.
    sign_share: fraction of grid points whose detection flag matches truth.
    """

    pos: int
    true_pos_share: float
    sign_share: float


def support_metrics(theta, true_mask, threshold=SUPPORT_THRESHOLD):
    """Compare the detected support of raw (unrenormalized) weights to truth."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    true_mask = np.asarray(true_mask, dtype=bool).reshape(-1)
    if theta.shape != true_mask.shape:
        raise ValidationError("theta and true_mask must have equal length")
    if not np.any(true_mask):
        raise ValidationError("true support is empty")
    detected = theta > threshold
    return SupportMetrics(
        pos=int(detected.sum()),
        true_pos_share=float(detected[true_mask].mean()),
        sign_share=float((detected == true_mask).mean()),
    )
