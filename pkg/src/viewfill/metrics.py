"""Evaluation metrics: symmetric Chamfer distance and F-score at a threshold.

Both metrics share the nearest-neighbor machinery from
:mod:`viewfill.geometry` and operate on squared Euclidean distances. The
F-score uses the fraction-of-points-within-threshold reading: precision and
recall are fractions in [0, 1] and F1 is their harmonic mean.
"""
from __future__ import annotations

from dataclasses import dataclass

from viewfill.errors import InvalidInputError
from viewfill.geometry import PointCloud, nn_accelerated


@dataclass(frozen=True)
class MetricReport:
    """Single-pair metric bundle. ``chamfer`` is reported x10^3 in tables."""

    chamfer: float
    f1: float
    precision: float
    recall: float
    tau: float


def chamfer_distance(p1: PointCloud, p2: PointCloud) -> float:
    """Symmetric Chamfer distance between two clouds.

    Mean of squared nearest-neighbor distances from ``p1`` to ``p2`` plus the
    mean in the opposite direction. Symmetric by construction, zero iff the
    two clouds cover each other exactly.
    """
    forward = nn_accelerated(p1, p2).sq_distances.mean()
    backward = nn_accelerated(p2, p1).sq_distances.mean()
    return float(forward + backward)


def fscore(pred: PointCloud, gt: PointCloud, tau: float) -> MetricReport:
    """F-score at squared-distance threshold ``tau`` (plus Chamfer distance).

    precision = fraction of predicted points whose nearest ground-truth
    squared distance is strictly below ``tau``; recall is the reverse
    direction; f1 is their harmonic mean (0 when both are 0).
    """
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    to_gt = nn_accelerated(pred, gt).sq_distances
    to_pred = nn_accelerated(gt, pred).sq_distances
    precision = float((to_gt < tau).mean())
    recall = float((to_pred < tau).mean())
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    chamfer = float(to_gt.mean() + to_pred.mean())
    return MetricReport(
        chamfer=chamfer, f1=f1, precision=precision, recall=recall, tau=tau
    )
