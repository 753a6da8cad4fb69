"""Differentiable training objective.

The torch Chamfer implementation mirrors :func:`viewfill.metrics.chamfer_distance`
(same formula, autodiff-capable) and is verified against it in the tests; the
numpy version stays the evaluation/oracle path.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from viewfill.errors import InvalidInputError


def chamfer(p1: torch.Tensor, p2: torch.Tensor) -> torch.Tensor:
    """Symmetric Chamfer distance, differentiable.

    Accepts (N, 3) single clouds or (B, N, 3) batches; batched input returns
    the mean over the batch. Uses the direct (x - y)^2 expansion so values
    match the numpy metric closely.
    """
    if p1.dim() == 2:
        p1 = p1.unsqueeze(0)
    if p2.dim() == 2:
        p2 = p2.unsqueeze(0)
    if p1.shape[0] != p2.shape[0]:
        raise InvalidInputError(
            f"batch sizes differ: {p1.shape[0]} vs {p2.shape[0]}"
        )
    if p1.shape[1] < 1 or p2.shape[1] < 1:
        raise InvalidInputError("point clouds must be nonempty")
    # (B, N, M) squared distances
    d2 = ((p1.unsqueeze(2) - p2.unsqueeze(1)) ** 2).sum(dim=3)
    forward = d2.min(dim=2).values.mean(dim=1)
    backward = d2.min(dim=1).values.mean(dim=1)
    return (forward + backward).mean()


def total_loss(
    coarse: torch.Tensor,
    refined: torch.Tensor,
    gt: torch.Tensor,
    alpha: float,
    regularizer=None,
) -> tuple[torch.Tensor, dict]:
    """Composite objective: CD(refined, gt) + alpha * CD(coarse, gt).

    Returns the scalar loss and a breakdown dict with both terms as floats.
    ``regularizer`` is an attachment point for an additional penalty term,
    called as ``regularizer(coarse, refined, gt)``; the default adds nothing.
    """
    if alpha < 0:
        raise InvalidInputError(f"alpha must be nonnegative, got {alpha}")
    refined_cd = chamfer(refined, gt)
    coarse_cd = chamfer(coarse, gt)
    loss = refined_cd + alpha * coarse_cd
    breakdown = {
        "refined_cd": float(refined_cd.detach()),
        "coarse_cd": float(coarse_cd.detach()),
        "alpha": alpha,
    }
    if regularizer is not None:
        extra = regularizer(coarse, refined, gt)
        loss = loss + extra
        breakdown["regularizer"] = float(extra.detach())
    return loss, breakdown


@dataclass(frozen=True)
class LossSchedule:
    """Linear annealing of the coarse-loss weight across epochs."""

    alpha_start: float = 0.7
    alpha_end: float = 0.1
    total_epochs: int = 1

    def __post_init__(self):
        if self.total_epochs < 1:
            raise InvalidInputError(
                f"total_epochs must be positive, got {self.total_epochs}"
            )


def alpha_at(schedule: LossSchedule, epoch: int) -> float:
    """Coarse-loss weight for ``epoch``; hits both endpoints exactly."""
    if not 0 <= epoch < schedule.total_epochs:
        raise InvalidInputError(
            f"epoch must be in [0, {schedule.total_epochs}), got {epoch}"
        )
    if schedule.total_epochs == 1:
        return schedule.alpha_start
    if epoch == schedule.total_epochs - 1:
        return schedule.alpha_end
    frac = epoch / (schedule.total_epochs - 1)
    alpha = schedule.alpha_start + (schedule.alpha_end - schedule.alpha_start) * frac
    lo = min(schedule.alpha_start, schedule.alpha_end)
    hi = max(schedule.alpha_start, schedule.alpha_end)
    return min(max(alpha, lo), hi)
