"""Image-to-point coarse generation.

Encoder tokens are pooled into a global latent (shared per-token projection,
max-pool, small MLP) and decoded by several branch MLPs into 3D points. The
generated points pass through tanh, so they lie in [-1, 1]^3, matching the
normalized ground-truth space. The coarse completion is the union of the
generated points and a seeded downsample of the partial input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from viewfill.errors import ConfigError, InvalidInputError, NumericalError
from viewfill.geometry import PointCloud, fps_indices, uniform_sample


@dataclass(frozen=True)
class GeneratorConfig:
    """Point generator layout: ``n_branches * points_per_branch`` new points.

    ``keep`` is the number of partial-input points fused into the coarse
    cloud (defaults to the generated count, the 50/50 split); ``downsample``
    picks the seeded subsampling mode for those points.
    """

    n_branches: int = 4
    points_per_branch: int = 64
    latent_width: int = 128
    keep: int = 0  # 0 = same as n_generated
    downsample: str = "fps"

    def __post_init__(self):
        if self.n_branches < 1:
            raise ConfigError("generator.n_branches: must be positive")
        if self.points_per_branch < 1:
            raise ConfigError("generator.points_per_branch: must be positive")
        if self.latent_width < 1:
            raise ConfigError("generator.latent_width: must be positive")
        if self.keep == 0:
            object.__setattr__(self, "keep", self.n_generated)
        if self.keep < 1:
            raise ConfigError("generator.keep: must be positive")
        if self.downsample not in ("fps", "uniform"):
            raise ConfigError(
                f"generator.downsample: expected 'fps' or 'uniform', "
                f"got {self.downsample!r}"
            )

    @property
    def n_generated(self) -> int:
        return self.n_branches * self.points_per_branch


@dataclass(frozen=True)
class CoarseCompletion:
    """Coarse cloud with provenance: which points came from the generator."""

    points: PointCloud
    generated_mask: np.ndarray
    n_generated: int
    n_partial_kept: int

    def __post_init__(self):
        mask = np.asarray(self.generated_mask, dtype=bool)
        object.__setattr__(self, "generated_mask", mask)
        if mask.shape != (self.points.count,):
            raise InvalidInputError("generated_mask length must match point count")
        if self.n_generated + self.n_partial_kept != self.points.count:
            raise InvalidInputError(
                "n_generated + n_partial_kept must equal the point count"
            )
        if int(mask.sum()) != self.n_generated:
            raise InvalidInputError("generated_mask does not match n_generated")


def assemble_coarse(
    generated: PointCloud,
    partial: PointCloud,
    keep: int,
    seed: int,
    mode: str = "fps",
) -> CoarseCompletion:
    """Fuse generated points with a seeded ``keep``-point downsample of the partial.

    ``mode`` selects farthest-point ("fps", deterministic evaluation default)
    or uniform-without-replacement ("uniform") downsampling.
    """
    if not 1 <= keep <= partial.count:
        raise InvalidInputError(
            f"keep must be in [1, {partial.count}], got {keep}"
        )
    if mode == "fps":
        kept = partial.points[fps_indices(partial, keep, seed)]
    elif mode == "uniform":
        kept = uniform_sample(partial, keep, seed).points
    else:
        raise InvalidInputError(f"unknown downsample mode: {mode!r}")
    points = PointCloud(np.concatenate([generated.points, kept], axis=0))
    mask = np.zeros(points.count, dtype=bool)
    mask[: generated.count] = True
    return CoarseCompletion(
        points=points,
        generated_mask=mask,
        n_generated=generated.count,
        n_partial_kept=keep,
    )


class I2PGenerator(nn.Module):
    """Global-latent aggregation plus multi-branch point decoding."""

    def __init__(self, cfg: GeneratorConfig, token_width: int):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_width
        self.token_proj = nn.Linear(token_width, d)
        self.latent_mlp = nn.Sequential(
            nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d)
        )
        self.branches = nn.ModuleList(
            nn.Sequential(
                nn.Linear(d, d),
                nn.SiLU(),
                nn.Linear(d, 3 * cfg.points_per_branch),
            )
            for _ in range(cfg.n_branches)
        )

    def aggregate(self, tokens: torch.Tensor) -> torch.Tensor:
        """Permutation-invariant pooling of (B, N, C) tokens to (B, latent)."""
        if not torch.isfinite(tokens).all():
            raise NumericalError("non-finite encoder tokens")
        pooled = self.token_proj(tokens).max(dim=1).values
        return self.latent_mlp(pooled)

    def generate(self, latent: torch.Tensor) -> torch.Tensor:
        """Decode a (B, latent) vector into (B, n_generated, 3) points in [-1, 1]."""
        b = latent.shape[0]
        parts = [branch(latent).view(b, -1, 3) for branch in self.branches]
        return torch.tanh(torch.cat(parts, dim=1))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.generate(self.aggregate(tokens))
