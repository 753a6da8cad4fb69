"""End-to-end completion model and its ablation wirings.

The full pipeline encodes the image once, generates a coarse completion
(generated points fused with a seeded downsample of the partial input), and
refines it with the offset transformer. Ablation variants rewire the same
components: NoReconLoss trains without the coarse supervision term, I2POnly
stops at the coarse output, P2POnly replaces the generated points with a
tiled downsample of the partial input (no image-derived prior in the input
geometry, though the refiner still sees image tokens).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from viewfill.encoder import ImageEncoder, ImageTokens
from viewfill.errors import InvalidInputError
from viewfill.generator import CoarseCompletion, I2PGenerator
from viewfill.geometry import PointCloud, fps_indices
from viewfill.refiner import P2PRefiner, RefinementTrace


class AblationVariant(Enum):
    FULL = "full"
    NO_RECON_LOSS = "no-recon"
    I2P_ONLY = "i2p-only"
    P2P_ONLY = "p2p-only"

    @classmethod
    def from_string(cls, name: str) -> "AblationVariant":
        for variant in cls:
            if variant.value == name:
                return variant
        valid = ", ".join(v.value for v in cls)
        raise InvalidInputError(f"unknown variant {name!r}; expected one of {valid}")

    @property
    def uses_generator(self) -> bool:
        return self is not AblationVariant.P2P_ONLY

    @property
    def uses_refiner(self) -> bool:
        return self is not AblationVariant.I2P_ONLY

    def effective_alpha(self, alpha: float) -> float:
        """Coarse-loss weight actually applied for this wiring.

        Only the full variant supervises the coarse output; NoReconLoss
        drops the term by definition, I2POnly's single output is already
        the coarse cloud, and P2POnly's coarse input carries no parameters.
        """
        return alpha if self is AblationVariant.FULL else 0.0


@dataclass
class ModelOutput:
    """Batched forward results plus provenance bookkeeping."""

    coarse: torch.Tensor
    generated_mask: np.ndarray
    n_generated: int
    n_partial_kept: int
    trace: RefinementTrace
    tokens: ImageTokens

    @property
    def refined(self) -> torch.Tensor:
        return self.trace.refined

    def coarse_completion(self, index: int = 0) -> CoarseCompletion:
        """Single-sample numpy view of the coarse output."""
        pts = self.coarse[index].detach().cpu().numpy().astype(np.float64)
        return CoarseCompletion(
            points=PointCloud(pts),
            generated_mask=self.generated_mask,
            n_generated=self.n_generated,
            n_partial_kept=self.n_partial_kept,
        )


class CompletionModel(nn.Module):
    """Encoder + coarse generator + offset refiner, wired per variant."""

    def __init__(self, config, variant: AblationVariant = AblationVariant.FULL):
        super().__init__()
        self.config = config
        self.variant = variant
        size = config.data.image_size
        self.encoder = ImageEncoder(config.encoder, (size, size))
        token_width = config.encoder.token_width
        self.generator = (
            I2PGenerator(config.generator, token_width)
            if variant.uses_generator
            else None
        )
        self.refiner = (
            P2PRefiner(config.refiner, token_width)
            if variant.uses_refiner
            else None
        )

    @property
    def n_coarse(self) -> int:
        return self.config.generator.n_generated + self.config.generator.keep

    def _downsample_partials(self, partials: torch.Tensor, seeds) -> torch.Tensor:
        """Seeded per-sample downsample of (B, N_i, 3) partials to keep points."""
        keep = self.config.generator.keep
        mode = self.config.generator.downsample
        rows = []
        for i in range(partials.shape[0]):
            cloud = PointCloud(partials[i].detach().cpu().numpy().astype(np.float64))
            if mode == "fps":
                idx = fps_indices(cloud, keep, int(seeds[i]))
            else:
                rng = np.random.default_rng(int(seeds[i]))
                idx = rng.choice(cloud.count, size=keep, replace=False)
            rows.append(partials[i][torch.from_numpy(np.asarray(idx))])
        return torch.stack(rows, dim=0)

    def i2p_forward(self, images: torch.Tensor, partials: torch.Tensor, seeds):
        """Coarse completion (B, N_coarse, 3) plus the encoder tokens.

        The returned tokens are the single encoder pass that the refiner
        consumes as well.
        """
        tokens = self.encoder(images)
        kept = self._downsample_partials(partials, seeds)
        n_coarse = self.n_coarse
        if self.generator is not None:
            generated = self.generator(tokens.tokens)
            coarse = torch.cat([generated, kept], dim=1)
            n_generated = generated.shape[1]
        else:
            # P2POnly: tile the downsample up to the coarse count
            reps = -(-n_coarse // kept.shape[1])
            coarse = kept.repeat(1, reps, 1)[:, :n_coarse, :]
            n_generated = 0
        mask = np.zeros(n_coarse, dtype=bool)
        mask[:n_generated] = True
        return coarse, mask, n_generated, n_coarse - n_generated, tokens

    def forward(self, images: torch.Tensor, partials: torch.Tensor, seeds) -> ModelOutput:
        """Run the configured pipeline on a batch.

        ``seeds`` supplies one downsampling seed per sample so the partial
        subset is reproducible.
        """
        if partials.dim() == 2:
            partials = partials.unsqueeze(0)
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if len(seeds) != partials.shape[0]:
            raise InvalidInputError("one downsample seed per sample is required")
        coarse, mask, n_gen, n_kept, tokens = self.i2p_forward(
            images, partials, seeds
        )
        if self.refiner is not None:
            trace = self.refiner(coarse, tokens.tokens)
        else:
            trace = RefinementTrace(stages=[coarse], offsets=[])
        return ModelOutput(
            coarse=coarse,
            generated_mask=mask,
            n_generated=n_gen,
            n_partial_kept=n_kept,
            trace=trace,
            tokens=tokens,
        )


def validate_image_array(pixels: np.ndarray) -> np.ndarray:
    """Check an (H, W, 3) float image for finiteness and [0, 1] range."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"image must be (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite pixels")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError("image pixels must lie in [0, 1]")
    return arr


def complete_single(
    model: CompletionModel, pixels: np.ndarray, partial: PointCloud, seed: int = 0
):
    """Single-sample inference: returns (CoarseCompletion, list of stage PointClouds).

    The stage list is P^(0)..P^(L); the last entry is the final completion.
    """
    arr = validate_image_array(pixels)
    dtype = next(model.parameters()).dtype
    image = torch.from_numpy(arr.transpose(2, 0, 1)).to(dtype).unsqueeze(0)
    pts = torch.from_numpy(partial.points).to(dtype).unsqueeze(0)
    model.eval()
    with torch.no_grad():
        out = model(image, pts, seeds=[seed])
    coarse = out.coarse_completion(0)
    stages = [
        PointCloud(stage[0].cpu().numpy().astype(np.float64))
        for stage in out.trace.stages
    ]
    return coarse, stages
