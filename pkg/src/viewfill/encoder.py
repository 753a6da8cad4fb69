"""Hierarchical image encoder producing a flattened grid of feature tokens.

Layout: a 7x7 stem convolution, then one stage per entry of
``stage_channels``. Each stage runs two residual blocks (RMSNorm + SiLU,
3x3 convs), an optional multi-head self-attention layer over the spatial
positions, and a stride-2 downsampling convolution. The bottleneck stacks
residual blocks with full self-attention. The final map is flattened to
``N = H' * W'`` tokens of width ``C`` (last stage width), optionally with a
learned additive 2D positional embedding.

All residual-branch output layers are zero-initialized, so at initialization
the encoder reduces to the stem + downsampling path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from viewfill.errors import ConfigError, NumericalError


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the image encoder.

    ``heads_per_stage[i] == 0`` disables the attention layer in stage ``i``
    (needed to keep early high-resolution stages tractable on CPU).
    """

    stage_channels: tuple = (32, 64, 128)
    heads_per_stage: tuple = (0, 4, 4)
    bottleneck_blocks: int = 2
    bottleneck_heads: int = 4
    stem_kernel: int = 7
    use_positional_embedding: bool = True

    def __post_init__(self):
        if len(self.stage_channels) < 1:
            raise ConfigError("encoder.stage_channels: at least one stage required")
        if len(self.heads_per_stage) != len(self.stage_channels):
            raise ConfigError(
                "encoder.heads_per_stage: must match stage_channels length"
            )
        if any(c < 1 for c in self.stage_channels):
            raise ConfigError("encoder.stage_channels: widths must be positive")
        if any(
            b < a for a, b in zip(self.stage_channels, self.stage_channels[1:])
        ):
            raise ConfigError("encoder.stage_channels: widths must be nondecreasing")
        for i, (c, h) in enumerate(zip(self.stage_channels, self.heads_per_stage)):
            if h < 0:
                raise ConfigError(f"encoder.heads_per_stage[{i}]: must be >= 0")
            if h > 0 and c % h != 0:
                raise ConfigError(
                    f"encoder.heads_per_stage[{i}]: {h} does not divide width {c}"
                )
        if self.bottleneck_blocks < 0:
            raise ConfigError("encoder.bottleneck_blocks: must be >= 0")
        if self.bottleneck_heads > 0 and self.stage_channels[-1] % self.bottleneck_heads:
            raise ConfigError(
                "encoder.bottleneck_heads: must divide the last stage width"
            )
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise ConfigError("encoder.stem_kernel: must be a positive odd integer")

    @property
    def n_stages(self) -> int:
        return len(self.stage_channels)

    @property
    def token_width(self) -> int:
        return self.stage_channels[-1]

    def grid_shape(self, height: int, width: int) -> tuple:
        """Token grid (H', W') for an input of the given size."""
        factor = 2**self.n_stages
        if height % factor or width % factor:
            raise ConfigError(
                f"image size {height}x{width} not divisible by 2^{self.n_stages}"
            )
        return height // factor, width // factor


@dataclass
class ImageTokens:
    """Flattened encoder output: ``tokens`` is (B, N, C), N = H' * W'."""

    tokens: torch.Tensor
    grid_shape: tuple

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]


class RMSNorm(nn.Module):
    """RMS normalization over the channel axis with a learned gain.

    ``dim=1`` normalizes (B, C, H, W) feature maps channel-wise per position;
    ``dim=-1`` normalizes token arrays (.., C) over the last axis.
    """

    def __init__(self, channels: int, dim: int = -1, eps: float = 1e-6):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        rms = torch.sqrt(x.pow(2).mean(dim=self.dim, keepdim=True) + self.eps)
        normed = x / rms
        if self.dim == 1:
            shape = [1, -1] + [1] * (x.dim() - 2)
            return normed * self.gain.view(shape)
        return normed * self.gain


class ResNetBlock(nn.Module):
    """Residual block: x + [RMSNorm -> SiLU -> 3x3 conv] twice.

    A 1x1 projection aligns the skip path when channel widths differ. The
    second conv is zero-initialized so the block is an identity at init.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.norm1 = RMSNorm(in_channels, dim=1)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm2 = RMSNorm(out_channels, dim=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.skip = nn.Identity()
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.skip(x) + h


class SpatialSelfAttention(nn.Module):
    """Pre-norm multi-head self-attention over spatial positions.

    Accepts (B, C, H, W) feature maps or (B, N, C) token arrays and returns
    the same shape. No positional encoding here, so the layer is
    permutation-equivariant over tokens. The output projection is
    zero-initialized (residual identity at init).
    """

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if heads < 1 or channels % heads != 0:
            raise ConfigError(f"attention heads {heads} must divide width {channels}")
        self.heads = heads
        self.norm = RMSNorm(channels, dim=-1)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """Row-stochastic attention matrix (B, heads, N, N) for token input."""
        _, weights = self._attend(self.norm(x))
        return weights

    def _attend(self, tokens: torch.Tensor):
        b, n, c = tokens.shape
        head_dim = c // self.heads
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        q = q.view(b, n, self.heads, head_dim).transpose(1, 2)
        k = k.view(b, n, self.heads, head_dim).transpose(1, 2)
        v = v.view(b, n, self.heads, head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / head_dim**0.5
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, n, c)
        return out, weights

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        is_map = x.dim() == 4
        if is_map:
            b, c, h, w = x.shape
            tokens = x.flatten(2).transpose(1, 2)  # (B, HW, C)
        else:
            tokens = x
        attended, _ = self._attend(self.norm(tokens))
        tokens = tokens + self.proj(attended)
        if is_map:
            return tokens.transpose(1, 2).view(b, c, h, w)
        return tokens


class _Stage(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, heads: int):
        super().__init__()
        self.block1 = ResNetBlock(in_channels, out_channels)
        self.block2 = ResNetBlock(out_channels, out_channels)
        self.attn = SpatialSelfAttention(out_channels, heads) if heads > 0 else None
        self.down = nn.Conv2d(out_channels, out_channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.block2(self.block1(x))
        if self.attn is not None:
            x = self.attn(x)
        return self.down(x)


class ImageEncoder(nn.Module):
    """Stem + downsampling stages + attention bottleneck + token flattening."""

    def __init__(self, cfg: EncoderConfig, image_hw: tuple):
        super().__init__()
        self.cfg = cfg
        self.image_hw = tuple(image_hw)
        grid = cfg.grid_shape(*self.image_hw)
        self.grid = grid

        k = cfg.stem_kernel
        self.stem = nn.Conv2d(3, cfg.stage_channels[0], k, padding=k // 2)
        stages = []
        prev = cfg.stage_channels[0]
        for width, heads in zip(cfg.stage_channels, cfg.heads_per_stage):
            stages.append(_Stage(prev, width, heads))
            prev = width
        self.stages = nn.ModuleList(stages)
        bottleneck = []
        for _ in range(cfg.bottleneck_blocks):
            bottleneck.append(ResNetBlock(prev, prev))
            if cfg.bottleneck_heads > 0:
                bottleneck.append(SpatialSelfAttention(prev, cfg.bottleneck_heads))
        self.bottleneck = nn.ModuleList(bottleneck)
        if cfg.use_positional_embedding:
            self.pos_embedding = nn.Parameter(
                0.02 * torch.randn(grid[0] * grid[1], prev)
            )
        else:
            self.pos_embedding = None

    def forward(self, image: torch.Tensor) -> ImageTokens:
        """Encode a (B, 3, H, W) image batch into tokens (B, N, C)."""
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.shape[-2:] != self.image_hw:
            raise ConfigError(
                f"expected {self.image_hw[0]}x{self.image_hw[1]} input, "
                f"got {image.shape[-2]}x{image.shape[-1]}"
            )
        x = self.stem(image)
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if not torch.isfinite(x).all():
                raise NumericalError(f"non-finite activations after stage {i}")
        for layer in self.bottleneck:
            x = layer(x)
        if not torch.isfinite(x).all():
            raise NumericalError("non-finite activations after bottleneck")
        tokens = x.flatten(2).transpose(1, 2)  # (B, H'*W', C)
        if self.pos_embedding is not None:
            tokens = tokens + self.pos_embedding
        return ImageTokens(tokens=tokens, grid_shape=self.grid)
