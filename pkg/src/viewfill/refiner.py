"""Iterative point refinement with self- and cross-attention.

Coarse coordinates are embedded once (affine 3 -> D); each of the L stages
runs a pre-norm transformer block (point self-attention, cross-attention
with the query side on points and keys/values on image tokens, feed-forward)
and a per-stage offset head whose final layer is zero-initialized. Offsets
accumulate onto the coordinates; embeddings carry forward across stages and
are never re-embedded from the updated points.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from viewfill.encoder import RMSNorm, SpatialSelfAttention
from viewfill.errors import ConfigError, InvalidInputError


@dataclass(frozen=True)
class RefinerConfig:
    n_stages: int = 4
    embed_width: int = 128
    heads: int = 4
    ffn_width: int = 256
    share_offset_heads: bool = False

    def __post_init__(self):
        if self.n_stages < 1:
            raise ConfigError("refiner.n_stages: must be positive")
        if self.embed_width < 1:
            raise ConfigError("refiner.embed_width: must be positive")
        if self.heads < 1 or self.embed_width % self.heads != 0:
            raise ConfigError(
                f"refiner.heads: {self.heads} must divide width {self.embed_width}"
            )
        if self.ffn_width < 1:
            raise ConfigError("refiner.ffn_width: must be positive")


@dataclass
class RefinementTrace:
    """Point sets P^(0)..P^(L) and the per-stage offsets between them."""

    stages: list
    offsets: list

    def validate(self) -> None:
        """Assert the additive-trace invariants (used in tests/debug)."""
        if len(self.stages) != len(self.offsets) + 1:
            raise InvalidInputError("trace must have one more stage than offsets")
        for l, delta in enumerate(self.offsets):
            if not torch.equal(self.stages[l] + delta, self.stages[l + 1]):
                raise InvalidInputError(f"trace additivity violated at stage {l}")

    @property
    def refined(self) -> torch.Tensor:
        return self.stages[-1]


class CrossAttention(nn.Module):
    """Multi-head attention: queries from points, keys/values from memory.

    Pre-norm on the query side with a residual connection; the output
    projection is zero-initialized. Row-wise over queries, so permuting the
    query rows permutes the output rows identically.
    """

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = RMSNorm(width, dim=-1)
        self.to_q = nn.Linear(width, width)
        self.to_k = nn.Linear(width, width)
        self.to_v = nn.Linear(width, width)
        self.proj = nn.Linear(width, width)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        m = memory.shape[1]
        head_dim = c // self.heads
        q = self.to_q(self.norm(x)).view(b, n, self.heads, head_dim).transpose(1, 2)
        k = self.to_k(memory).view(b, m, self.heads, head_dim).transpose(1, 2)
        v = self.to_v(memory).view(b, m, self.heads, head_dim).transpose(1, 2)
        weights = (q @ k.transpose(-2, -1) / head_dim**0.5).softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, n, c)
        return x + self.proj(out)


class RefineBlock(nn.Module):
    """Self-attention over points, cross-attention to tokens, feed-forward."""

    def __init__(self, width: int, heads: int, ffn_width: int):
        super().__init__()
        self.self_attn = SpatialSelfAttention(width, heads)
        self.cross_attn = CrossAttention(width, heads)
        self.ffn_norm = RMSNorm(width, dim=-1)
        self.ffn = nn.Sequential(
            nn.Linear(width, ffn_width), nn.SiLU(), nn.Linear(ffn_width, width)
        )
        nn.init.zeros_(self.ffn[-1].weight)
        nn.init.zeros_(self.ffn[-1].bias)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        x = self.self_attn(x)
        x = self.cross_attn(x, memory)
        return x + self.ffn(self.ffn_norm(x))


class OffsetHead(nn.Module):
    """Per-point MLP D -> ffn_width -> 3; final layer zero-initialized."""

    def __init__(self, width: int, ffn_width: int):
        super().__init__()
        self.hidden = nn.Linear(width, ffn_width)
        self.out = nn.Linear(ffn_width, 3)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(torch.nn.functional.silu(self.hidden(x)))


class P2PRefiner(nn.Module):
    """L-stage offset accumulation driven by point and image features."""

    def __init__(self, cfg: RefinerConfig, token_width: int):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_width
        self.embed = nn.Linear(3, d)
        self.token_proj = nn.Linear(token_width, d)
        self.blocks = nn.ModuleList(
            RefineBlock(d, cfg.heads, cfg.ffn_width) for _ in range(cfg.n_stages)
        )
        n_heads = 1 if cfg.share_offset_heads else cfg.n_stages
        self.offset_heads = nn.ModuleList(
            OffsetHead(d, cfg.ffn_width) for _ in range(n_heads)
        )

    def embed_points(self, coarse: torch.Tensor) -> torch.Tensor:
        """Affine per-point map (B, N, 3) -> (B, N, D)."""
        return self.embed(coarse)

    def predict_offsets(self, x: torch.Tensor, stage: int) -> torch.Tensor:
        """Offsets (B, N, 3) for the given stage's head."""
        if not 0 <= stage < self.cfg.n_stages:
            raise InvalidInputError(
                f"stage must be in [0, {self.cfg.n_stages}), got {stage}"
            )
        head = self.offset_heads[0 if self.cfg.share_offset_heads else stage]
        return head(x)

    def forward(self, coarse: torch.Tensor, tokens: torch.Tensor) -> RefinementTrace:
        """Refine (B, N, 3) coarse points against (B, M, C) image tokens."""
        squeeze = coarse.dim() == 2
        if squeeze:
            coarse = coarse.unsqueeze(0)
            tokens = tokens.unsqueeze(0) if tokens.dim() == 2 else tokens
        x = self.embed_points(coarse)
        memory = self.token_proj(tokens)
        points = coarse
        stages = [points]
        offsets = []
        for stage, block in enumerate(self.blocks):
            x = block(x, memory)
            delta = self.predict_offsets(x, stage)
            points = points + delta
            stages.append(points)
            offsets.append(delta)
        if squeeze:
            stages = [s.squeeze(0) for s in stages]
            offsets = [o.squeeze(0) for o in offsets]
        trace = RefinementTrace(stages=stages, offsets=offsets)
        if __debug__:
            trace.validate()
        return trace
