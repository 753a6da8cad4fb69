import copy

import numpy as np
import pytest
import torch

from viewfill.encoder import (
    EncoderConfig,
    ImageEncoder,
    ResNetBlock,
    RMSNorm,
    SpatialSelfAttention,
)
from viewfill.errors import ConfigError, NumericalError

from .oracles import central_difference


def small_config(**overrides):
    defaults = dict(
        stage_channels=(8, 16),
        heads_per_stage=(2, 4),
        bottleneck_blocks=1,
        bottleneck_heads=4,
    )
    defaults.update(overrides)
    return EncoderConfig(**defaults)


class TestEncoderConfig:
    def test_rejects_decreasing_channels(self):
        with pytest.raises(ConfigError):
            small_config(stage_channels=(16, 8), heads_per_stage=(2, 2))

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ConfigError):
            small_config(heads_per_stage=(3, 4))

    def test_rejects_even_stem_kernel(self):
        with pytest.raises(ConfigError):
            small_config(stem_kernel=4)

    def test_rejects_mismatched_heads_length(self):
        with pytest.raises(ConfigError):
            small_config(heads_per_stage=(2,))

    def test_zero_heads_disable_attention(self):
        cfg = small_config(heads_per_stage=(0, 4))
        enc = ImageEncoder(cfg, (16, 16))
        assert enc.stages[0].attn is None
        assert enc.stages[1].attn is not None

    def test_grid_shape_divisibility(self):
        cfg = small_config()
        with pytest.raises(ConfigError):
            cfg.grid_shape(30, 30)


class TestRMSNorm:
    def test_forced_value(self):
        norm = RMSNorm(2, dim=-1)
        out = norm(torch.tensor([3.0, 4.0]))
        rms = np.sqrt(12.5)
        np.testing.assert_allclose(
            out.detach().numpy(), [3.0 / rms, 4.0 / rms], rtol=1e-6
        )

    def test_channels_first_matches_last(self):
        x = torch.randn(2, 6, 4, 5, dtype=torch.float64)
        a = RMSNorm(6, dim=1).double()(x)
        b = RMSNorm(6, dim=-1).double()(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        assert torch.allclose(a, b, rtol=0, atol=1e-14)


class TestResNetBlock:
    def test_identity_at_init_with_matching_channels(self):
        block = ResNetBlock(8, 8)
        x = torch.randn(2, 8, 6, 6)
        assert torch.equal(block(x), x)

    def test_projection_on_channel_change(self):
        block = ResNetBlock(4, 8)
        out = block(torch.randn(2, 4, 6, 6))
        assert out.shape == (2, 8, 6, 6)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        block = ResNetBlock(4, 4).double()
        with torch.no_grad():
            block.conv2.weight.normal_(0, 0.2)  # leave zero-init to exercise path
        x = torch.randn(1, 4, 5, 5, dtype=torch.float64)

        block.zero_grad()
        block(x).sum().backward()
        autodiff = block.conv1.weight.grad[0, 0, 0, 0].item()

        w = block.conv1.weight.detach().clone()

        def f(wflat):
            with torch.no_grad():
                block.conv1.weight.copy_(torch.from_numpy(wflat))
                return block(x).sum().item()

        h = 1e-4
        wp = w.numpy().copy()
        wp[0, 0, 0, 0] += h
        fp = f(wp)
        wp[0, 0, 0, 0] -= 2 * h
        fm = f(wp)
        with torch.no_grad():
            block.conv1.weight.copy_(w)
        fd = (fp - fm) / (2 * h)
        assert autodiff == pytest.approx(fd, rel=1e-3)


class TestSpatialSelfAttention:
    def test_single_token_weight_is_one(self):
        attn = SpatialSelfAttention(8, heads=2)
        x = torch.randn(1, 1, 8)
        weights = attn.attention_weights(x)
        assert torch.equal(weights, torch.ones(1, 2, 1, 1))
        # zero-init output projection -> residual identity
        assert torch.equal(attn(x), x)

    def test_rows_sum_to_one(self):
        attn = SpatialSelfAttention(16, heads=4)
        weights = attn.attention_weights(torch.randn(2, 9, 16))
        sums = weights.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)

    def test_permutation_equivariance(self):
        torch.manual_seed(1)
        attn = SpatialSelfAttention(8, heads=2).double()
        with torch.no_grad():
            attn.proj.weight.normal_(0, 0.5)
        x = torch.randn(1, 7, 8, dtype=torch.float64)
        perm = torch.randperm(7)
        out = attn(x)
        out_perm = attn(x[:, perm, :])
        assert torch.allclose(out_perm, out[:, perm, :], rtol=1e-12, atol=1e-12)

    def test_map_shape_preserved(self):
        attn = SpatialSelfAttention(8, heads=2)
        x = torch.randn(2, 8, 4, 6)
        assert attn(x).shape == x.shape

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ConfigError):
            SpatialSelfAttention(8, heads=3)


class TestImageEncoder:
    def test_two_stage_grid(self):
        enc = ImageEncoder(small_config(), (32, 32))
        out = enc(torch.rand(1, 3, 32, 32))
        assert out.grid_shape == (8, 8)
        assert out.tokens.shape == (1, 64, 16)

    def test_five_stage_224_grid(self):
        cfg = EncoderConfig(
            stage_channels=(4, 4, 8, 8, 8),
            heads_per_stage=(0, 0, 0, 2, 2),
            bottleneck_blocks=1,
            bottleneck_heads=2,
        )
        enc = ImageEncoder(cfg, (224, 224))
        out = enc(torch.rand(1, 3, 224, 224))
        assert out.grid_shape == (7, 7)
        assert out.tokens.shape == (1, 49, 8)

    def test_zero_image_finite_tokens_and_grads(self):
        enc = ImageEncoder(small_config(), (16, 16))
        out = enc(torch.zeros(1, 3, 16, 16))
        assert torch.isfinite(out.tokens).all()
        out.tokens.sum().backward()
        for name, p in enc.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name

    def test_shape_determined_by_config(self, rng):
        for _ in range(6):
            n_stages = int(rng.integers(1, 4))
            widths = tuple(
                sorted(int(4 * rng.integers(1, 5)) for _ in range(n_stages))
            )
            cfg = EncoderConfig(
                stage_channels=widths,
                heads_per_stage=tuple(0 for _ in widths),
                bottleneck_blocks=int(rng.integers(0, 3)),
                bottleneck_heads=0,
            )
            size = int(2**n_stages * rng.integers(1, 5))
            enc = ImageEncoder(cfg, (size, size))
            out = enc(torch.rand(2, 3, size, size))
            expect = size // 2**n_stages
            assert out.grid_shape == (expect, expect)
            assert out.tokens.shape == (2, expect * expect, widths[-1])

    def test_init_reduces_to_stem_and_downsample(self):
        torch.manual_seed(3)
        enc = ImageEncoder(small_config(), (16, 16))
        image = torch.rand(1, 3, 16, 16)
        baseline = enc(image).tokens

        poked = copy.deepcopy(enc)
        with torch.no_grad():
            for module in poked.modules():
                if isinstance(module, ResNetBlock):
                    module.conv1.weight.normal_()
                if isinstance(module, SpatialSelfAttention):
                    module.qkv.weight.normal_()
        assert torch.equal(poked(image).tokens, baseline)

    def test_wrong_input_size_rejected(self):
        enc = ImageEncoder(small_config(), (16, 16))
        with pytest.raises(ConfigError):
            enc(torch.rand(1, 3, 32, 32))

    def test_non_finite_activations_reported(self):
        enc = ImageEncoder(small_config(), (16, 16))
        with torch.no_grad():
            enc.stem.weight.fill_(float("inf"))
        with pytest.raises(NumericalError, match="stage 0"):
            enc(torch.rand(1, 3, 16, 16))

    def test_positional_embedding_flag(self):
        cfg = small_config(use_positional_embedding=False)
        enc = ImageEncoder(cfg, (16, 16))
        assert enc.pos_embedding is None
