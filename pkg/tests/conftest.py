import numpy as np
import pytest

from viewfill.config import (
    DataConfig,
    PipelineConfig,
    TrainConfig,
)
from viewfill.encoder import EncoderConfig
from viewfill.generator import GeneratorConfig
from viewfill.geometry import PointCloud
from viewfill.refiner import RefinerConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cloud(rng, n, scale=1.0):
    return PointCloud(rng.uniform(-scale, scale, size=(n, 3)))


def tiny_config(**overrides):
    """Small-but-complete pipeline config for fast tests."""
    parts = dict(
        encoder=EncoderConfig(
            stage_channels=(8, 16),
            heads_per_stage=(0, 2),
            bottleneck_blocks=1,
            bottleneck_heads=2,
        ),
        generator=GeneratorConfig(
            n_branches=2, points_per_branch=8, latent_width=16
        ),
        refiner=RefinerConfig(n_stages=2, embed_width=16, heads=2, ffn_width=32),
        data=DataConfig(
            image_size=16,
            n_points=48,
            train_per_category=2,
            val_per_category=1,
            test_per_category=1,
        ),
        train=TrainConfig(epochs=2, batch_size=2),
    )
    parts.update(overrides)
    return PipelineConfig(**parts)
