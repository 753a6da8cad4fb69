"""Synthetic dataset: sample construction, disk layout, manifest.

Each sample is one parametric shape observed from one camera view. The
ground truth is an area-weighted surface sample, normalized to the unit
ball; the partial input removes every point in the half-space facing away
from the camera and re-pads to the full count with jittered copies of
retained points; the image is a depth-shaded orthographic silhouette from
the same view.

On-disk layout: one directory per sample containing ``image.png``,
``partial.xyz``, ``gt.xyz`` and ``meta`` (key=value lines), grouped under
``train/``, ``val/`` and ``test/`` split directories, plus a ``manifest.txt``
listing every sample path and seed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from viewfill.config import DataConfig
from viewfill.errors import InvalidInputError
from viewfill.geometry import PointCloud, normalize, read_xyz, write_xyz
from viewfill.shapes import camera_direction, render, sample_surface, validate_params

SPLITS = ("train", "val", "test")

N_VIEWS = 24  # 8 azimuths x 3 elevations
_ELEVATIONS = (-np.pi / 6, np.pi / 18, np.pi / 4.5)  # -30, 10, 40 degrees


@dataclass(frozen=True)
class TrainSample:
    """One training example; clouds share the ground truth's normalization."""

    image: np.ndarray
    partial: PointCloud
    gt: PointCloud
    category: str
    view_id: int
    seed: int


def view_angles(view_id: int) -> tuple:
    """(azimuth, elevation) of one of the 24 canonical views."""
    if not 0 <= view_id < N_VIEWS:
        raise InvalidInputError(f"view_id must be in [0, {N_VIEWS}), got {view_id}")
    azimuth = 2 * np.pi * (view_id % 8) / 8
    elevation = _ELEVATIONS[view_id // 8]
    return azimuth, elevation


def synth_sample(
    shape_kind: str,
    params: dict,
    view: tuple,
    seed: int,
    n_points: int = 512,
    image_size: int = 32,
    jitter: float = 1e-3,
    category: str = "",
    view_id: int = 0,
) -> TrainSample:
    """Construct one sample; bitwise reproducible for fixed arguments."""
    validate_params(shape_kind, params)
    azimuth, elevation = view
    rng = np.random.default_rng(seed)

    raw = sample_surface(shape_kind, params, n_points, rng)
    gt, _, _ = normalize(PointCloud(raw))

    toward_camera = camera_direction(azimuth, elevation)
    # half-space culling about the normalized-frame origin: the view
    # direction points from the camera toward the object, so camera-facing
    # points satisfy dot(p, view_dir) <= 0
    facing = gt.points @ -toward_camera <= 0.0
    retained = gt.points[facing]
    if retained.shape[0] == 0:
        raise InvalidInputError("view culled every point; degenerate shape/view")
    n_missing = n_points - retained.shape[0]
    resampled = retained[rng.integers(0, retained.shape[0], size=n_missing)]
    noise = rng.uniform(-jitter, jitter, size=(n_missing, 3))
    partial = PointCloud(np.concatenate([retained, resampled + noise], axis=0))

    image = render(shape_kind, params, azimuth, elevation, image_size)
    return TrainSample(
        image=image,
        partial=partial,
        gt=gt,
        category=category or shape_kind,
        view_id=view_id,
        seed=seed,
    )


def draw_shape_params(kind: str, rng: np.random.Generator) -> dict:
    """Per-sample shape parameters, drawn within frame-safe ranges."""
    if kind == "sphere":
        return {"radius": rng.uniform(0.6, 1.0)}
    if kind == "box":
        return {
            "extent_x": rng.uniform(0.6, 1.4),
            "extent_y": rng.uniform(0.6, 1.4),
            "extent_z": rng.uniform(0.6, 1.4),
        }
    if kind == "cylinder":
        return {"radius": rng.uniform(0.3, 0.7), "height": rng.uniform(0.8, 1.6)}
    if kind == "torus":
        major = rng.uniform(0.5, 0.8)
        return {"major_radius": major, "minor_radius": rng.uniform(0.15, 0.3)}
    raise InvalidInputError(f"unknown shape kind {kind!r}")


def _sample_seed(root_seed: int, split_index: int, category_index: int, k: int) -> int:
    seq = np.random.SeedSequence([root_seed, split_index, category_index, k])
    return int(seq.generate_state(1)[0])


def build_sample(cfg: DataConfig, category: str, seed: int) -> TrainSample:
    """Draw shape parameters and a view from ``seed`` and synthesize."""
    rng = np.random.default_rng(seed)
    params = draw_shape_params(category, rng)
    view_id = int(rng.integers(N_VIEWS))
    return synth_sample(
        category,
        params,
        view_angles(view_id),
        seed=seed,
        n_points=cfg.n_points,
        image_size=cfg.image_size,
        jitter=cfg.jitter,
        category=category,
        view_id=view_id,
    )


def save_sample(directory, sample: TrainSample) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    quantized = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(directory / "image.png")
    write_xyz(directory / "partial.xyz", sample.partial)
    write_xyz(directory / "gt.xyz", sample.gt)
    with open(directory / "meta", "w") as f:
        f.write(f"category={sample.category}\n")
        f.write(f"view_id={sample.view_id}\n")
        f.write(f"seed={sample.seed}\n")


def load_image(path) -> np.ndarray:
    """Decode an 8-bit RGB PNG to (H, W, 3) floats in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def load_sample(directory) -> TrainSample:
    directory = Path(directory)
    meta = {}
    with open(directory / "meta") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{directory}/meta: malformed line {line!r}")
            key, value = line.split("=", 1)
            meta[key] = value
    return TrainSample(
        image=load_image(directory / "image.png"),
        partial=read_xyz(directory / "partial.xyz"),
        gt=read_xyz(directory / "gt.xyz"),
        category=meta.get("category", ""),
        view_id=int(meta.get("view_id", 0)),
        seed=int(meta.get("seed", 0)),
    )


def generate_dataset(cfg: DataConfig, out_dir, seed: int) -> list:
    """Write all splits under ``out_dir``; returns manifest rows (path, seed)."""
    out_dir = Path(out_dir)
    counts = {
        "train": cfg.train_per_category,
        "val": cfg.val_per_category,
        "test": cfg.test_per_category,
    }
    manifest = []
    for split_index, split in enumerate(SPLITS):
        for cat_index, category in enumerate(cfg.categories):
            for k in range(counts[split]):
                sample_seed = _sample_seed(seed, split_index, cat_index, k)
                sample = build_sample(cfg, category, sample_seed)
                rel = f"{split}/{category}_{k:04d}"
                save_sample(out_dir / rel, sample)
                manifest.append((rel, sample_seed))
    with open(out_dir / "manifest.txt", "w") as f:
        for rel, sample_seed in manifest:
            f.write(f"{rel} {sample_seed}\n")
    return manifest


def load_split(root, split: str) -> list:
    """Load every sample of a split, ordered by directory name."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise InvalidInputError(f"missing split directory: {split_dir}")
    samples = []
    for name in sorted(os.listdir(split_dir)):
        path = split_dir / name
        if path.is_dir():
            samples.append(load_sample(path))
    if not samples:
        raise InvalidInputError(f"split {split!r} contains no samples")
    return samples
