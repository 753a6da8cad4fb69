"""Point-cloud data model, normalization, sampling and nearest-neighbor search.

All functions here are pure: outputs depend only on the arguments (including
explicit seeds), so they are safe to call from concurrent workers. Coordinates
are unitless, in normalized object space, and carried as float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from viewfill.errors import InvalidInputError

# Query points are processed in blocks of this many rows so the pairwise
# squared-distance matrix stays small even for 2048-point clouds.
_BRUTEFORCE_BLOCK = 256


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points, shape (count, 3), finite float64."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(
                f"points must have shape (N, 3), got {pts.shape}"
            )
        if pts.shape[0] < 1:
            raise InvalidInputError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class NNResult:
    """Per-query nearest neighbor in a target cloud.

    ``indices[i]`` is the target row closest to query row ``i`` and
    ``sq_distances[i]`` the exact squared Euclidean distance between them.
    """

    indices: np.ndarray
    sq_distances: np.ndarray


def normalize(cloud: PointCloud) -> tuple[PointCloud, np.ndarray, float]:
    """Center a cloud at its centroid and scale to the unit ball.

    Returns ``(normalized, center, scale)`` where
    ``normalized = (cloud - center) / scale``, ``center`` is the centroid and
    ``scale`` the maximum distance from the centroid. Degenerate clouds (all
    points coincident) use ``scale = 1`` to avoid division by zero. The
    returned pair inverts the transform exactly.
    """
    center = cloud.points.mean(axis=0)
    shifted = cloud.points - center
    scale = float(np.sqrt((shifted**2).sum(axis=1)).max())
    if scale < 1e-12:
        scale = 1.0
    return PointCloud(shifted / scale), center, scale


def nn_bruteforce(query: PointCloud, target: PointCloud) -> NNResult:
    """Exact nearest neighbors by exhaustive search.

    Ties are broken by the lowest target index. Squared distances are
    computed as ``((q - t) ** 2).sum()`` on the winning pair.
    """
    q = query.points
    t = target.points
    indices = np.empty(q.shape[0], dtype=np.int64)
    for start in range(0, q.shape[0], _BRUTEFORCE_BLOCK):
        block = q[start : start + _BRUTEFORCE_BLOCK]
        d2 = ((block[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
        indices[start : start + block.shape[0]] = d2.argmin(axis=1)
    sq = ((q - t[indices]) ** 2).sum(axis=1)
    return NNResult(indices=indices, sq_distances=sq)


def nn_accelerated(query: PointCloud, target: PointCloud) -> NNResult:
    """Exact nearest neighbors via a kd-tree.

    Matches :func:`nn_bruteforce` squared distances; indices may differ only
    where true distances tie. Distances are recomputed from the winning pair
    with the same arithmetic as the brute-force path, so they are exact.
    """
    tree = cKDTree(target.points)
    _, idx = tree.query(query.points, k=1)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    sq = ((query.points - target.points[idx]) ** 2).sum(axis=1)
    return NNResult(indices=idx, sq_distances=sq)


def fps_sample(cloud: PointCloud, k: int, seed: int) -> PointCloud:
    """Farthest-point sampling of ``k`` points.

    The first point is chosen by a seeded RNG; each subsequent point
    maximizes the minimum distance to the already-selected set, ties broken
    by lowest index. Deterministic given ``(cloud, k, seed)``.
    """
    idx = fps_indices(cloud, k, seed)
    return PointCloud(cloud.points[idx])


def fps_indices(cloud: PointCloud, k: int, seed: int) -> np.ndarray:
    """Index form of :func:`fps_sample`; returns the selected rows in order."""
    n = cloud.count
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    selected = np.empty(k, dtype=np.int64)
    selected[0] = int(rng.integers(n))
    min_d2 = ((cloud.points - cloud.points[selected[0]]) ** 2).sum(axis=1)
    min_d2[selected[0]] = -np.inf
    for i in range(1, k):
        nxt = int(min_d2.argmax())
        selected[i] = nxt
        d2 = ((cloud.points - cloud.points[nxt]) ** 2).sum(axis=1)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -np.inf
    return selected


def uniform_sample(cloud: PointCloud, k: int, seed: int) -> PointCloud:
    """Seeded uniform subsampling without replacement (training-time switch)."""
    n = cloud.count
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False)
    return PointCloud(cloud.points[idx])


def read_xyz(path) -> PointCloud:
    """Read an ASCII point file: one point per line, three floats, ``#`` comments."""
    rows = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) != 3:
                raise InvalidInputError(
                    f"{path}:{lineno}: expected 3 fields, got {len(fields)}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise InvalidInputError(f"{path}: no points found")
    return PointCloud(np.array(rows, dtype=np.float64))


def write_xyz(path, cloud: PointCloud) -> None:
    """Write an ASCII point file with 9 significant digits per coordinate."""
    with open(path, "w") as f:
        for x, y, z in cloud.points:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
