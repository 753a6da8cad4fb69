"""Parametric shapes: surface sampling, camera geometry, silhouette rendering.

Four shape kinds (sphere, box, cylinder, torus), all centered at the origin.
Surface sampling is area-weighted and driven by a caller-supplied RNG, so it
is deterministic given the generator state. Rendering is an orthographic ray
cast against the analytic surface: background pixels are black, hit pixels
are shaded by depth (nearest = brightest).
"""
from __future__ import annotations

import numpy as np

from viewfill.errors import InvalidInputError

FRAME_HALFWIDTH = 1.5  # camera plane spans [-1.5, 1.5] in both axes
_RAY_START = 4.0  # ray origins sit this far toward the camera
_SHADE_FLOOR = 0.25  # darkest silhouette value; background stays 0

SHAPE_KINDS = ("sphere", "box", "cylinder", "torus")


def validate_params(kind: str, params: dict) -> dict:
    """Check shape parameters are positive and complete for the kind."""
    required = {
        "sphere": ("radius",),
        "box": ("extent_x", "extent_y", "extent_z"),
        "cylinder": ("radius", "height"),
        "torus": ("major_radius", "minor_radius"),
    }
    if kind not in required:
        raise InvalidInputError(f"unknown shape kind {kind!r}")
    for name in required[kind]:
        value = params.get(name)
        if value is None or not np.isfinite(value) or value <= 0:
            raise InvalidInputError(f"{kind}: parameter {name} must be positive")
    if kind == "torus" and params["minor_radius"] >= params["major_radius"]:
        raise InvalidInputError("torus: minor_radius must be below major_radius")
    return params


def camera_direction(azimuth: float, elevation: float) -> np.ndarray:
    """Unit vector from the object center toward the camera."""
    ce = np.cos(elevation)
    return np.array(
        [ce * np.cos(azimuth), ce * np.sin(azimuth), np.sin(elevation)]
    )


def camera_frame(azimuth: float, elevation: float):
    """Orthonormal (toward_camera, right, up); elevation must avoid the poles."""
    c = camera_direction(azimuth, elevation)
    right = np.cross([0.0, 0.0, 1.0], c)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise InvalidInputError("elevation too close to +-90 degrees")
    right /= norm
    up = np.cross(c, right)
    return c, right, up


def sample_surface(kind: str, params: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` area-weighted points on the surface; returns (n, 3)."""
    validate_params(kind, params)
    if kind == "sphere":
        return _sample_sphere(params["radius"], n, rng)
    if kind == "box":
        extents = np.array(
            [params["extent_x"], params["extent_y"], params["extent_z"]]
        )
        return _sample_box(extents, n, rng)
    if kind == "cylinder":
        return _sample_cylinder(params["radius"], params["height"], n, rng)
    return _sample_torus(params["major_radius"], params["minor_radius"], n, rng)


def _sample_sphere(radius, n, rng):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v


def _sample_box(extents, n, rng):
    half = extents / 2.0
    # face pairs +-x, +-y, +-z; each pair's area repeated twice
    areas = np.array(
        [
            extents[1] * extents[2],
            extents[1] * extents[2],
            extents[0] * extents[2],
            extents[0] * extents[2],
            extents[0] * extents[1],
            extents[0] * extents[1],
        ]
    )
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        sel = axis == a
        others = [i for i in range(3) if i != a]
        pts[sel, a] = sign[sel] * half[a]
        pts[sel, others[0]] = uv[sel, 0] * half[others[0]]
        pts[sel, others[1]] = uv[sel, 1] * half[others[1]]
    return pts


def _sample_cylinder(radius, height, n, rng):
    side_area = 2 * np.pi * radius * height
    cap_area = np.pi * radius**2
    total = side_area + 2 * cap_area
    part = rng.choice(3, size=n, p=[side_area / total, cap_area / total, cap_area / total])
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    u = rng.uniform(0.0, 1.0, size=n)
    pts = np.empty((n, 3))
    side = part == 0
    pts[side, 0] = radius * np.cos(theta[side])
    pts[side, 1] = radius * np.sin(theta[side])
    pts[side, 2] = (u[side] - 0.5) * height
    for which, z in ((1, height / 2.0), (2, -height / 2.0)):
        sel = part == which
        rr = radius * np.sqrt(u[sel])
        pts[sel, 0] = rr * np.cos(theta[sel])
        pts[sel, 1] = rr * np.sin(theta[sel])
        pts[sel, 2] = z
    return pts


def _sample_torus(major, minor, n, rng):
    # area element ~ (major + minor*cos(theta)); rejection-sample theta
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = max(64, 2 * (n - filled))
        theta = rng.uniform(0.0, 2 * np.pi, size=m)
        accept = rng.uniform(0.0, 1.0, size=m) < (
            (major + minor * np.cos(theta)) / (major + minor)
        )
        theta = theta[accept][: n - filled]
        phi = rng.uniform(0.0, 2 * np.pi, size=theta.size)
        ring = major + minor * np.cos(theta)
        pts[filled : filled + theta.size, 0] = ring * np.cos(phi)
        pts[filled : filled + theta.size, 1] = ring * np.sin(phi)
        pts[filled : filled + theta.size, 2] = minor * np.sin(theta)
        filled += theta.size
    return pts


def _ray_hits(kind, params, origins, direction):
    """Smallest positive hit parameter per ray; inf where the ray misses."""
    if kind == "sphere":
        return _hit_sphere(params["radius"], origins, direction)
    if kind == "box":
        half = 0.5 * np.array(
            [params["extent_x"], params["extent_y"], params["extent_z"]]
        )
        return _hit_box(half, origins, direction)
    if kind == "cylinder":
        return _hit_cylinder(params["radius"], params["height"], origins, direction)
    return _hit_torus(
        params["major_radius"], params["minor_radius"], origins, direction
    )


def _hit_sphere(radius, o, d):
    b = o @ d
    disc = b**2 - ((o**2).sum(axis=1) - radius**2)
    t = np.full(len(o), np.inf)
    ok = disc >= 0
    t[ok] = -b[ok] - np.sqrt(disc[ok])
    t[t <= 0] = np.inf
    return t


def _hit_box(half, o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    # axis-parallel rays: inside the slab -> unbounded, outside -> miss
    for a in range(3):
        if abs(d[a]) < 1e-12:
            inside = np.abs(o[:, a]) <= half[a]
            near[:, a] = np.where(inside, -np.inf, np.inf)
            far[:, a] = np.where(inside, np.inf, -np.inf)
    tmin = near.max(axis=1)
    tmax = far.min(axis=1)
    t = np.where((tmax >= tmin) & (tmin > 0), tmin, np.inf)
    return t


def _hit_cylinder(radius, height, o, d):
    t = np.full(len(o), np.inf)
    half_h = height / 2.0
    a = d[0] ** 2 + d[1] ** 2
    if a > 1e-14:
        b = 2 * (o[:, 0] * d[0] + o[:, 1] * d[1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - radius**2
        disc = b**2 - 4 * a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        for sign in (-1.0, 1.0):
            tc = np.where(ok, (-b + sign * sq) / (2 * a), np.inf)
            z = o[:, 2] + tc * d[2]
            valid = ok & (tc > 0) & (np.abs(z) <= half_h)
            t = np.where(valid & (tc < t), tc, t)
    if abs(d[2]) > 1e-14:
        for z_cap in (half_h, -half_h):
            tc = (z_cap - o[:, 2]) / d[2]
            x = o[:, 0] + tc * d[0]
            y = o[:, 1] + tc * d[1]
            valid = (tc > 0) & (x**2 + y**2 <= radius**2)
            t = np.where(valid & (tc < t), tc, t)
    return t


def _hit_torus(major, minor, o, d):
    t = np.full(len(o), np.inf)
    # bounding-sphere prefilter keeps the quartic solve off most pixels
    cross = np.cross(o, d)
    near = np.linalg.norm(cross, axis=1) <= major + minor + 1e-9
    idx = np.nonzero(near)[0]
    k_const = major**2 - minor**2
    dxy2 = d[0] ** 2 + d[1] ** 2
    for i in idx:
        oi = o[i]
        b = 2.0 * (oi @ d)
        c = oi @ oi
        k = c + k_const
        oxy = oi[0] * d[0] + oi[1] * d[1]
        coeffs = [
            1.0,
            2.0 * b,
            b**2 + 2.0 * k - 4.0 * major**2 * dxy2,
            2.0 * b * k - 8.0 * major**2 * oxy,
            k**2 - 4.0 * major**2 * (oi[0] ** 2 + oi[1] ** 2),
        ]
        roots = np.roots(coeffs)
        real = roots[np.abs(roots.imag) < 1e-9].real
        real = real[real > 1e-9]
        if real.size:
            t[i] = real.min()
    return t


def render(
    kind: str,
    params: dict,
    azimuth: float,
    elevation: float,
    resolution: int,
    frame_halfwidth: float = FRAME_HALFWIDTH,
) -> np.ndarray:
    """Orthographic depth-shaded silhouette, (H, W, 3) floats in [0, 1].

    Row 0 is the top of the image (+up); column 0 is the left (-right).
    """
    validate_params(kind, params)
    c, right, up = camera_frame(azimuth, elevation)
    centers = (np.arange(resolution) + 0.5) / resolution * 2 * frame_halfwidth
    xs = -frame_halfwidth + centers  # left to right
    ys = frame_halfwidth - centers  # top to bottom
    gx, gy = np.meshgrid(xs, ys)
    origins = (
        _RAY_START * c[None, :]
        + gx.reshape(-1, 1) * right[None, :]
        + gy.reshape(-1, 1) * up[None, :]
    )
    t = _ray_hits(kind, params, origins, -c)
    image = np.zeros(resolution * resolution)
    hits = np.isfinite(t)
    if hits.any():
        tn, tx = t[hits].min(), t[hits].max()
        span = max(tx - tn, 1e-12)
        image[hits] = _SHADE_FLOOR + (1.0 - _SHADE_FLOOR) * (1.0 - (t[hits] - tn) / span)
    image = image.reshape(resolution, resolution)
    return np.repeat(image[:, :, None], 3, axis=2)
