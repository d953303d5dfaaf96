"""Minimal deterministic CPU rasterizer: pinhole projection, z-buffer, flat shading.

Conventions (fixed, so golden-image tests stay valid):
  - Camera space: x right, y up, camera looks along +forward; a point's depth
    is its forward component (positive in front of the camera).
  - Projection: vertical FOV drives the focal length in pixels; square pixels.
  - Screen space: x right, y DOWN, origin at the top-left corner; a pixel
    (row, col) is covered when its center (col+0.5, row+0.5) lies inside the
    projected triangle; centers exactly on an edge count as inside.
  - Depth test: strictly nearer wins; at exactly equal depth the earlier
    triangle keeps the pixel (deterministic given triangle order).
  - light_direction points from the scene toward the light, so a face whose
    normal is aligned with it receives full diffuse intensity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraPose
from .geometry import Mesh

NEAR_PLANE = 1e-6

RGB = tuple[int, int, int]


@dataclass
class RenderConfig:
    """Frame geometry, per-class materials, lighting, and the ROI threshold."""

    width: int = 224
    height: int = 224
    images_per_class: int = 24
    background_color: RGB = (52, 52, 56)
    albedo: dict[str, RGB] = field(default_factory=dict)
    albedo_default: RGB = (200, 200, 200)
    light_direction: tuple[float, float, float] = (0.35, -0.35, 0.87)
    ambient: float = 0.25
    roi_min_fraction: float = 0.9

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.images_per_class < 1:
            raise ValueError("width, height and images_per_class must be >= 1")
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError(f"ambient must be in [0, 1], got {self.ambient}")
        if not 0.0 < self.roi_min_fraction <= 1.0:
            raise ValueError(
                f"roi_min_fraction must be in (0, 1], got {self.roi_min_fraction}"
            )
        light = np.asarray(self.light_direction, dtype=np.float64)
        norm = np.linalg.norm(light)
        if norm < 1e-12:
            raise ValueError("light_direction is zero")
        self.light_direction = tuple(light / norm)

    def albedo_for(self, label: str) -> RGB:
        return self.albedo.get(label, self.albedo_default)


@dataclass
class RenderedImage:
    """8-bit RGB raster with its class label and the pose-stream seed."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8
    label: str
    seed: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )


def camera_space(points: np.ndarray, pose: CameraPose) -> np.ndarray:
    """Map world points (n,3) to camera space columns (x_right, y_up, depth)."""
    right, up, forward = pose.basis()
    rel = np.asarray(points, dtype=np.float64) - np.asarray(pose.position)
    return rel @ np.stack([right, up, forward], axis=1)


def project(points: np.ndarray, pose: CameraPose, width: int, height: int):
    """Project world points to (n,2) pixel coordinates plus their depths.

    Points at or behind the near plane get NaN coordinates; callers must mask
    with depth > NEAR_PLANE before using them.
    """
    cam = camera_space(points, pose)
    depth = cam[:, 2]
    focal = (height / 2.0) / np.tan(np.deg2rad(pose.vertical_fov) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(depth > NEAR_PLANE, 1.0 / depth, np.nan)
    px = width / 2.0 + cam[:, 0] * inv * focal
    py = height / 2.0 - cam[:, 1] * inv * focal
    return np.stack([px, py], axis=1), depth


def roi_fraction(mesh: Mesh, pose: CameraPose, width: int, height: int) -> float:
    """Fraction of mesh vertices that project inside the frame."""
    if mesh.vertex_count == 0:
        return 0.0
    xy, depth = project(mesh.vertices, pose, width, height)
    inside = (
        (depth > NEAR_PLANE)
        & (xy[:, 0] >= 0.0)
        & (xy[:, 0] <= width)
        & (xy[:, 1] >= 0.0)
        & (xy[:, 1] <= height)
    )
    return float(np.count_nonzero(inside)) / mesh.vertex_count


def _clip_near(tri_cam: np.ndarray) -> list[np.ndarray]:
    """Clip one camera-space triangle against depth > NEAR_PLANE.

    Returns 0, 1 or 2 triangles (Sutherland-Hodgman on the near plane).
    """
    inside = tri_cam[:, 2] > NEAR_PLANE
    n_in = int(inside.sum())
    if n_in == 3:
        return [tri_cam]
    if n_in == 0:
        return []

    poly = []
    for i in range(3):
        j = (i + 1) % 3
        a, b = tri_cam[i], tri_cam[j]
        if inside[i]:
            poly.append(a)
        if inside[i] != inside[j]:
            t = (NEAR_PLANE - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    if len(poly) == 3:
        return [np.array(poly)]
    return [np.array([poly[0], poly[1], poly[2]]), np.array([poly[0], poly[2], poly[3]])]


def render(mesh: Mesh, pose: CameraPose, config: RenderConfig, label: str = "") -> RenderedImage:
    """Rasterize a mesh into a flat-shaded RGB frame.

    Per-face color is albedo * (ambient + (1-ambient) * max(0, normal . light));
    uncovered pixels keep the background color. Degenerate faces are skipped.
    """
    w, h = config.width, config.height
    frame = np.empty((h, w, 3), dtype=np.uint8)
    frame[:] = config.background_color
    if mesh.triangle_count == 0:
        return RenderedImage(w, h, frame, label)

    # inv_depth buffer: larger means nearer; background is 0.
    zbuf = np.zeros((h, w), dtype=np.float64)

    cam = camera_space(mesh.vertices, pose)
    focal = (h / 2.0) / np.tan(np.deg2rad(pose.vertical_fov) / 2.0)
    albedo = np.asarray(config.albedo_for(label), dtype=np.float64)
    light = np.asarray(config.light_direction)
    ambient = config.ambient

    lit = ambient + (1.0 - ambient) * np.maximum(0.0, mesh.face_normals @ light)
    colors = np.clip(np.rint(albedo[None, :] * lit[:, None]), 0, 255).astype(np.uint8)

    for t in range(mesh.triangle_count):
        if mesh.degenerate[t]:
            continue
        for tri in _clip_near(cam[mesh.triangles[t]]):
            _fill(frame, zbuf, tri, colors[t], focal, w, h)
    return RenderedImage(w, h, frame, label)


def _fill(frame, zbuf, tri_cam, color, focal, w, h):
    inv_depth = 1.0 / tri_cam[:, 2]
    sx = w / 2.0 + tri_cam[:, 0] * inv_depth * focal
    sy = h / 2.0 - tri_cam[:, 1] * inv_depth * focal

    # Twice the signed screen-space area; orient CCW so edge functions are >= 0 inside.
    area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0])
    if area == 0.0:
        return
    if area < 0.0:
        sx = sx[[0, 2, 1]]
        sy = sy[[0, 2, 1]]
        inv_depth = inv_depth[[0, 2, 1]]
        area = -area

    x_min = max(int(np.floor(min(sx) - 0.5)), 0)
    x_max = min(int(np.ceil(max(sx) - 0.5)), w - 1)
    y_min = max(int(np.floor(min(sy) - 0.5)), 0)
    y_max = min(int(np.ceil(max(sy) - 0.5)), h - 1)
    if x_min > x_max or y_min > y_max:
        return

    cx = np.arange(x_min, x_max + 1) + 0.5
    cy = (np.arange(y_min, y_max + 1) + 0.5)[:, None]

    e0 = (sx[2] - sx[1]) * (cy - sy[1]) - (sy[2] - sy[1]) * (cx - sx[1])
    e1 = (sx[0] - sx[2]) * (cy - sy[2]) - (sy[0] - sy[2]) * (cx - sx[2])
    e2 = (sx[1] - sx[0]) * (cy - sy[0]) - (sy[1] - sy[0]) * (cx - sx[0])
    covered = (e0 >= 0.0) & (e1 >= 0.0) & (e2 >= 0.0)
    if not covered.any():
        return

    # 1/depth is linear in screen space, so barycentric interpolation is exact.
    pixel_inv_depth = (e0 * inv_depth[0] + e1 * inv_depth[1] + e2 * inv_depth[2]) / area

    window = zbuf[y_min : y_max + 1, x_min : x_max + 1]
    wins = covered & (pixel_inv_depth > window)
    window[wins] = pixel_inv_depth[wins]
    frame[y_min : y_max + 1, x_min : x_max + 1][wins] = color
