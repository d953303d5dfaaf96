"""Camera poses and seeded orbital perturbation around a look-at target.

Randomness is counter-based: the draw stream for reference image i of class c
is keyed by blake2b(seed, c, i), so any image can be regenerated in isolation
and rendering order never affects results. Python's builtin hash() is
process-salted and must not be used here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MIN_UP_ANGLE_RAD = 1e-4


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: position, look-at target, up hint, vertical FOV in degrees."""

    position: tuple[float, float, float]
    target: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    vertical_fov: float = 40.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        tgt = np.asarray(self.target, dtype=np.float64)
        up = np.asarray(self.up, dtype=np.float64)
        if not (np.isfinite(pos).all() and np.isfinite(tgt).all() and np.isfinite(up).all()):
            raise ValueError("camera pose has non-finite components")
        if not 0.0 < self.vertical_fov < 180.0:
            raise ValueError(f"vertical_fov must be in (0, 180), got {self.vertical_fov}")
        offset = tgt - pos
        dist = np.linalg.norm(offset)
        if dist < 1e-12:
            raise ValueError("camera position equals target")
        up_norm = np.linalg.norm(up)
        if up_norm < 1e-12:
            raise ValueError("up vector is zero")
        up = up / up_norm
        sin_angle = np.linalg.norm(np.cross(offset / dist, up))
        if sin_angle <= MIN_UP_ANGLE_RAD:
            raise ValueError("up vector is (nearly) parallel to the view direction")
        object.__setattr__(self, "position", tuple(float(x) for x in pos))
        object.__setattr__(self, "target", tuple(float(x) for x in tgt))
        object.__setattr__(self, "up", tuple(float(x) for x in up))

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, up, forward) with forward pointing at the target."""
        pos = np.asarray(self.position)
        tgt = np.asarray(self.target)
        forward = tgt - pos
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up))
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return right, up, forward

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.asarray(self.target) - np.asarray(self.position)))


@dataclass(frozen=True)
class PerturbationSpec:
    """Uniform per-axis orbit bounds (degrees) plus relative distance jitter."""

    max_yaw: float = 0.0
    max_pitch: float = 0.0
    max_roll: float = 0.0
    distance_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("max_yaw", "max_pitch", "max_roll"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if not 0.0 <= self.distance_jitter < 1.0:
            raise ValueError(f"distance_jitter must be in [0, 1), got {self.distance_jitter}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def stream_key(seed: int, label: str, draw_index: int) -> int:
    """64-bit key of the (seed, class, image) draw stream."""
    h = hashlib.blake2b(digest_size=8)
    h.update(seed.to_bytes(8, "little"))
    h.update(label.encode("utf-8"))
    h.update(int(draw_index).to_bytes(8, "little", signed=False))
    return int.from_bytes(h.digest(), "little")


def pose_stream(spec: PerturbationSpec, label: str, draw_index: int) -> np.random.Generator:
    """Fresh generator for one image's draws (including rejection re-draws)."""
    return np.random.default_rng(stream_key(spec.seed, label, draw_index))


def _rotation(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return c * np.eye(3) + s * k + (1.0 - c) * np.outer(axis, axis)


def sample_pose(
    base: CameraPose,
    spec: PerturbationSpec,
    draw_index: int,
    label: str = "",
    rng: np.random.Generator | None = None,
) -> CameraPose:
    """Draw one orbited camera pose around base.target.

    Yaw rotates the offset about the camera up axis, pitch about the camera
    right axis, each uniform in [-bound, +bound]; roll spins the up vector
    about the new view direction; camera-target distance scales by a factor
    uniform in [1-jitter, 1+jitter]. Target and FOV are unchanged. With all
    bounds zero the base pose is returned unchanged. Passing an explicit rng
    continues that stream (used for rejection re-draws); otherwise the draw
    comes from the start of the (seed, label, draw_index) stream.
    """
    if rng is None:
        rng = pose_stream(spec, label, draw_index)
    yaw = np.deg2rad(rng.uniform(-spec.max_yaw, spec.max_yaw))
    pitch = np.deg2rad(rng.uniform(-spec.max_pitch, spec.max_pitch))
    roll = np.deg2rad(rng.uniform(-spec.max_roll, spec.max_roll))
    scale = rng.uniform(1.0 - spec.distance_jitter, 1.0 + spec.distance_jitter)
    if yaw == 0.0 and pitch == 0.0 and roll == 0.0 and scale == 1.0:
        return base

    right, up, _ = base.basis()
    target = np.asarray(base.target)
    offset = np.asarray(base.position) - target
    offset = _rotation(right, pitch) @ (_rotation(up, yaw) @ offset)
    offset *= scale
    position = target + offset

    forward = target - position
    forward /= np.linalg.norm(forward)
    new_up = _rotation(forward, roll) @ np.asarray(base.up)

    return CameraPose(
        position=tuple(position),
        target=base.target,
        up=tuple(new_up),
        vertical_fov=base.vertical_fov,
    )
