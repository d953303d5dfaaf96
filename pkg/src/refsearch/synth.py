"""Labeled synthetic reference sets: pose sampling + ROI rejection + rendering."""

from __future__ import annotations

from dataclasses import dataclass

from .camera import CameraPose, PerturbationSpec, pose_stream, sample_pose, stream_key
from .geometry import Mesh
from .rasterize import RenderConfig, RenderedImage, render, roi_fraction

MAX_POSE_ATTEMPTS = 100


class RoiError(RuntimeError):
    """No pose within the perturbation bounds keeps the mesh in frame."""


@dataclass(frozen=True)
class PosedDraw:
    """Accepted pose for one reference image, with its provenance."""

    label: str
    draw_index: int
    seed: int          # stream key of this image's draws
    attempts: int      # draws consumed until acceptance
    pose: CameraPose
    roi: float


def accepted_pose(
    mesh: Mesh,
    base: CameraPose,
    spec: PerturbationSpec,
    config: RenderConfig,
    label: str,
    draw_index: int,
) -> PosedDraw:
    """Rejection-sample until the ROI constraint holds, up to MAX_POSE_ATTEMPTS."""
    rng = pose_stream(spec, label, draw_index)
    for attempt in range(1, MAX_POSE_ATTEMPTS + 1):
        pose = sample_pose(base, spec, draw_index, label, rng=rng)
        frac = roi_fraction(mesh, pose, config.width, config.height)
        if frac >= config.roi_min_fraction:
            return PosedDraw(
                label=label,
                draw_index=draw_index,
                seed=stream_key(spec.seed, label, draw_index),
                attempts=attempt,
                pose=pose,
                roi=frac,
            )
    raise RoiError(
        f"class {label!r}, image {draw_index}: no pose satisfied "
        f"roi_min_fraction={config.roi_min_fraction} in {MAX_POSE_ATTEMPTS} draws "
        f"(check the base pose frames the object)"
    )


def reference_poses(
    meshes: dict[str, Mesh],
    base: CameraPose,
    spec: PerturbationSpec,
    config: RenderConfig,
) -> list[PosedDraw]:
    """Accepted pose per (class, draw index), classes in sorted order."""
    if not meshes:
        raise ValueError("at least one class is required")
    draws = []
    for label in sorted(meshes):
        for i in range(config.images_per_class):
            draws.append(accepted_pose(meshes[label], base, spec, config, label, i))
    return draws


def generate_reference_set(
    meshes: dict[str, Mesh],
    base: CameraPose,
    spec: PerturbationSpec,
    config: RenderConfig,
) -> list[RenderedImage]:
    """Render images_per_class views of every class under ROI-checked poses.

    Fully deterministic: each image's pose draws come from a stream keyed by
    (spec.seed, class, draw index), so neither class order nor parallel
    execution can change the output.
    """
    images = []
    for draw in reference_poses(meshes, base, spec, config):
        image = render(meshes[draw.label], draw.pose, config, draw.label)
        image.seed = draw.seed
        images.append(image)
    return images
