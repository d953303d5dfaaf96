import numpy as np
import pytest

from refsearch.camera import CameraPose, PerturbationSpec, pose_stream, sample_pose, stream_key


BASE = CameraPose(position=(0.0, -2.5, 0.8), target=(0.0, 0.0, 0.0), up=(0, 0, 1), vertical_fov=40)


def test_pose_validation():
    with pytest.raises(ValueError, match="equals target"):
        CameraPose(position=(1, 1, 1), target=(1, 1, 1))
    with pytest.raises(ValueError, match="parallel"):
        CameraPose(position=(0, 0, -2), target=(0, 0, 0), up=(0, 0, 1))
    with pytest.raises(ValueError, match="vertical_fov"):
        CameraPose(position=(0, -2, 0), target=(0, 0, 0), vertical_fov=180)


def test_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec(max_yaw=-1)
    with pytest.raises(ValueError):
        PerturbationSpec(distance_jitter=1.0)


def test_zero_perturbation_is_identity():
    spec = PerturbationSpec(seed=7)
    pose = sample_pose(BASE, spec, draw_index=3, label="cube")
    assert pose == BASE


def test_same_key_same_pose():
    spec = PerturbationSpec(max_yaw=15, max_pitch=10, max_roll=5, distance_jitter=0.1, seed=42)
    a = sample_pose(BASE, spec, draw_index=5, label="cone")
    b = sample_pose(BASE, spec, draw_index=5, label="cone")
    assert a == b


def test_different_label_or_index_changes_pose():
    spec = PerturbationSpec(max_yaw=15, seed=42)
    base_draw = sample_pose(BASE, spec, 0, "a")
    assert sample_pose(BASE, spec, 1, "a") != base_draw
    assert sample_pose(BASE, spec, 0, "b") != base_draw


def test_stream_key_is_stable():
    # Frozen: the key must never change across runs/processes or the
    # "byte-identical rerun" guarantee breaks silently.
    assert stream_key(1, "cube", 0) == stream_key(1, "cube", 0)
    assert stream_key(1, "cube", 0) != stream_key(1, "cube", 1)
    assert stream_key(1, "cube", 0) != stream_key(2, "cube", 0)


def test_target_fov_distance_semantics():
    spec = PerturbationSpec(max_yaw=20, max_pitch=15, max_roll=10, distance_jitter=0.25, seed=3)
    for i in range(50):
        pose = sample_pose(BASE, spec, i, "x")
        assert pose.target == BASE.target
        assert pose.vertical_fov == BASE.vertical_fov
        ratio = pose.distance / BASE.distance
        assert 0.75 - 1e-9 <= ratio <= 1.25 + 1e-9


def _signed_yaw(base: CameraPose, pose: CameraPose) -> float:
    """Angle of the offset about the base camera-up axis (independent readback)."""
    _, up, _ = base.basis()
    o1 = np.asarray(base.position) - np.asarray(base.target)
    o2 = np.asarray(pose.position) - np.asarray(pose.target)
    o1 /= np.linalg.norm(o1)
    o2 /= np.linalg.norm(o2)
    sin = float(np.dot(np.cross(o1, o2), up))
    cos = float(np.dot(o1, o2))
    return np.degrees(np.arctan2(sin, cos))


def test_yaw_draws_are_uniform_within_bounds():
    # Statistical check against the declared uniform distribution:
    # yaw-only perturbation, +-10 deg, 1000 draws, seed 1.
    spec = PerturbationSpec(max_yaw=10.0, seed=1)
    yaws = [_signed_yaw(BASE, sample_pose(BASE, spec, i, "stat")) for i in range(1000)]
    yaws = np.array(yaws)
    assert np.all(np.abs(yaws) <= 10.0 + 1e-9)
    assert abs(yaws.mean()) <= 1.0
    # Uniform(-10, 10) has std 10/sqrt(3) ~ 5.77; allow a generous window.
    assert 5.0 <= yaws.std() <= 6.5


def test_rejection_redraws_continue_the_stream():
    spec = PerturbationSpec(max_yaw=30, seed=9)
    rng = pose_stream(spec, "c", 4)
    first = sample_pose(BASE, spec, 4, "c", rng=rng)
    second = sample_pose(BASE, spec, 4, "c", rng=rng)
    assert first == sample_pose(BASE, spec, 4, "c")  # fresh stream: same first draw
    assert second != first
