import numpy as np
import pytest

from motionlift.camera import (CameraExtrinsic, CameraTrajectory, EpipolarLineSet,
                               default_intrinsics, training_epipolar_lines)
from motionlift.denoiser import Conditioning
from motionlift.motion import KeypointSeq2D, SkeletonSpec


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation from a normalized random quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_extrinsic(rng: np.random.Generator, t_scale: float = 1.0) -> CameraExtrinsic:
    return CameraExtrinsic(random_rotation(rng), rng.standard_normal(3) * t_scale)


def random_trajectory(rng: np.random.Generator, T: int,
                      t_scale: float = 1.0) -> CameraTrajectory:
    return CameraTrajectory([random_extrinsic(rng, t_scale) for _ in range(T)],
                            default_intrinsics())


def small_trajectory(rng: np.random.Generator, T: int) -> CameraTrajectory:
    """Mild camera motion: small rotations and sub-meter translations."""
    extr = []
    for _ in range(T):
        axis_angle = 0.1 * rng.standard_normal(3)
        angle = np.linalg.norm(axis_angle)
        if angle < 1e-12:
            R = np.eye(3)
        else:
            k = axis_angle / angle
            K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
            R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
        extr.append(CameraExtrinsic(R, 0.3 * rng.standard_normal(3)))
    return CameraTrajectory(extr, default_intrinsics())


def random_seq(rng: np.random.Generator, T: int, K: int,
               lo: float = 100.0, hi: float = 900.0) -> KeypointSeq2D:
    return KeypointSeq2D(rng.uniform(lo, hi, size=(T, K, 2)))


def make_conditioning(rng: np.random.Generator, T: int, K: int,
                      step: int = 1) -> Conditioning:
    cam = small_trajectory(rng, T)
    seq = random_seq(rng, T, K)
    epi = np.array([rng.uniform(0, 1000), rng.uniform(0, 1000), 1.0])
    lines = training_epipolar_lines(seq, epi)
    return Conditioning(camera=cam, lines=lines, step=step)


def tiny_skeleton(K: int = 4) -> SkeletonSpec:
    names = [f"j{i}" for i in range(K)]
    return SkeletonSpec(joint_names=names, left_hip=0, right_hip=1, pelvis=0,
                        foot_joints=[K - 1])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
