"""Synthetic camera trajectories: predefined motion modes, ring placement, mixing.

All generated trajectories are expressed with frame 0 as the identity except
ring views, which keep absolute extrinsics so cross-view geometry stays
consistent with the input view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import (CameraExtrinsic, CameraIntrinsics, CameraTrajectory,
                     default_intrinsics, normalize_trajectory)
from .motion import Seq3D

MODES = ("zoom_in", "zoom_out", "move_left", "move_right", "rotate_cw", "rotate_ccw")

# Randomization ranges for sampled predefined modes: translation displacements
# in meters, rotation in radians.
ZOOM_RANGE = (0.5, 2.0)
LATERAL_RANGE = (0.5, 2.0)
ROTATE_RANGE = (np.pi / 6, np.pi / 2)


@dataclass
class PredefinedMode:
    mode: str
    max_displacement: float      # m for zoom/move, rad for rotate
    return_to_origin: bool = False
    track_pelvis: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}', expected one of {MODES}")
        if self.max_displacement <= 0:
            raise ValueError("max_displacement must be positive")


def _rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def look_at(center: np.ndarray, target: np.ndarray,
            up: np.ndarray = np.array([0.0, 1.0, 0.0])) -> CameraExtrinsic:
    """Extrinsic for a camera at `center` with its optical axis through `target`.

    Zero roll w.r.t. the world up vector; falls back to the z axis as up when
    the view direction is vertical.
    """
    f = target - center
    n = np.linalg.norm(f)
    if n < 1e-12:
        raise ValueError("look_at target coincides with camera center")
    f = f / n
    x = np.cross(up, f)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([0.0, 0.0, 1.0]), f)
    x = x / np.linalg.norm(x)
    y = np.cross(f, x)
    r = np.stack([x, y, f])  # rows are camera axes in world coords
    return CameraExtrinsic(r, -r @ center)


def _displacement_profile(T: int, return_to_origin: bool) -> np.ndarray:
    """Linear ramp 0 -> 1, or triangular 0 -> 1 -> 0, over T frames."""
    s = np.linspace(0.0, 1.0, T)
    if return_to_origin:
        s = 1.0 - np.abs(2.0 * s - 1.0)
    return s


def generate_predefined(mode: PredefinedMode, T: int,
                        subject_pelvis: Seq3D | None = None,
                        intrinsics: CameraIntrinsics | None = None) -> CameraTrajectory:
    """Build one of the six predefined camera movements, frame 0 = identity.

    With `track_pelvis` the rotation of each frame re-aims the optical axis at
    the per-frame pelvis position (zero roll); the whole trajectory is then
    re-normalized so frame 0 stays the identity.
    """
    if T < 2:
        raise ValueError("need T >= 2 frames")
    if mode.track_pelvis and subject_pelvis is None:
        raise ValueError("track_pelvis requires a pelvis track")
    if intrinsics is None:
        intrinsics = default_intrinsics()
    s = _displacement_profile(T, mode.return_to_origin) * mode.max_displacement

    extr: list[CameraExtrinsic] = []
    for t in range(T):
        if mode.mode == "zoom_in":
            ext = CameraExtrinsic(np.eye(3), np.array([0.0, 0.0, -s[t]]))
        elif mode.mode == "zoom_out":
            ext = CameraExtrinsic(np.eye(3), np.array([0.0, 0.0, s[t]]))
        elif mode.mode == "move_right":
            ext = CameraExtrinsic(np.eye(3), np.array([s[t], 0.0, 0.0]))
        elif mode.mode == "move_left":
            ext = CameraExtrinsic(np.eye(3), np.array([-s[t], 0.0, 0.0]))
        elif mode.mode == "rotate_cw":
            ext = CameraExtrinsic(_rot_y(-s[t]), np.zeros(3))
        else:  # rotate_ccw
            ext = CameraExtrinsic(_rot_y(s[t]), np.zeros(3))

        if mode.track_pelvis:
            pelvis = subject_pelvis.coords[min(t, subject_pelvis.T - 1), 0]
            center = ext.camera_center()
            ext = look_at(center, pelvis)
        extr.append(ext)

    return normalize_trajectory(CameraTrajectory(extr, intrinsics))


def random_predefined_mode(rng: np.random.Generator) -> PredefinedMode:
    """Sample a mode with randomized displacement and return/track flags."""
    mode = MODES[int(rng.integers(len(MODES)))]
    if mode.startswith("zoom"):
        disp = float(rng.uniform(*ZOOM_RANGE))
    elif mode.startswith("move"):
        disp = float(rng.uniform(*LATERAL_RANGE))
    else:
        disp = float(rng.uniform(*ROTATE_RANGE))
    return PredefinedMode(
        mode=mode,
        max_displacement=disp,
        return_to_origin=bool(rng.random() < 0.5),
        track_pelvis=bool(rng.random() < 0.5),
    )


def ring_views(input_cam: CameraTrajectory, V: int, subject_center: np.ndarray,
               radius: float | None = None) -> list[CameraTrajectory]:
    """Place V-1 extra views on a ring around the subject, sharing the input's
    per-frame relative motion.

    View k sits at azimuth 2*pi*k/V (k = 1..V-1) around the vertical axis
    through `subject_center`, aimed at the subject at frame 0. The returned
    trajectories keep absolute extrinsics (frame 0 is not the identity).
    """
    if V < 2:
        raise ValueError("need V >= 2 views")
    subject_center = np.asarray(subject_center, dtype=np.float64).reshape(3)
    base = input_cam.extrinsics[0]
    d = base.camera_center() - subject_center
    dist = np.linalg.norm(d)
    if dist < 1e-9:
        raise ValueError("input camera sits on the subject center")
    if radius is None:
        radius = float(dist)
    if radius <= 0:
        raise ValueError("radius must be positive")

    rel = normalize_trajectory(input_cam)  # per-frame motion of the input camera
    views: list[CameraTrajectory] = []
    for k in range(1, V):
        direction = _rot_y(2.0 * np.pi * k / V) @ (d / dist)
        center_k = subject_center + radius * direction
        base_k = look_at(center_k, subject_center)
        extr = [rel.extrinsics[t].compose_after(base_k) for t in range(input_cam.T)]
        views.append(CameraTrajectory(extr, input_cam.intrinsics))
    return views


@dataclass
class CameraBank:
    """Named camera trajectories split into disjoint train/test sets."""

    entries: dict[str, CameraTrajectory]
    train: list[str]
    test: list[str]

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValueError(f"trajectories in both splits: {sorted(overlap)}")
        missing = (set(self.train) | set(self.test)) - set(self.entries)
        if missing:
            raise ValueError(f"split names missing from bank: {sorted(missing)}")


def resample_trajectory(traj: CameraTrajectory, T: int) -> CameraTrajectory:
    """Index-resample a trajectory to T frames (no rotation interpolation)."""
    idx = np.round(np.linspace(0, traj.T - 1, T)).astype(int)
    return CameraTrajectory([traj.extrinsics[i] for i in idx], traj.intrinsics)


def sample_training_camera(bank: CameraBank, predefined_fraction: float, T: int,
                           rng: np.random.Generator,
                           subject_pelvis: Seq3D | None = None) -> CameraTrajectory:
    """Draw a training camera: predefined mode with probability
    `predefined_fraction`, otherwise uniformly from the bank's train split.

    Bank draws are resampled to length T; every result is normalized.
    """
    if not bank.train:
        raise ValueError("camera bank has no train trajectories")
    if rng.random() < predefined_fraction:
        mode = random_predefined_mode(rng)
        if mode.track_pelvis and subject_pelvis is None:
            mode.track_pelvis = False
        return generate_predefined(mode, T, subject_pelvis)
    name = bank.train[int(rng.integers(len(bank.train)))]
    return normalize_trajectory(resample_trajectory(bank.entries[name], T))


def epipole_bank(intr: CameraIntrinsics) -> list[np.ndarray]:
    """Eight simulated epipoles used for training-time line conditioning:
    the four image corners, the left/right/top edge midpoints, and one
    horizontal direction at infinity."""
    w, h = float(intr.width), float(intr.height)
    pts = [
        (0.0, 0.0), (w, 0.0), (0.0, h), (w, h),      # corners
        (0.0, h / 2.0), (w, h / 2.0), (w / 2.0, 0.0),  # edge midpoints
    ]
    bank = [np.array([x, y, 1.0]) for x, y in pts]
    bank.append(np.array([1.0, 0.0, 0.0]))  # horizontal infinity
    return bank
