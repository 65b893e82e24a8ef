"""Synthetic fixtures: procedural 3D human motion, object tracks, and meshes.

The motion generator produces smooth, skeleton-shaped 17-joint trajectories
(meters, y-up, ground plane y = 0) that are deterministic per seed. These are
the desk-scale stand-ins for mocap / video data: projecting them through
simulated cameras yields paired (2D sequence, camera, 3D ground truth)
fixtures.
"""

from __future__ import annotations

import numpy as np

from .camera import CameraTrajectory, project
from .camsim import look_at
from .chamfer import TriMesh
from .motion import KeypointSeq2D, Seq3D, SkeletonSpec, default_skeleton

# rest pose for the COCO-17 layout: (x right, y up, z forward), meters
_REST_POSE = np.array([
    [0.00, 1.62, 0.06],    # nose
    [0.03, 1.66, 0.05],    # left_eye
    [-0.03, 1.66, 0.05],   # right_eye
    [0.07, 1.64, 0.00],    # left_ear
    [-0.07, 1.64, 0.00],   # right_ear
    [0.20, 1.45, 0.00],    # left_shoulder
    [-0.20, 1.45, 0.00],   # right_shoulder
    [0.26, 1.18, 0.02],    # left_elbow
    [-0.26, 1.18, 0.02],   # right_elbow
    [0.28, 0.93, 0.05],    # left_wrist
    [-0.28, 0.93, 0.05],   # right_wrist
    [0.10, 0.95, 0.00],    # left_hip
    [-0.10, 0.95, 0.00],   # right_hip
    [0.12, 0.52, 0.02],    # left_knee
    [-0.12, 0.52, 0.02],   # right_knee
    [0.13, 0.08, 0.00],    # left_ankle
    [-0.13, 0.08, 0.00],   # right_ankle
])

_SWING_JOINTS = {  # joint index -> (amplitude m, phase, axis weights)
    7: (0.10, 0.0, (0.2, 0.1, 1.0)),   # elbows swing with gait
    8: (0.10, np.pi, (0.2, 0.1, 1.0)),
    9: (0.16, 0.0, (0.3, 0.15, 1.0)),  # wrists
    10: (0.16, np.pi, (0.3, 0.15, 1.0)),
    13: (0.08, np.pi, (0.1, 0.15, 1.0)),  # knees opposite arms
    14: (0.08, 0.0, (0.1, 0.15, 1.0)),
    15: (0.12, np.pi, (0.1, 0.2, 1.0)),   # ankles
    16: (0.12, 0.0, (0.1, 0.2, 1.0)),
}


def toy_motion(T: int, rng: np.random.Generator, speed: float = 0.04,
               stride_freq: float = 0.5) -> Seq3D:
    """Walking-style 17-joint motion with seeded variation.

    Root advances along a gently curving path; limbs swing out of phase; a
    small smooth per-joint wobble decorrelates sequences drawn with different
    seeds.
    """
    heading = rng.uniform(0, 2 * np.pi)
    curve = rng.uniform(-0.02, 0.02)
    phase0 = rng.uniform(0, 2 * np.pi)
    bob_amp = rng.uniform(0.01, 0.03)
    start = np.array([rng.uniform(-0.3, 0.3), 0.0, rng.uniform(-0.3, 0.3)])

    wobble_amp = rng.uniform(0.005, 0.02, size=(17, 3))
    wobble_freq = rng.uniform(0.1, 0.6, size=(17, 3))
    wobble_phase = rng.uniform(0, 2 * np.pi, size=(17, 3))

    coords = np.empty((T, 17, 3))
    pos = start.copy()
    for t in range(T):
        ang = heading + curve * t
        direction = np.array([np.sin(ang), 0.0, np.cos(ang)])
        if t > 0:
            pos = pos + speed * direction
        phase = phase0 + 2 * np.pi * stride_freq * t * 0.1
        frame = _REST_POSE.copy()
        frame[:, 1] += bob_amp * np.sin(2 * phase)
        for jidx, (amp, ph, w) in _SWING_JOINTS.items():
            s = amp * np.sin(phase + ph)
            frame[jidx, 0] += w[0] * s
            frame[jidx, 1] += abs(w[1] * s)
            frame[jidx, 2] += w[2] * s
        frame += wobble_amp * np.sin(wobble_freq * t + wobble_phase)
        # keep feet at or above the ground
        frame[:, 1] = np.maximum(frame[:, 1], 0.0)
        # rotate by heading and translate
        c, s = np.cos(ang), np.sin(ang)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        coords[t] = frame @ rot.T + pos
    return Seq3D(coords)


def facing_camera(motion: Seq3D, skel: SkeletonSpec | None = None,
                  distance: float = 4.0, height: float = 1.2,
                  intrinsics=None) -> CameraTrajectory:
    """Static camera placed in front of the subject's starting position."""
    if skel is None:
        skel = default_skeleton()
    subject = motion.coords[:, [skel.left_hip, skel.right_hip], :].mean(axis=(0, 1))
    center = subject + np.array([0.0, height - subject[1], -distance])
    ext = look_at(center, subject)
    kwargs = {} if intrinsics is None else {"intrinsics": intrinsics}
    return CameraTrajectory([ext] * motion.T, **kwargs)


def project_motion(motion: Seq3D, cam: CameraTrajectory) -> KeypointSeq2D:
    """Project a 3D motion through a per-frame camera trajectory."""
    if cam.T != motion.T:
        raise ValueError("camera trajectory length must match the motion")
    T, J, _ = motion.coords.shape
    px = np.empty((T, J, 2))
    vis = np.empty((T, J), dtype=bool)
    for t in range(T):
        px[t], vis[t] = project(motion.coords[t], cam.extrinsics[t], cam.intrinsics)
    return KeypointSeq2D(px, vis)


def subject_center(motion: Seq3D, skel: SkeletonSpec | None = None) -> np.ndarray:
    if skel is None:
        skel = default_skeleton()
    return motion.coords[:, [skel.left_hip, skel.right_hip], :].mean(axis=(0, 1))


def box_mesh(sx: float = 0.6, sy: float = 0.4, sz: float = 0.5) -> TriMesh:
    """Axis-aligned box centered at the origin, 12 triangles."""
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    v = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)])
    faces = np.array([
        [0, 1, 3], [0, 3, 2],   # x = -hx
        [4, 6, 7], [4, 7, 5],   # x = +hx
        [0, 4, 5], [0, 5, 1],   # y = -hy
        [2, 3, 7], [2, 7, 6],   # y = +hy
        [0, 2, 6], [0, 6, 4],   # z = -hz
        [1, 5, 7], [1, 7, 3],   # z = +hz
    ])
    return TriMesh(v, faces)


def notched_box_mesh(sx: float = 0.6, sy: float = 0.4, sz: float = 0.5,
                     notch: float = 0.5) -> TriMesh:
    """Box with a corner block removed: an L-shaped solid with no rotational
    symmetry, so silhouette-based pose recovery is well-posed."""
    base = box_mesh(sx, sy, sz)
    # second box filling the removed corner's complement: shift a smaller box
    # so the union forms an L (implemented as two disjoint boxes glued)
    small = box_mesh(sx * notch, sy * notch, sz * notch)
    offset = np.array([sx / 2 + sx * notch / 2, sy * (notch - 1) / 4,
                       sz * (notch - 1) / 4])
    verts = np.vstack([base.vertices, small.vertices + offset])
    faces = np.vstack([base.faces, small.faces + len(base.vertices)])
    return TriMesh(verts, faces)


def box_canonical_keypoints() -> np.ndarray:
    """Eight box-corner keypoints for a 0.6 x 0.4 x 0.5 box."""
    return box_mesh().vertices.copy()


def smooth_object_track(T: int, rng: np.random.Generator,
                        base: np.ndarray | None = None
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Smooth ground-truth rotations (T, 3, 3) and translations (T, 3)."""
    if base is None:
        base = np.array([0.3, 0.8, 2.5])
    ax = rng.standard_normal(3)
    ax /= np.linalg.norm(ax)
    rate = rng.uniform(0.02, 0.08)
    K = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
    rots = []
    for t in range(T):
        a = rate * t
        rots.append(np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * K @ K)
    drift = rng.uniform(-0.02, 0.02, size=3)
    wobble = rng.uniform(0.005, 0.02)
    trans = np.stack([base + drift * t
                      + wobble * np.array([np.sin(0.3 * t), np.cos(0.4 * t), 0.0])
                      for t in range(T)])
    return np.stack(rots), trans
