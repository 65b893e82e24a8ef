"""2D motion sequences, root/local decomposition, masking, and human-object concatenation.

Conventions: keypoint coordinates are pixels, stored float64 with shape (T, K, 2).
Visibility is a separate (T, K) bool array; dropped keypoints keep their last
coordinates but are excluded from losses downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

# Canvas shared by decomposition and the diffusion coordinate scaling when no
# explicit intrinsics are around (matches the default 1000x1000 pinhole setup).
DEFAULT_CANVAS_CENTER = (500.0, 500.0)


def _as_coords(coords, last_dim: int) -> np.ndarray:
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != last_dim:
        raise ValueError(f"expected (T, K, {last_dim}) array, got shape {arr.shape}")
    return arr


@dataclass
class KeypointSeq2D:
    """T x K 2D joint trajectory with per-entry visibility."""

    coords: np.ndarray               # (T, K, 2) px
    visibility: np.ndarray | None = None  # (T, K) bool, defaults to all-true

    def __post_init__(self):
        self.coords = _as_coords(self.coords, 2)
        T, K, _ = self.coords.shape
        if T < 1 or K < 2:
            raise ValueError(f"need T >= 1 and K >= 2, got T={T}, K={K}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("keypoint coordinates must be finite")
        if self.visibility is None:
            self.visibility = np.ones((T, K), dtype=bool)
        else:
            self.visibility = np.asarray(self.visibility, dtype=bool)
            if self.visibility.shape != (T, K):
                raise ValueError(
                    f"visibility shape {self.visibility.shape} does not match coords {(T, K)}"
                )

    @property
    def T(self) -> int:
        return self.coords.shape[0]

    @property
    def K(self) -> int:
        return self.coords.shape[1]

    def copy(self) -> "KeypointSeq2D":
        return KeypointSeq2D(self.coords.copy(), self.visibility.copy())


@dataclass
class Seq3D:
    """T x J joint trajectory in world meters."""

    coords: np.ndarray  # (T, J, 3) m

    def __post_init__(self):
        self.coords = _as_coords(self.coords, 3)
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("3D coordinates must be finite")

    @property
    def T(self) -> int:
        return self.coords.shape[0]

    @property
    def J(self) -> int:
        return self.coords.shape[1]


@dataclass
class SkeletonSpec:
    """Joint-name layout plus the indices the pipeline needs to know about.

    The default layout is COCO-17 as produced by common 2D pose estimators.
    COCO carries no dedicated pelvis joint, so `pelvis` points at a hip and the
    hip midpoint is used wherever a true root position matters.
    """

    joint_names: list[str]
    left_hip: int
    right_hip: int
    pelvis: int
    foot_joints: list[int] = field(default_factory=list)

    def __post_init__(self):
        K = len(self.joint_names)
        for name, idx in [("left_hip", self.left_hip), ("right_hip", self.right_hip),
                          ("pelvis", self.pelvis)]:
            if not 0 <= idx < K:
                raise ValueError(f"{name} index {idx} out of range for K={K}")
        if self.left_hip == self.right_hip:
            raise ValueError("left_hip and right_hip must differ")
        for idx in self.foot_joints:
            if not 0 <= idx < K:
                raise ValueError(f"foot joint index {idx} out of range for K={K}")

    @property
    def K(self) -> int:
        return len(self.joint_names)

    def non_hip_indices(self) -> np.ndarray:
        return np.array([k for k in range(self.K) if k not in (self.left_hip, self.right_hip)],
                        dtype=int)


COCO17_NAMES = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]


def default_skeleton() -> SkeletonSpec:
    """17-joint COCO-style skeleton; ankles stand in for the feet."""
    return SkeletonSpec(
        joint_names=list(COCO17_NAMES),
        left_hip=11,
        right_hip=12,
        pelvis=11,
        foot_joints=[15, 16],
    )


@dataclass
class MotionDecomposition:
    """Root (two hip tracks) and center-aligned local pose of a 2D motion."""

    root: np.ndarray    # (T, 2, 2) px, hips in [left, right] order
    local: np.ndarray   # (T, K-2, 2) px, non-hip joints re-centered at `center`
    center: tuple[float, float] = DEFAULT_CANVAS_CENTER
    visibility_root: np.ndarray | None = None   # (T, 2) bool
    visibility_local: np.ndarray | None = None  # (T, K-2) bool

    def __post_init__(self):
        self.root = _as_coords(self.root, 2)
        self.local = _as_coords(self.local, 2)
        if self.root.shape[1] != 2:
            raise ValueError("root must hold exactly the two hip tracks")
        if self.root.shape[0] != self.local.shape[0]:
            raise ValueError("root and local frame counts differ")
        T = self.root.shape[0]
        if self.visibility_root is None:
            self.visibility_root = np.ones((T, 2), dtype=bool)
        if self.visibility_local is None:
            self.visibility_local = np.ones((T, self.local.shape[1]), dtype=bool)

    @property
    def T(self) -> int:
        return self.root.shape[0]

    @property
    def K(self) -> int:
        return self.local.shape[1] + 2


@dataclass
class ObjectKeypointSeq:
    """T x M object keypoint tracks with a frame-independent visibility mask."""

    coords: np.ndarray                    # (T, M, 2) px
    static_visibility: np.ndarray         # (M,) bool, per-keypoint
    frame_visibility: np.ndarray | None = None  # (T, M) bool, subset of static

    def __post_init__(self):
        self.coords = _as_coords(self.coords, 2)
        T, M, _ = self.coords.shape
        self.static_visibility = np.asarray(self.static_visibility, dtype=bool)
        if self.static_visibility.shape != (M,):
            raise ValueError(f"static_visibility must be ({M},)")
        if self.frame_visibility is None:
            self.frame_visibility = np.broadcast_to(self.static_visibility, (T, M)).copy()
        else:
            self.frame_visibility = np.asarray(self.frame_visibility, dtype=bool)
            if self.frame_visibility.shape != (T, M):
                raise ValueError(f"frame_visibility must be ({T}, {M})")
        if np.any(self.frame_visibility & ~self.static_visibility[None, :]):
            raise ValueError("frame_visibility must be a subset of static_visibility")

    @property
    def T(self) -> int:
        return self.coords.shape[0]

    @property
    def M(self) -> int:
        return self.coords.shape[1]


def hip_mean(seq_coords: np.ndarray, skel: SkeletonSpec) -> np.ndarray:
    """Per-frame mean of the two hip joints, shape (T, 2)."""
    return 0.5 * (seq_coords[:, skel.left_hip, :] + seq_coords[:, skel.right_hip, :])


def decompose(seq: KeypointSeq2D, skel: SkeletonSpec,
              center: tuple[float, float] = DEFAULT_CANVAS_CENTER) -> MotionDecomposition:
    """Split a global 2D motion into hip-root tracks and a center-aligned local pose.

    The local part is translated so the per-frame hip mean sits at `center`,
    which makes the local pose invariant to global translation.
    """
    if skel.K != seq.K:
        raise ValueError(f"skeleton has K={skel.K} joints but sequence has K={seq.K}")
    root = seq.coords[:, [skel.left_hip, skel.right_hip], :].copy()
    offset = hip_mean(seq.coords, skel)  # (T, 2)
    others = skel.non_hip_indices()
    local = seq.coords[:, others, :] - offset[:, None, :] + np.asarray(center, dtype=np.float64)
    return MotionDecomposition(
        root=root,
        local=local,
        center=(float(center[0]), float(center[1])),
        visibility_root=seq.visibility[:, [skel.left_hip, skel.right_hip]].copy(),
        visibility_local=seq.visibility[:, others].copy(),
    )


def recompose(dec: MotionDecomposition, skel: SkeletonSpec) -> KeypointSeq2D:
    """Invert `decompose`: restore hips and shift local joints by the hip-mean offset."""
    if dec.K != skel.K:
        raise ValueError(f"decomposition implies K={dec.K} but skeleton has K={skel.K}")
    T, K = dec.T, skel.K
    coords = np.empty((T, K, 2), dtype=np.float64)
    vis = np.empty((T, K), dtype=bool)
    offset = 0.5 * (dec.root[:, 0, :] + dec.root[:, 1, :])  # (T, 2)
    center = np.asarray(dec.center, dtype=np.float64)
    coords[:, skel.left_hip, :] = dec.root[:, 0, :]
    coords[:, skel.right_hip, :] = dec.root[:, 1, :]
    others = skel.non_hip_indices()
    coords[:, others, :] = dec.local + offset[:, None, :] - center
    vis[:, skel.left_hip] = dec.visibility_root[:, 0]
    vis[:, skel.right_hip] = dec.visibility_root[:, 1]
    vis[:, others] = dec.visibility_local
    return KeypointSeq2D(coords, vis)


def pack_decomposition(dec: MotionDecomposition, skel: SkeletonSpec) -> np.ndarray:
    """Lay out a decomposition as one (T, K, 2) array in skeleton joint order.

    Hip slots carry the root tracks (global px), the other slots carry the
    center-aligned local pose. This is the representation the diffusion model
    operates on (after canvas scaling).
    """
    T, K = dec.T, skel.K
    out = np.empty((T, K, 2), dtype=np.float64)
    out[:, skel.left_hip, :] = dec.root[:, 0, :]
    out[:, skel.right_hip, :] = dec.root[:, 1, :]
    out[:, skel.non_hip_indices(), :] = dec.local
    return out


def unpack_decomposition(packed: np.ndarray, skel: SkeletonSpec,
                         center: tuple[float, float] = DEFAULT_CANVAS_CENTER,
                         visibility: np.ndarray | None = None) -> MotionDecomposition:
    """Inverse of `pack_decomposition`."""
    packed = _as_coords(packed, 2)
    if packed.shape[1] != skel.K:
        raise ValueError("packed array joint count does not match skeleton")
    others = skel.non_hip_indices()
    T = packed.shape[0]
    if visibility is None:
        visibility = np.ones((T, skel.K), dtype=bool)
    return MotionDecomposition(
        root=packed[:, [skel.left_hip, skel.right_hip], :].copy(),
        local=packed[:, others, :].copy(),
        center=(float(center[0]), float(center[1])),
        visibility_root=visibility[:, [skel.left_hip, skel.right_hip]].copy(),
        visibility_local=visibility[:, others].copy(),
    )


def packed_to_global(packed: np.ndarray, skel: SkeletonSpec,
                     center: tuple[float, float] = DEFAULT_CANVAS_CENTER) -> np.ndarray:
    """Recover the global motion array from a packed decomposition array.

    Linear map: hips pass through, non-hip joints get the hip-mean-minus-center
    offset added back.
    """
    packed = _as_coords(packed, 2)
    out = packed.copy()
    offset = 0.5 * (packed[:, skel.left_hip, :] + packed[:, skel.right_hip, :])
    others = skel.non_hip_indices()
    out[:, others, :] += offset[:, None, :] - np.asarray(center, dtype=np.float64)
    return out


def packed_to_global_backward(grad_global: np.ndarray, skel: SkeletonSpec) -> np.ndarray:
    """Pull a gradient w.r.t. the global motion back to the packed decomposition.

    Adjoint of `packed_to_global` (the map is linear; the constant center term
    drops out).
    """
    grad_global = _as_coords(grad_global, 2)
    grad = grad_global.copy()
    others = skel.non_hip_indices()
    spread = 0.5 * grad_global[:, others, :].sum(axis=1)  # (T, 2)
    grad[:, skel.left_hip, :] += spread
    grad[:, skel.right_hip, :] += spread
    return grad


def hip_exclusion_mask(skel: SkeletonSpec, K: int) -> np.ndarray:
    """Per-joint bool mask that is False exactly at the two hip joints."""
    if skel.K != K:
        raise ValueError(f"skeleton K={skel.K} does not match requested K={K}")
    mask = np.ones(K, dtype=bool)
    mask[skel.left_hip] = False
    mask[skel.right_hip] = False
    return mask


def random_drop_mask(visibility: np.ndarray, drop_rate: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Drop each visible entry independently with probability `drop_rate`."""
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError(f"drop_rate must be in [0, 1], got {drop_rate}")
    visibility = np.asarray(visibility, dtype=bool)
    keep = rng.random(visibility.shape) >= drop_rate
    return visibility & keep


def concat_human_object(human: KeypointSeq2D, obj: ObjectKeypointSeq) -> KeypointSeq2D:
    """Append object keypoints after the human joints, visibility included."""
    if obj.T != human.T:
        raise ValueError(f"frame-count mismatch: human T={human.T}, object T={obj.T}")
    if obj.M == 0:
        return human.copy()
    coords = np.concatenate([human.coords, obj.coords], axis=1)
    obj_vis = obj.frame_visibility & obj.static_visibility[None, :]
    vis = np.concatenate([human.visibility, obj_vis], axis=1)
    return KeypointSeq2D(coords, vis)


def split_human_object(seq: KeypointSeq2D, human_joints: int,
                       static_visibility: np.ndarray | None = None
                       ) -> tuple[KeypointSeq2D, ObjectKeypointSeq]:
    """Undo `concat_human_object` given the human joint count.

    If the object's static visibility was not carried alongside, it is
    reconstructed as "visible in at least one frame".
    """
    if not 2 <= human_joints <= seq.K:
        raise ValueError(f"human_joints={human_joints} out of range for K={seq.K}")
    human = KeypointSeq2D(seq.coords[:, :human_joints].copy(),
                          seq.visibility[:, :human_joints].copy())
    obj_coords = seq.coords[:, human_joints:].copy()
    obj_frame_vis = seq.visibility[:, human_joints:].copy()
    if static_visibility is None:
        static_visibility = obj_frame_vis.any(axis=0)
    obj = ObjectKeypointSeq(obj_coords, static_visibility, obj_frame_vis & static_visibility)
    return human, obj


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} contains non-finite values")
    return arr
