"""Pinhole cameras, trajectory normalization, epipolar geometry, and line residuals.

Extrinsics follow x_cam = R @ x_world + t. Epipolar lines are stored
homogeneous (a, b, c) with a*x + b*y + c = 0 and (a, b) unit-normalized, so
|a*x + b*y + c| is the Euclidean point-line distance. An all-zero line marks
an invalid entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .motion import KeypointSeq2D

Z_NEAR = 1e-6  # m; projections at or behind this depth are flagged invalid


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]], dtype=np.float64)

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)


def default_intrinsics(width: int = 1000, height: int = 1000) -> CameraIntrinsics:
    """fx = fy = 1000 with the principal point at the image center."""
    return CameraIntrinsics(fx=1000.0, fy=1000.0, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


@dataclass
class CameraExtrinsic:
    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,) m

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err >= 1e-6:
            raise ValueError(f"rotation not orthonormal (|R^T R - I|_inf = {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must have det +1")

    @staticmethod
    def identity() -> "CameraExtrinsic":
        return CameraExtrinsic(np.eye(3), np.zeros(3))

    def camera_center(self) -> np.ndarray:
        """Camera center in world coordinates: -R^T t."""
        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) -> camera-frame points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose_after(self, other: "CameraExtrinsic") -> "CameraExtrinsic":
        """Extrinsic equivalent to applying `other` first, then self."""
        return CameraExtrinsic(self.rotation @ other.rotation,
                               self.rotation @ other.translation + self.translation)

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation.reshape(3, 1)])


@dataclass
class CameraTrajectory:
    extrinsics: list[CameraExtrinsic]
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)

    def __post_init__(self):
        if len(self.extrinsics) < 1:
            raise ValueError("trajectory needs at least one frame")

    @property
    def T(self) -> int:
        return len(self.extrinsics)

    def rotations(self) -> np.ndarray:
        return np.stack([e.rotation for e in self.extrinsics])  # (T, 3, 3)

    def translations(self) -> np.ndarray:
        return np.stack([e.translation for e in self.extrinsics])  # (T, 3)


@dataclass
class EpipolarLineSet:
    """T x K homogeneous lines; (0, 0, 0) rows are invalid entries."""

    lines: np.ndarray  # (T, K, 3)

    def __post_init__(self):
        self.lines = np.asarray(self.lines, dtype=np.float64)
        if self.lines.ndim != 3 or self.lines.shape[-1] != 3:
            raise ValueError(f"expected (T, K, 3) lines, got {self.lines.shape}")
        ab = np.linalg.norm(self.lines[..., :2], axis=-1)
        bad = (ab > 0) & (np.abs(ab - 1.0) > 1e-9)
        if np.any(bad):
            raise ValueError("finite lines must be normalized to a^2 + b^2 = 1")

    @property
    def T(self) -> int:
        return self.lines.shape[0]

    @property
    def K(self) -> int:
        return self.lines.shape[1]

    def valid(self) -> np.ndarray:
        """(T, K) bool mask of usable lines."""
        return np.linalg.norm(self.lines[..., :2], axis=-1) > 0.5


@dataclass
class FundamentalMatrix:
    matrix: np.ndarray  # (3, 3), rank 2

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        if sv[0] <= 0 or sv[2] / sv[0] >= 1e-6:
            raise ValueError("fundamental matrix must have rank 2")


def project(points: np.ndarray, ext: CameraExtrinsic, intr: CameraIntrinsics,
            z_near: float = Z_NEAR) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole-project world points (..., 3) to pixels.

    Returns (pixels (..., 2), valid (...)). Points with camera depth <= z_near
    are flagged invalid; their pixel values are computed with a clamped depth
    so the output stays finite.
    """
    cam = ext.apply(points)  # (..., 3)
    z = cam[..., 2]
    valid = z > z_near
    z_safe = np.where(valid, z, z_near)
    px = np.empty(cam.shape[:-1] + (2,), dtype=np.float64)
    px[..., 0] = intr.cx + intr.fx * cam[..., 0] / z_safe
    px[..., 1] = intr.cy + intr.fy * cam[..., 1] / z_safe
    return px, valid


def project_jacobian(point: np.ndarray, ext: CameraExtrinsic,
                     intr: CameraIntrinsics) -> np.ndarray:
    """d(pixel)/d(world point) for a single point, shape (2, 3)."""
    cam = ext.apply(point)
    x, y, z = cam
    d_px_d_cam = np.array([[intr.fx / z, 0.0, -intr.fx * x / z**2],
                           [0.0, intr.fy / z, -intr.fy * y / z**2]])
    return d_px_d_cam @ ext.rotation


def relative_transform(a: CameraExtrinsic, b: CameraExtrinsic) -> CameraExtrinsic:
    """Transform mapping a's camera frame to b's: R_b R_a^T, t_b - R_rel t_a."""
    r_rel = b.rotation @ a.rotation.T
    t_rel = b.translation - r_rel @ a.translation
    return CameraExtrinsic(r_rel, t_rel)


def normalize_trajectory(traj: CameraTrajectory) -> CameraTrajectory:
    """Re-express every frame relative to frame 0, making frame 0 the identity."""
    first = traj.extrinsics[0]
    rel = [relative_transform(first, e) for e in traj.extrinsics]
    return CameraTrajectory(rel, traj.intrinsics)


def epipole(rel: CameraExtrinsic, intr_v: CameraIntrinsics) -> np.ndarray:
    """Homogeneous projection into view v of view u's camera center.

    `rel` maps u's camera frame to v's. A zero third component encodes an
    epipole at infinity (pure-rotation pair gives the all-zero vector).
    """
    e = intr_v.matrix() @ rel.translation
    n = np.linalg.norm(e)
    return e / n if n > 0 else e


def _normalize_lines(lines: np.ndarray) -> np.ndarray:
    """Scale (.., 3) lines so a^2 + b^2 = 1; degenerate lines become zeros."""
    ab = np.linalg.norm(lines[..., :2], axis=-1, keepdims=True)
    # Degenerate when the (a, b) part vanishes relative to c (line at infinity
    # or no line at all).
    scale_ref = np.maximum(np.abs(lines[..., 2:3]), 1.0)
    ok = ab > 1e-12 * scale_ref
    safe = np.where(ab > 0, ab, 1.0)
    out = np.where(ok, lines / safe, 0.0)
    return out


def training_epipolar_lines(seq: KeypointSeq2D, epi: np.ndarray) -> EpipolarLineSet:
    """Per keypoint, the normalized line through the keypoint and the epipole.

    Keypoints coincident with the epipole and invisible keypoints yield
    invalid (zero) lines.
    """
    epi = np.asarray(epi, dtype=np.float64).reshape(3)
    pts_h = np.concatenate([seq.coords, np.ones(seq.coords.shape[:2] + (1,))], axis=-1)
    lines = np.cross(pts_h, epi[None, None, :])
    lines = _normalize_lines(lines)
    lines[~seq.visibility] = 0.0
    return EpipolarLineSet(lines)


def fundamental_matrix(rel: CameraExtrinsic, intr_u: CameraIntrinsics,
                       intr_v: CameraIntrinsics) -> FundamentalMatrix:
    """F = K_v^-T [t]_x R K_u^-1 for `rel` mapping view u's frame to view v's."""
    t = rel.translation
    if np.linalg.norm(t) <= 1e-9:
        raise NumericalError("zero-baseline pair has no fundamental matrix")
    tx = np.array([[0.0, -t[2], t[1]],
                   [t[2], 0.0, -t[0]],
                   [-t[1], t[0], 0.0]])
    f = np.linalg.inv(intr_v.matrix()).T @ tx @ rel.rotation @ np.linalg.inv(intr_u.matrix())
    f = f / np.linalg.norm(f)
    # Fix the overall sign for determinism (F and -F define the same lines).
    flat = f.ravel()
    lead = flat[np.argmax(np.abs(flat))]
    if lead < 0:
        f = -f
    return FundamentalMatrix(f)


def cross_view_epipolar_lines(seq_u: KeypointSeq2D, F: FundamentalMatrix) -> EpipolarLineSet:
    """Lines in view v induced by view-u keypoints: l = F (x_u, 1)."""
    pts_h = np.concatenate([seq_u.coords, np.ones(seq_u.coords.shape[:2] + (1,))], axis=-1)
    lines = pts_h @ F.matrix.T
    lines = _normalize_lines(lines)
    lines[~seq_u.visibility] = 0.0
    return EpipolarLineSet(lines)


def cross_view_lines_trajectory(seq_u: KeypointSeq2D, cam_u: CameraTrajectory,
                                cam_v: CameraTrajectory) -> EpipolarLineSet:
    """Per-frame cross-view lines for moving cameras (one F per frame)."""
    if not (seq_u.T == cam_u.T == cam_v.T):
        raise ValueError("sequence and camera trajectories must share T")
    lines = np.zeros((seq_u.T, seq_u.K, 3), dtype=np.float64)
    for t in range(seq_u.T):
        rel = relative_transform(cam_u.extrinsics[t], cam_v.extrinsics[t])
        F = fundamental_matrix(rel, cam_u.intrinsics, cam_v.intrinsics)
        frame = KeypointSeq2D(seq_u.coords[t:t + 1], seq_u.visibility[t:t + 1])
        lines[t] = cross_view_epipolar_lines(frame, F).lines[0]
    return EpipolarLineSet(lines)


def point_line_residual(lines: EpipolarLineSet, seq: KeypointSeq2D
                        ) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed point-line distance over valid, visible entries.

    Returns (total, residuals (T, K), grad (T, K, 2)). Residuals are the
    signed values a*x + b*y + c; the total sums their absolute values. The
    gradient w.r.t. the keypoints is sign(r) * (a, b).
    """
    if lines.lines.shape[:2] != seq.coords.shape[:2]:
        raise ValueError(f"shape mismatch: lines {lines.lines.shape[:2]} vs "
                         f"seq {seq.coords.shape[:2]}")
    a = lines.lines[..., 0]
    b = lines.lines[..., 1]
    c = lines.lines[..., 2]
    r = a * seq.coords[..., 0] + b * seq.coords[..., 1] + c
    active = lines.valid() & seq.visibility
    r = np.where(active, r, 0.0)
    total = float(np.abs(r).sum())
    grad = np.zeros_like(seq.coords)
    s = np.sign(r)
    grad[..., 0] = s * a
    grad[..., 1] = s * b
    grad[~active] = 0.0
    return total, r, grad


def point_line_distance(line: np.ndarray, point_h: np.ndarray) -> float:
    """Distance from a homogeneous 2D point to a unit-normalized line.

    Finite points use |l . p| / p_w; points at infinity use the direction
    residual |a*dx + b*dy|.
    """
    line = np.asarray(line, dtype=np.float64).reshape(3)
    p = np.asarray(point_h, dtype=np.float64).reshape(3)
    if abs(p[2]) > 1e-12 * max(1.0, np.linalg.norm(p[:2])):
        return float(abs(line @ p) / abs(p[2]))
    n = np.linalg.norm(p[:2])
    if n == 0:
        raise NumericalError("degenerate homogeneous point")
    return float(abs(line[0] * p[0] + line[1] * p[1]) / n)


def to_canvas(coords_px: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pixels -> [-1, 1]-ish canvas units: (p - center) / (size / 2)."""
    coords_px = np.asarray(coords_px, dtype=np.float64)
    out = np.empty_like(coords_px)
    out[..., 0] = (coords_px[..., 0] - intr.cx) / (intr.width / 2.0)
    out[..., 1] = (coords_px[..., 1] - intr.cy) / (intr.height / 2.0)
    return out


def from_canvas(coords_cv: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    coords_cv = np.asarray(coords_cv, dtype=np.float64)
    out = np.empty_like(coords_cv)
    out[..., 0] = coords_cv[..., 0] * (intr.width / 2.0) + intr.cx
    out[..., 1] = coords_cv[..., 1] * (intr.height / 2.0) + intr.cy
    return out


def lines_to_canvas(lines: EpipolarLineSet, intr: CameraIntrinsics) -> np.ndarray:
    """Re-express pixel-space lines in canvas coordinates (for conditioning).

    A line a*x + b*y + c = 0 with x = cx + u*w/2 etc. becomes
    (a*w/2) u + (b*h/2) v + (a*cx + b*cy + c) = 0, renormalized.
    Invalid lines stay zero.
    """
    raw = lines.lines
    out = np.zeros_like(raw)
    out[..., 0] = raw[..., 0] * (intr.width / 2.0)
    out[..., 1] = raw[..., 1] * (intr.height / 2.0)
    out[..., 2] = raw[..., 0] * intr.cx + raw[..., 1] * intr.cy + raw[..., 2]
    out = _normalize_lines(out)
    out[~lines.valid()] = 0.0
    return out
