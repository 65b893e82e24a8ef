"""Rigid object pose recovery from 3D keypoints.

Per-frame initialization: scale from a reference keypoint pair, then
closed-form orthogonal Procrustes (Kabsch, reflection-corrected). Joint
refinement: Adam on the visibility-masked fitting loss (mean Euclidean
keypoint error with one global scale) plus a temporal smoothness penalty on
consecutive 6D rotation vectors. Gradients through the Gram-Schmidt rotation
map are written out by hand and finite-difference checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UnderConstrainedError
from .motion import Seq3D
from .training import AdamState, adam_step

EPS_NORM = 1e-12


@dataclass
class CanonicalKeypoints:
    """Keypoint positions on the canonical object mesh plus the pair used for
    scale estimation."""

    points: np.ndarray          # (M, 3) m
    reference_pair: tuple[int, int] = (0, 1)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("canonical keypoints must be (M, 3)")
        i, j = self.reference_pair
        M = len(self.points)
        if i == j or not (0 <= i < M and 0 <= j < M):
            raise ValueError("reference pair must be two distinct valid indices")
        if np.linalg.norm(self.points[i] - self.points[j]) < EPS_NORM:
            raise ValueError("reference pair has zero separation")

    @property
    def M(self) -> int:
        return len(self.points)


@dataclass
class ObjectPose:
    """Per-frame 6D rotation + translation with one global scale."""

    rot6d: np.ndarray        # (T, 6)
    translation: np.ndarray  # (T, 3) m
    scale: float

    def __post_init__(self):
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rot6d.ndim != 2 or self.rot6d.shape[1] != 6:
            raise ValueError("rot6d must be (T, 6)")
        if self.translation.shape != (self.rot6d.shape[0], 3):
            raise ValueError("translation must be (T, 3)")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def T(self) -> int:
        return self.rot6d.shape[0]

    def rotations(self) -> np.ndarray:
        return np.stack([rot6d_to_matrix(r) for r in self.rot6d])


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt two 3-vectors into an SO(3) matrix (columns b1 b2 b3)."""
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-8:
        raise NumericalError("first 6d vector is (near) zero")
    b1 = a1 / n1
    u = a2 - (b1 @ a2) * b1
    nu = np.linalg.norm(u)
    if nu < 1e-8:
        raise NumericalError("6d vectors are (near) parallel")
    b2 = u / nu
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    """First two columns of the rotation matrix."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_vjp(r: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Pull a gradient on the rotation matrix back to the 6d parameters."""
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    b1 = a1 / n1
    u = a2 - (b1 @ a2) * b1
    nu = np.linalg.norm(u)
    b2 = u / nu
    g1, g2, g3 = dR[:, 0], dR[:, 1], dR[:, 2]
    # b3 = b1 x b2
    db1 = g1 + np.cross(b2, g3)
    db2 = g2 + np.cross(g3, b1)
    # b2 = u / |u|
    du = (db2 - (b2 @ db2) * b2) / nu
    # u = a2 - (b1 . a2) b1
    da2 = du - (b1 @ du) * b1
    db1 += -(du @ b1) * a2 - (b1 @ a2) * du
    # b1 = a1 / |a1|
    da1 = (db1 - (b1 @ db1) * b1) / n1
    return np.concatenate([da1, da2])


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    cos = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def kabsch(source: np.ndarray, target: np.ndarray
           ) -> tuple[np.ndarray, np.ndarray, float]:
    """Optimal rigid (R, t) with det(R) = +1 mapping source onto target.

    Returns (R, t, rms residual). Requires >= 3 non-collinear points.
    """
    A = np.asarray(source, dtype=np.float64)
    B = np.asarray(target, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
        raise ValueError("point sets must be matching (N, 3) arrays")
    if len(A) < 3:
        raise UnderConstrainedError("rigid alignment needs at least 3 points")
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    Ac, Bc = A - ca, B - cb
    sv = np.linalg.svd(Ac, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise UnderConstrainedError("points are (near) collinear")
    H = Ac.T @ Bc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cb - R @ ca
    res = float(np.sqrt(np.mean(np.sum((A @ R.T + t - B) ** 2, axis=1))))
    return R, t, res


def similarity_align(source: np.ndarray, target: np.ndarray
                     ) -> tuple[float, np.ndarray, np.ndarray]:
    """Umeyama similarity (s, R, t) minimizing ||s R a + t - b||^2."""
    A = np.asarray(source, dtype=np.float64)
    B = np.asarray(target, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
        raise ValueError("point sets must be matching (N, 3) arrays")
    if len(A) < 3:
        raise UnderConstrainedError("similarity alignment needs at least 3 points")
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    Ac, Bc = A - ca, B - cb
    var_a = float(np.mean(np.sum(Ac ** 2, axis=1)))
    if var_a < EPS_NORM:
        raise UnderConstrainedError("degenerate source configuration")
    sv = np.linalg.svd(Ac, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise UnderConstrainedError("points are (near) collinear")
    H = Bc.T @ Ac / len(A)
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    s = float(np.trace(np.diag(S) @ D) / var_a)
    t = cb - s * R @ ca
    return s, R, t


def estimate_scale(q_frame: np.ndarray, canon: CanonicalKeypoints) -> float:
    """Scale from the reference-pair distance ratio: |q1 - q2| / |p1 - p2|."""
    q_frame = np.asarray(q_frame, dtype=np.float64)
    i, j = canon.reference_pair
    denom = np.linalg.norm(canon.points[i] - canon.points[j])
    if denom < EPS_NORM:
        raise NumericalError("canonical reference pair has zero separation")
    return float(np.linalg.norm(q_frame[i] - q_frame[j]) / denom)


def init_pose_frame(q_frame: np.ndarray, canon: CanonicalKeypoints, scale: float,
                    visibility: np.ndarray | None = None
                    ) -> tuple[np.ndarray, np.ndarray, float]:
    """Closed-form per-frame pose: Kabsch on the scaled canonical keypoints.

    Returns (rot6d, translation, rms residual).
    """
    q_frame = np.asarray(q_frame, dtype=np.float64)
    if visibility is None:
        visibility = np.ones(canon.M, dtype=bool)
    sel = np.asarray(visibility, dtype=bool)
    if sel.sum() < 3:
        raise UnderConstrainedError("need at least 3 visible keypoints")
    R, t, res = kabsch(scale * canon.points[sel], q_frame[sel])
    return matrix_to_rot6d(R), t, res


@dataclass
class ObjectFitConfig:
    iterations: int = 2000
    lr: float = 0.05
    lambda_smooth: float = 0.1
    lr_decay: str = "linear"   # "linear" | "none"
    beta1: float = 0.9
    beta2: float = 0.999


def object_fit_loss(rot6d: np.ndarray, translation: np.ndarray, scale: float,
                    Q: np.ndarray, canon: CanonicalKeypoints,
                    visibility: np.ndarray, lambda_smooth: float
                    ) -> tuple[float, np.ndarray, np.ndarray, float, float]:
    """Fitting + smoothness objective with analytic gradients.

    Fit term: mean over T*M of visibility-masked Euclidean keypoint errors
    ||s Rot(r_t) p_i + t_t - q_it||. Smoothness: mean over T-1 consecutive
    rotation-vector differences ||r_t - r_{t+1}||.
    Returns (total, d_rot6d, d_translation, fit_term, smooth_term).
    """
    T = rot6d.shape[0]
    M = canon.M
    m = np.asarray(visibility, dtype=bool)
    P = canon.points
    d_r = np.zeros_like(rot6d)
    d_t = np.zeros_like(translation)
    fit = 0.0
    inv_tm = 1.0 / (T * M)
    for t in range(T):
        R = rot6d_to_matrix(rot6d[t])
        pred = scale * P @ R.T + translation[t]       # (M, 3)
        e = pred - Q[t]
        dist = np.linalg.norm(e, axis=1)
        fit += inv_tm * float(dist[m].sum())
        safe = np.maximum(dist, EPS_NORM)
        de = np.where((m & (dist > EPS_NORM))[:, None], e / safe[:, None], 0.0) * inv_tm
        d_t[t] = de.sum(axis=0)
        dR = scale * de.T @ P                          # (3, 3)
        d_r[t] = rot6d_vjp(rot6d[t], dR)
    smooth = 0.0
    if T > 1 and lambda_smooth != 0.0:
        inv = 1.0 / (T - 1)
        for t in range(T - 1):
            d = rot6d[t] - rot6d[t + 1]
            n = np.linalg.norm(d)
            smooth += inv * n
            if n > EPS_NORM:
                g = lambda_smooth * inv * d / n
                d_r[t] += g
                d_r[t + 1] -= g
    total = fit + lambda_smooth * smooth
    return total, d_r, d_t, fit, smooth


def fit_object_trajectory(Q: Seq3D, canon: CanonicalKeypoints,
                          visibility: np.ndarray | None = None,
                          config: ObjectFitConfig | None = None
                          ) -> tuple[ObjectPose, dict]:
    """Fit a temporally smooth rigid pose track to observed 3D keypoints.

    Per-frame closed-form initialization, global scale fixed to the median of
    per-frame estimates, then Adam refinement of rotations and translations.
    Returns the pose and a report with loss history and final residuals.
    """
    if config is None:
        config = ObjectFitConfig()
    if visibility is None:
        visibility = np.ones(canon.M, dtype=bool)
    visibility = np.asarray(visibility, dtype=bool)
    i, j = canon.reference_pair
    if not (visibility[i] and visibility[j]):
        raise UnderConstrainedError("reference pair must be visible")
    T = Q.T
    if Q.J != canon.M:
        raise ValueError("observed keypoint count does not match canonical set")

    scales = np.array([estimate_scale(Q.coords[t], canon) for t in range(T)])
    scale = float(np.median(scales))
    if scale <= 0:
        raise NumericalError("non-positive global scale estimate")
    rot6d = np.zeros((T, 6))
    trans = np.zeros((T, 3))
    for t in range(T):
        rot6d[t], trans[t], _ = init_pose_frame(Q.coords[t], canon, scale, visibility)

    params = {"rot6d": rot6d, "trans": trans}
    state = AdamState.for_params(params)
    history = []
    for it in range(config.iterations):
        total, d_r, d_t, fit, smooth = object_fit_loss(
            params["rot6d"], params["trans"], scale, Q.coords, canon,
            visibility, config.lambda_smooth)
        history.append((total, fit, smooth))
        lr = config.lr
        if config.lr_decay == "linear":
            lr = config.lr * (1.0 - it / max(1, config.iterations))
        params, state = adam_step(params, {"rot6d": d_r, "trans": d_t}, state,
                                  lr=lr, beta1=config.beta1, beta2=config.beta2)

    pose = ObjectPose(rot6d=params["rot6d"], translation=params["trans"], scale=scale)
    final_total, _, _, final_fit, final_smooth = object_fit_loss(
        pose.rot6d, pose.translation, scale, Q.coords, canon, visibility,
        config.lambda_smooth)
    report = {
        "history": history,
        "final_total": final_total,
        "final_fit": final_fit,
        "final_smooth": final_smooth,
        "scale_estimates": scales,
    }
    return pose, report


def keypoints_from_pose(pose: ObjectPose, canon: CanonicalKeypoints,
                        subset: np.ndarray | None = None) -> Seq3D:
    """Apply the pose track to the canonical keypoints: s Rot(r_t) p + t_t."""
    idx = np.arange(canon.M) if subset is None else np.asarray(subset, dtype=int)
    P = canon.points[idx]
    out = np.empty((pose.T, len(idx), 3))
    for t in range(pose.T):
        R = rot6d_to_matrix(pose.rot6d[t])
        out[t] = pose.scale * P @ R.T + pose.translation[t]
    return Seq3D(out)
