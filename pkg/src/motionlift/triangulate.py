"""Multi-view triangulation of keypoint sequences.

Per frame and joint: homogeneous DLT initialization followed by damped
Gauss-Newton refinement of the summed squared pixel reprojection error (a
plain first-order descent refiner is available for comparison). Joints with
fewer than two usable observations or a near-zero triangulation angle are
flagged, never silently returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, CameraTrajectory, project, project_jacobian
from .errors import UnderConstrainedError
from .motion import KeypointSeq2D, Seq3D

MIN_TRIANGULATION_ANGLE_DEG = 0.1


@dataclass
class TriangulationConfig:
    method: str = "gauss_newton"   # "gauss_newton" | "gradient_descent"
    gn_iterations: int = 20
    gd_iterations: int = 500
    gd_lr: float = 0.01
    min_angle_deg: float = MIN_TRIANGULATION_ANGLE_DEG


@dataclass
class TriangulationReport:
    valid: np.ndarray          # (T, J) bool
    n_observations: np.ndarray  # (T, J) int
    residual_px: np.ndarray    # (T, J) rms reprojection error, NaN when invalid

    def mean_residual(self) -> float:
        vals = self.residual_px[self.valid]
        return float(vals.mean()) if vals.size else float("nan")


def _dlt(obs_px: np.ndarray, mats: list[np.ndarray]) -> np.ndarray:
    """Linear triangulation from >= 2 projection matrices."""
    rows = []
    for (x, y), P in zip(obs_px, mats):
        rows.append(x * P[2] - P[0])
        rows.append(y * P[2] - P[1])
    A = np.stack(rows)
    _, _, vt = np.linalg.svd(A)
    Xh = vt[-1]
    w = Xh[3] if abs(Xh[3]) > 1e-12 else 1e-12
    return Xh[:3] / w


def _ray_angles_ok(point: np.ndarray, centers: list[np.ndarray],
                   min_angle_deg: float) -> bool:
    """True if some pair of viewing rays subtends at least the minimum angle."""
    dirs = []
    for c in centers:
        d = point - c
        n = np.linalg.norm(d)
        if n > 1e-12:
            dirs.append(d / n)
    best = 0.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            cos = np.clip(abs(np.dot(dirs[i], dirs[j])), -1.0, 1.0)
            best = max(best, np.degrees(np.arccos(cos)))
    return best >= min_angle_deg


def _refine_point(point: np.ndarray, obs: list[tuple[np.ndarray, object, CameraIntrinsics]],
                  config: TriangulationConfig) -> np.ndarray:
    """Minimize the summed squared pixel residual over the 3D point."""
    x = point.copy()
    if config.method == "gradient_descent":
        for _ in range(config.gd_iterations):
            g = np.zeros(3)
            for px, ext, intr in obs:
                pred, ok = project(x, ext, intr)
                if not ok:
                    continue
                r = pred - px
                g += 2.0 * project_jacobian(x, ext, intr).T @ r
            x = x - config.gd_lr * g
        return x
    lam = 1e-6
    for _ in range(config.gn_iterations):
        JtJ = np.zeros((3, 3))
        Jtr = np.zeros(3)
        cost = 0.0
        for px, ext, intr in obs:
            pred, ok = project(x, ext, intr)
            if not ok:
                continue
            r = pred - px
            J = project_jacobian(x, ext, intr)
            JtJ += J.T @ J
            Jtr += J.T @ r
            cost += float(r @ r)
        try:
            step = np.linalg.solve(JtJ + lam * np.eye(3), Jtr)
        except np.linalg.LinAlgError:
            break
        x_new = x - step
        new_cost = 0.0
        for px, ext, intr in obs:
            pred, ok = project(x_new, ext, intr)
            if ok:
                r = pred - px
                new_cost += float(r @ r)
        if new_cost <= cost:
            x = x_new
            lam = max(lam * 0.5, 1e-12)
            if cost - new_cost < 1e-16:
                break
        else:
            lam *= 10.0
            if lam > 1e6:
                break
    return x


def triangulate_sequence(views: list[tuple[KeypointSeq2D, CameraTrajectory]],
                         config: TriangulationConfig | None = None
                         ) -> tuple[Seq3D, TriangulationReport]:
    """Recover per-frame 3D joints from V >= 2 views.

    Under-constrained entries (too few observations, degenerate geometry) are
    flagged in the report and hold the best-effort linear estimate (or zeros).
    """
    if config is None:
        config = TriangulationConfig()
    if len(views) < 2:
        raise UnderConstrainedError("triangulation needs at least two views")
    T = views[0][0].T
    K = views[0][0].K
    for seq, cam in views:
        if seq.T != T or seq.K != K or cam.T != T:
            raise ValueError("views must share T and K, cameras must match T")

    coords = np.zeros((T, K, 3))
    valid = np.zeros((T, K), dtype=bool)
    n_obs = np.zeros((T, K), dtype=int)
    residual = np.full((T, K), np.nan)

    for t in range(T):
        mats = [cam.intrinsics.matrix() @ cam.extrinsics[t].matrix34()
                for _, cam in views]
        centers = [cam.extrinsics[t].camera_center() for _, cam in views]
        for k in range(K):
            obs_idx = [v for v, (seq, _) in enumerate(views)
                       if seq.visibility[t, k]]
            n_obs[t, k] = len(obs_idx)
            if len(obs_idx) < 2:
                continue
            obs_px = np.stack([views[v][0].coords[t, k] for v in obs_idx])
            x0 = _dlt(obs_px, [mats[v] for v in obs_idx])
            obs = [(views[v][0].coords[t, k], views[v][1].extrinsics[t],
                    views[v][1].intrinsics) for v in obs_idx]
            x = _refine_point(x0, obs, config)
            if not np.all(np.isfinite(x)):
                continue
            coords[t, k] = x
            if not _ray_angles_ok(x, [centers[v] for v in obs_idx],
                                  config.min_angle_deg):
                continue
            errs = []
            behind = False
            for px, ext, intr in obs:
                pred, ok = project(x, ext, intr)
                if not ok:
                    behind = True
                    break
                errs.append(np.sum((pred - px) ** 2))
            if behind:
                continue
            residual[t, k] = float(np.sqrt(np.mean(errs)))
            valid[t, k] = True

    return Seq3D(coords), TriangulationReport(valid=valid, n_observations=n_obs,
                                              residual_px=residual)
