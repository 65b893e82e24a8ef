"""Symmetric 2D Chamfer distance and silhouette-based object pose alignment.

An object mesh is aligned to a segmentation mask by sampling points from both
(5000 each by default, area-weighted on the mesh surface), projecting the
surface points through a fixed pinhole camera, and descending the symmetric
squared-nearest-neighbor Chamfer objective over an SE(3) pose parameterized
with a 6D rotation. The first frame of a sequence uses random restarts; later
frames warm-start from the previous solution.

Nearest neighbors run on scipy's cKDTree; the O(|A||B|) brute force is kept
as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraIntrinsics, Z_NEAR
from .errors import NumericalError
from .motion import check_finite
from .objectpose import rot6d_to_matrix, rot6d_vjp, matrix_to_rot6d
from .training import AdamState, adam_step


@dataclass
class TriMesh:
    vertices: np.ndarray  # (N, 3) m
    faces: np.ndarray     # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=int)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (N, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be (F, 3)")
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")

    def extent(self) -> float:
        """Largest axis-aligned bounding-box dimension."""
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(span.max())

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class MaskImage:
    grid: np.ndarray  # (H, W) bool, True = foreground

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise ValueError("mask grid must be 2D")

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def foreground_count(self) -> int:
        return int(self.grid.sum())


def chamfer_2d(A: np.ndarray, B: np.ndarray) -> float:
    """Symmetric Chamfer: mean squared NN distance A->B plus B->A."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d_ab, _ = cKDTree(B).query(A)
    d_ba, _ = cKDTree(A).query(B)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def chamfer_2d_brute(A: np.ndarray, B: np.ndarray) -> float:
    """O(|A||B|) reference used as the accelerated version's oracle."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d2 = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def chamfer_2d_grad(moving: np.ndarray, fixed: np.ndarray,
                    fixed_tree: cKDTree | None = None
                    ) -> tuple[float, np.ndarray]:
    """Chamfer loss and its gradient w.r.t. the moving set.

    Gradient holds the nearest-neighbor assignment fixed, which is exact
    wherever the assignment is locally constant.
    """
    moving = np.asarray(moving, dtype=np.float64)
    if fixed_tree is None:
        fixed_tree = cKDTree(fixed)
    d_mf, idx_mf = fixed_tree.query(moving)
    d_fm, idx_fm = cKDTree(moving).query(fixed)
    n_m, n_f = len(moving), len(fixed)
    loss = float(np.mean(d_mf ** 2) + np.mean(d_fm ** 2))
    grad = 2.0 * (moving - fixed[idx_mf]) / n_m
    diffs = moving[idx_fm] - fixed
    np.add.at(grad, idx_fm, 2.0 * diffs / n_f)
    return loss, grad


def sample_mesh_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted barycentric surface sampling; zero-area faces excluded."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise NumericalError("mesh has no positive-area faces")
    probs = areas / total
    face_idx = rng.choice(len(mesh.faces), size=n, p=probs)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    return (1.0 - u - v)[:, None] * tri[:, 0] + u[:, None] * tri[:, 1] \
        + v[:, None] * tri[:, 2]


def sample_mask_points(mask: MaskImage, n: int, rng: np.random.Generator) -> np.ndarray:
    """Pixel-center coordinates of n random foreground pixels (with replacement)."""
    rows, cols = np.nonzero(mask.grid)
    if len(rows) == 0:
        raise ValueError("mask has no foreground pixels")
    idx = rng.integers(len(rows), size=n)
    return np.stack([cols[idx] + 0.5, rows[idx] + 0.5], axis=1).astype(np.float64)


def rasterize_mesh_mask(mesh: TriMesh, R: np.ndarray, t: np.ndarray,
                        intr: CameraIntrinsics) -> MaskImage:
    """Silhouette of the posed mesh: pixel centers covered by any projected
    front-of-camera triangle."""
    cam = mesh.vertices @ np.asarray(R, dtype=np.float64).T + np.asarray(t, dtype=np.float64)
    z = cam[:, 2]
    px = np.stack([intr.cx + intr.fx * cam[:, 0] / np.maximum(z, Z_NEAR),
                   intr.cy + intr.fy * cam[:, 1] / np.maximum(z, Z_NEAR)], axis=1)
    grid = np.zeros((intr.height, intr.width), dtype=bool)
    for f in mesh.faces:
        if np.any(z[f] <= Z_NEAR):
            continue
        tri = px[f]  # (3, 2)
        lo = np.floor(tri.min(axis=0) - 0.5).astype(int)
        hi = np.ceil(tri.max(axis=0) + 0.5).astype(int)
        x0, y0 = max(lo[0], 0), max(lo[1], 0)
        x1, y1 = min(hi[0] + 1, intr.width), min(hi[1] + 1, intr.height)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        inside = _points_in_triangle(gx, gy, tri)
        grid[y0:y1, x0:x1] |= inside
    return MaskImage(grid)


def _points_in_triangle(gx: np.ndarray, gy: np.ndarray, tri: np.ndarray) -> np.ndarray:
    (x1, y1), (x2, y2), (x3, y3) = tri
    denom = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    if abs(denom) < 1e-12:
        return np.zeros_like(gx, dtype=bool)
    w1 = ((y2 - y3) * (gx - x3) + (x3 - x2) * (gy - y3)) / denom
    w2 = ((y3 - y1) * (gx - x3) + (x1 - x3) * (gy - y3)) / denom
    w3 = 1.0 - w1 - w2
    eps = -1e-9
    return (w1 >= eps) & (w2 >= eps) & (w3 >= eps)


@dataclass
class ChamferAlignConfig:
    n_points: int = 5000
    restarts: int = 200
    restart_iters: int = 30
    top_k: int = 10            # survivors of the restart round
    top_k_iters: int = 150
    refine_iters: int = 300
    lr: float = 0.02
    min_valid_fraction: float = 0.25
    threads: int = 1           # restart candidates are independent; results
                               # are identical for any thread count


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _translation_heuristic(mask: MaskImage, mesh: TriMesh,
                           intr: CameraIntrinsics) -> np.ndarray:
    """Depth from the mask bounding box vs the object's 3D extent, then
    back-project the box center."""
    rows, cols = np.nonzero(mask.grid)
    u0 = 0.5 * (cols.min() + cols.max() + 1)
    v0 = 0.5 * (rows.min() + rows.max() + 1)
    size_px = max(cols.max() - cols.min() + 1, rows.max() - rows.min() + 1)
    extent = mesh.extent()
    z0 = intr.fx * extent / max(size_px, 1)
    return np.array([(u0 - intr.cx) / intr.fx * z0,
                     (v0 - intr.cy) / intr.fy * z0,
                     z0])


def _pose_objective(rot6d: np.ndarray, trans: np.ndarray, mesh_pts: np.ndarray,
                    mask_pts: np.ndarray, mask_tree: cKDTree,
                    intr: CameraIntrinsics, min_valid_fraction: float
                    ) -> tuple[float, np.ndarray, np.ndarray]:
    """Chamfer loss of the projected surface points, with pose gradients."""
    R = rot6d_to_matrix(rot6d)
    cam = mesh_pts @ R.T + trans
    z = cam[:, 2]
    valid = z > 10 * Z_NEAR
    if valid.mean() < min_valid_fraction:
        return float("inf"), np.zeros(6), np.zeros(3)
    cam_v = cam[valid]
    proj = np.stack([intr.cx + intr.fx * cam_v[:, 0] / cam_v[:, 2],
                     intr.cy + intr.fy * cam_v[:, 1] / cam_v[:, 2]], axis=1)
    loss, dproj = chamfer_2d_grad(proj, mask_pts, mask_tree)
    # chain through the projection
    zf = cam_v[:, 2]
    dx = dproj[:, 0] * intr.fx / zf
    dy = dproj[:, 1] * intr.fy / zf
    dz = -(dproj[:, 0] * intr.fx * cam_v[:, 0]
           + dproj[:, 1] * intr.fy * cam_v[:, 1]) / zf ** 2
    dcam = np.zeros_like(cam)
    dcam[valid] = np.stack([dx, dy, dz], axis=1)
    d_trans = dcam.sum(axis=0)
    dR = dcam.T @ mesh_pts
    d_rot = rot6d_vjp(rot6d, dR)
    return loss, d_rot, d_trans


def _descend(rot6d: np.ndarray, trans: np.ndarray, iters: int, lr: float,
             mesh_pts, mask_pts, mask_tree, intr, min_valid_fraction
             ) -> tuple[np.ndarray, np.ndarray, float]:
    """Adam descent with linear step decay; returns the best iterate seen
    (the raw iterate dithers at the step-size scale near a minimum)."""
    params = {"r": rot6d.copy(), "t": trans.copy()}
    state = AdamState.for_params(params)
    best = (params["r"].copy(), params["t"].copy(), float("inf"))
    for it in range(iters):
        loss, d_r, d_t = _pose_objective(params["r"], params["t"], mesh_pts,
                                         mask_pts, mask_tree, intr,
                                         min_valid_fraction)
        if not np.isfinite(loss):
            break
        if loss < best[2]:
            best = (params["r"].copy(), params["t"].copy(), loss)
        step = lr * (1.0 - it / max(1, iters))
        params, state = adam_step(params, {"r": d_r, "t": d_t}, state, lr=step)
    final, _, _ = _pose_objective(params["r"], params["t"], mesh_pts, mask_pts,
                                  mask_tree, intr, min_valid_fraction)
    if np.isfinite(final) and final < best[2]:
        best = (params["r"], params["t"], final)
    return best


def chamfer_align_frame(mesh: TriMesh, mask: MaskImage, intr: CameraIntrinsics,
                        init: tuple[np.ndarray, np.ndarray] | None,
                        rng: np.random.Generator,
                        config: ChamferAlignConfig | None = None
                        ) -> tuple[np.ndarray, np.ndarray, float]:
    """Align the mesh to one mask; returns (R, t, chamfer loss).

    Without an initial pose, `config.restarts` random rotations are each
    descended briefly (translation from the bounding-box heuristic) and the
    best candidate is refined. With an initial pose only refinement runs.
    """
    if config is None:
        config = ChamferAlignConfig()
    if mask.foreground_count() == 0:
        raise ValueError("mask has no foreground pixels")
    mask_pts = sample_mask_points(mask, config.n_points, rng)
    mesh_pts = sample_mesh_surface(mesh, config.n_points, rng)
    mask_tree = cKDTree(mask_pts)

    if init is not None:
        r0 = matrix_to_rot6d(np.asarray(init[0], dtype=np.float64))
        t0 = np.asarray(init[1], dtype=np.float64)
        r, t, loss = _descend(r0, t0, config.refine_iters, config.lr, mesh_pts,
                              mask_pts, mask_tree, intr, config.min_valid_fraction)
        if not np.isfinite(loss):
            raise NumericalError("alignment diverged from the given initialization")
        return rot6d_to_matrix(r), t, loss

    t_init = _translation_heuristic(mask, mesh, intr)
    starts = [matrix_to_rot6d(_random_rotation(rng))
              for _ in range(config.restarts)]

    def _run(r0):
        return _descend(r0, t_init, config.restart_iters, config.lr, mesh_pts,
                        mask_pts, mask_tree, intr, config.min_valid_fraction)

    if config.threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            candidates = list(pool.map(_run, starts))
    else:
        candidates = [_run(r0) for r0 in starts]
    candidates = [c for c in candidates if np.isfinite(c[2])]
    if not candidates:
        raise NumericalError("all restart candidates diverged")
    # funnel: give the most promising candidates a longer descent before
    # committing to one for the final refinement
    candidates.sort(key=lambda c: c[2])
    survivors = []
    for r0, t0, _ in candidates[:config.top_k]:
        survivors.append(_descend(r0, t0, config.top_k_iters, config.lr,
                                  mesh_pts, mask_pts, mask_tree, intr,
                                  config.min_valid_fraction))
    survivors = [c for c in survivors if np.isfinite(c[2])]
    best = min(survivors, key=lambda c: c[2])
    r, t, loss = _descend(best[0], best[1], config.refine_iters, config.lr,
                          mesh_pts, mask_pts, mask_tree, intr,
                          config.min_valid_fraction)
    check_finite(t, "alignment translation")
    return rot6d_to_matrix(r), t, loss


def fit_mask_sequence(mesh: TriMesh, masks: list[MaskImage], intr: CameraIntrinsics,
                      rng: np.random.Generator,
                      config: ChamferAlignConfig | None = None
                      ) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Per-frame alignment: restarts on frame 0, warm starts afterwards.

    Returns (rot6d (T, 6), translations (T, 3), per-frame losses).
    """
    if not masks:
        raise ValueError("need at least one mask")
    T = len(masks)
    rot6d = np.zeros((T, 6))
    trans = np.zeros((T, 3))
    losses: list[float] = []
    prev: tuple[np.ndarray, np.ndarray] | None = None
    for t, mask in enumerate(masks):
        R, tv, loss = chamfer_align_frame(mesh, mask, intr, prev, rng, config)
        rot6d[t] = matrix_to_rot6d(R)
        trans[t] = tv
        losses.append(loss)
        prev = (R, tv)
    return rot6d, trans, losses
