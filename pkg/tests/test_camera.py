import numpy as np
import pytest

from motionlift.camera import (CameraExtrinsic, CameraIntrinsics, CameraTrajectory,
                               cross_view_epipolar_lines, cross_view_lines_trajectory,
                               default_intrinsics, epipole, from_canvas,
                               fundamental_matrix, lines_to_canvas,
                               normalize_trajectory, point_line_distance,
                               point_line_residual, project, project_jacobian,
                               relative_transform, to_canvas, training_epipolar_lines)
from motionlift.errors import NumericalError
from motionlift.motion import KeypointSeq2D

from conftest import random_extrinsic, random_rotation, random_seq, random_trajectory


def test_project_basic():
    intr = default_intrinsics()
    ident = CameraExtrinsic.identity()
    px, ok = project(np.array([0.0, 0.0, 1.0]), ident, intr)
    assert ok and np.allclose(px, (500.0, 500.0))
    px, ok = project(np.array([0.5, 0.0, 1.0]), ident, intr)
    assert ok and np.allclose(px, (1000.0, 500.0))
    px, ok = project(np.array([0.1, 0.1, 0.0]), ident, intr)
    assert not ok
    assert np.all(np.isfinite(px))


def test_project_rigid_composition():
    rng = np.random.default_rng(0)
    intr = default_intrinsics()
    for _ in range(20):
        ext = random_extrinsic(rng)
        rig = random_extrinsic(rng)
        pts = rng.standard_normal((10, 3)) + np.array([0, 0, 5.0])
        # transforming points by `rig` then projecting with ext == projecting
        # with the composed extrinsic
        moved = rig.apply(pts)
        composed = ext.compose_after(rig)
        px1, ok1 = project(moved, ext, intr)
        px2, ok2 = project(pts, composed, intr)
        # compare only well-conditioned projections (grazing depths push pixel
        # magnitudes past what a 1e-9 absolute tolerance can resolve)
        sel = ok1 & ok2 & (composed.apply(pts)[:, 2] > 0.1)
        if sel.any():
            assert np.abs(px1[sel] - px2[sel]).max() < 1e-9


def test_normalize_trajectory():
    rng = np.random.default_rng(1)
    const = CameraTrajectory([random_extrinsic(rng)] * 4)
    norm = normalize_trajectory(const)
    for e in norm.extrinsics:
        assert np.allclose(e.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(e.translation, 0, atol=1e-12)

    traj = random_trajectory(rng, 5)
    traj.extrinsics[0] = CameraExtrinsic.identity()
    norm = normalize_trajectory(traj)
    for a, b in zip(traj.extrinsics, norm.extrinsics):
        assert np.allclose(a.rotation, b.rotation)
        assert np.allclose(a.translation, b.translation)


def test_normalize_trajectory_two_path_projection():
    rng = np.random.default_rng(2)
    intr = default_intrinsics()
    for _ in range(10):
        traj = random_trajectory(rng, 4)
        norm = normalize_trajectory(traj)
        x = rng.standard_normal(3) * 2
        for t in range(traj.T):
            px_a, ok_a = project(x, traj.extrinsics[t], intr)
            x_in_c0 = traj.extrinsics[0].apply(x)
            px_b, ok_b = project(x_in_c0, norm.extrinsics[t], intr)
            if ok_a and ok_b:
                assert np.abs(px_a - px_b).max() < 1e-6


def test_normalize_idempotent():
    rng = np.random.default_rng(3)
    traj = random_trajectory(rng, 6)
    once = normalize_trajectory(traj)
    twice = normalize_trajectory(once)
    for a, b in zip(once.extrinsics, twice.extrinsics):
        assert np.allclose(a.rotation, b.rotation, atol=1e-12)
        assert np.allclose(a.translation, b.translation, atol=1e-12)


def test_relative_transform():
    rng = np.random.default_rng(4)
    a = random_extrinsic(rng)
    rel = relative_transform(a, a)
    assert np.allclose(rel.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(rel.translation, 0, atol=1e-12)

    b = random_extrinsic(rng)
    rel = relative_transform(CameraExtrinsic.identity(), b)
    assert np.allclose(rel.rotation, b.rotation)
    assert np.allclose(rel.translation, b.translation)

    # composition oracle: mapping a camera-a point directly vs via the world
    for _ in range(10):
        a, b = random_extrinsic(rng), random_extrinsic(rng)
        rel = relative_transform(a, b)
        x_world = rng.standard_normal(3)
        x_a = a.apply(x_world)
        assert np.allclose(rel.apply(x_a), b.apply(x_world), atol=1e-9)


def test_epipole_on_axis():
    intr = default_intrinsics()
    rel = CameraExtrinsic(np.eye(3), np.array([0.0, 0.0, 1.0]))
    e = epipole(rel, intr)
    assert e[2] > 0
    assert np.allclose(e / e[2], (500.0, 500.0, 1.0))


def test_epipole_pure_rotation():
    rng = np.random.default_rng(5)
    rel = CameraExtrinsic(random_rotation(rng), np.zeros(3))
    e = epipole(rel, default_intrinsics())
    assert e[2] == 0.0


def test_training_lines_examples():
    seq = KeypointSeq2D(np.array([[[0.0, 0.0], [5.0, 5.0]]]))
    lines = training_epipolar_lines(seq, np.array([1.0, 0.0, 1.0]))
    l = lines.lines[0, 0]
    assert np.allclose(np.abs(l), (0.0, 1.0, 0.0))

    seq = KeypointSeq2D(np.array([[[3.0, 2.0], [5.0, 5.0]]]))
    lines = training_epipolar_lines(seq, np.array([1.0, 0.0, 0.0]))
    l = lines.lines[0, 0]
    if l[1] < 0:
        l = -l
    assert np.allclose(l, (0.0, 1.0, -2.0))


def test_training_lines_incidence():
    rng = np.random.default_rng(6)
    seq = random_seq(rng, 4, 9)
    epi = np.array([1234.0, -77.0, 1.0])
    lines = training_epipolar_lines(seq, epi)
    # every keypoint satisfies its own line
    _, r, _ = point_line_residual(lines, seq)
    assert np.abs(r).max() < 1e-9
    # every line passes through the epipole
    for t in range(4):
        for k in range(9):
            assert point_line_distance(lines.lines[t, k], epi) < 1e-6


def test_training_lines_coincident_keypoint_flagged():
    seq = KeypointSeq2D(np.array([[[10.0, 20.0], [1.0, 1.0]]]))
    lines = training_epipolar_lines(seq, np.array([10.0, 20.0, 1.0]))
    assert not lines.valid()[0, 0]
    assert lines.valid()[0, 1]


def test_fundamental_matrix_properties():
    rng = np.random.default_rng(7)
    intr = default_intrinsics()
    for _ in range(10):
        ext_u = random_extrinsic(rng)
        ext_v = random_extrinsic(rng)
        rel = relative_transform(ext_u, ext_v)
        if np.linalg.norm(rel.translation) < 1e-3:
            continue
        F = fundamental_matrix(rel, intr, intr)
        sv = np.linalg.svd(F.matrix, compute_uv=False)
        assert sv[2] / sv[0] < 1e-6
        # projection oracle over 100 random 3D points
        pts = rng.standard_normal((100, 3)) * 3
        px_u, ok_u = project(pts, ext_u, intr)
        px_v, ok_v = project(pts, ext_v, intr)
        for i in range(100):
            if not (ok_u[i] and ok_v[i]):
                continue
            xu = np.array([px_u[i, 0], px_u[i, 1], 1.0])
            line = F.matrix @ xu
            nrm = np.linalg.norm(line[:2])
            if nrm < 1e-12:
                continue
            d = abs(line @ np.array([px_v[i, 0], px_v[i, 1], 1.0])) / nrm
            assert d < 1e-6
        # epipole in the null space of F^T
        e = epipole(rel, intr)
        assert np.linalg.norm(F.matrix.T @ e) < 1e-6


def test_fundamental_matrix_zero_baseline():
    rng = np.random.default_rng(8)
    rel = CameraExtrinsic(random_rotation(rng), np.zeros(3))
    with pytest.raises(NumericalError):
        fundamental_matrix(rel, default_intrinsics(), default_intrinsics())


def test_fundamental_scaling_invariance():
    rng = np.random.default_rng(9)
    rel = CameraExtrinsic(random_rotation(rng), np.array([0.5, 0.1, -0.2]))
    intr = default_intrinsics()
    F = fundamental_matrix(rel, intr, intr)
    seq = random_seq(rng, 2, 5)
    l1 = cross_view_epipolar_lines(seq, F).lines
    from motionlift.camera import FundamentalMatrix
    l2 = cross_view_epipolar_lines(seq, FundamentalMatrix(3.7 * F.matrix)).lines
    assert np.abs(np.abs(l1) - np.abs(l2)).max() < 1e-9


def test_cross_view_lines_projection_oracle():
    from motionlift.camsim import look_at
    rng = np.random.default_rng(10)
    intr = default_intrinsics()
    ext_u = CameraExtrinsic.identity()
    ext_v = look_at(np.array([1.0, 0.5, 0.3]), np.array([0.0, 0.0, 6.0]))
    rel = relative_transform(ext_u, ext_v)
    F = fundamental_matrix(rel, intr, intr)
    pts = rng.standard_normal((6, 3)) + np.array([0, 0, 6.0])
    px_u, ok_u = project(pts, ext_u, intr)
    px_v, ok_v = project(pts, ext_v, intr)
    assert ok_u.all() and ok_v.all()
    seq_u = KeypointSeq2D(px_u[None])
    lines = cross_view_epipolar_lines(seq_u, F)
    _, r, _ = point_line_residual(lines, KeypointSeq2D(px_v[None]))
    assert np.abs(r).max() < 1e-6
    # lines pass through the epipole
    e = epipole(rel, intr)
    for k in range(6):
        assert point_line_distance(lines.lines[0, k], e) < 1e-6


def test_cross_view_lines_mask_propagation():
    rng = np.random.default_rng(11)
    intr = default_intrinsics()
    rel = CameraExtrinsic(random_rotation(rng), np.array([1.0, 0.0, 0.0]))
    F = fundamental_matrix(rel, intr, intr)
    vis = np.ones((2, 4), dtype=bool)
    vis[0, 2] = False
    seq = KeypointSeq2D(rng.uniform(0, 1000, (2, 4, 2)), vis)
    lines = cross_view_epipolar_lines(seq, F)
    assert not lines.valid()[0, 2]
    assert lines.valid()[1, 2]


def test_cross_view_lines_trajectory_consistency():
    from motionlift.camsim import look_at
    rng = np.random.default_rng(12)
    intr = default_intrinsics()
    T = 5
    target = np.array([0.0, 0.0, 6.0])

    def wandering_cam(base):
        extr = [look_at(base + 0.2 * rng.standard_normal(3), target)
                for _ in range(T)]
        return CameraTrajectory(extr, intr)

    cam_u = wandering_cam(np.array([0.0, 0.0, 0.0]))
    cam_v = wandering_cam(np.array([3.0, 1.0, 1.0]))
    pts = rng.standard_normal((T, 8, 3)) * 0.5 + target
    px_u = np.stack([project(pts[t], cam_u.extrinsics[t], intr)[0] for t in range(T)])
    px_v = np.stack([project(pts[t], cam_v.extrinsics[t], intr)[0] for t in range(T)])
    lines = cross_view_lines_trajectory(KeypointSeq2D(px_u), cam_u, cam_v)
    total, r, _ = point_line_residual(lines, KeypointSeq2D(px_v))
    assert np.abs(r).max() < 1e-6
    assert total < 1e-6 * T * 8


def test_point_line_residual_values():
    lines_arr = np.zeros((1, 2, 3))
    lines_arr[0, 0] = (0.0, 1.0, 0.0)
    lines_arr[0, 1] = (0.0, 1.0, 0.0)
    from motionlift.camera import EpipolarLineSet
    lines = EpipolarLineSet(lines_arr)
    seq = KeypointSeq2D(np.array([[[3.0, 0.0], [3.0, 2.0]]]))
    total, r, grad = point_line_residual(lines, seq)
    assert abs(r[0, 0]) < 1e-12
    assert abs(r[0, 1] - 2.0) < 1e-12
    assert abs(total - 2.0) < 1e-12
    assert np.allclose(grad[0, 1], (0.0, 1.0))


def test_point_line_residual_gradient_fd():
    rng = np.random.default_rng(13)
    seq = random_seq(rng, 3, 5)
    epi = np.array([50.0, 900.0, 1.0])
    lines = training_epipolar_lines(random_seq(rng, 3, 5), epi)

    def f(coords):
        total, _, _ = point_line_residual(lines, KeypointSeq2D(coords))
        return total

    base = seq.coords
    _, _, grad = point_line_residual(lines, seq)
    h = 1e-5
    for _ in range(20):
        t = rng.integers(3)
        k = rng.integers(5)
        c = rng.integers(2)
        pert = base.copy()
        pert[t, k, c] += h
        up = f(pert)
        pert[t, k, c] -= 2 * h
        dn = f(pert)
        fd = (up - dn) / (2 * h)
        if abs(fd) > 1e-6:
            assert abs(fd - grad[t, k, c]) / max(abs(fd), 1e-12) < 1e-5


def test_point_line_residual_shape_mismatch():
    from motionlift.camera import EpipolarLineSet
    lines = EpipolarLineSet(np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        point_line_residual(lines, KeypointSeq2D(np.zeros((2, 4, 2))))


def test_canvas_round_trip():
    rng = np.random.default_rng(14)
    intr = CameraIntrinsics(fx=800, fy=900, cx=320, cy=240, width=640, height=480)
    px = rng.uniform(0, 640, (5, 7, 2))
    cv = to_canvas(px, intr)
    assert np.abs(from_canvas(cv, intr) - px).max() < 1e-9
    assert np.allclose(to_canvas(np.array([320.0, 240.0]), intr), (0.0, 0.0))


def test_lines_to_canvas_preserves_incidence():
    rng = np.random.default_rng(15)
    intr = default_intrinsics()
    seq = random_seq(rng, 3, 6)
    lines = training_epipolar_lines(seq, np.array([0.0, 0.0, 1.0]))
    lcv = lines_to_canvas(lines, intr)
    cv = to_canvas(seq.coords, intr)
    r = lcv[..., 0] * cv[..., 0] + lcv[..., 1] * cv[..., 1] + lcv[..., 2]
    assert np.abs(r).max() < 1e-9


def test_project_jacobian_fd():
    rng = np.random.default_rng(16)
    intr = default_intrinsics()
    for _ in range(10):
        ext = random_extrinsic(rng)
        p = rng.standard_normal(3)
        if ext.apply(p)[2] < 0.5:
            continue
        J = project_jacobian(p, ext, intr)
        h = 1e-6
        for c in range(3):
            dp = np.zeros(3)
            dp[c] = h
            up, _ = project(p + dp, ext, intr)
            dn, _ = project(p - dp, ext, intr)
            fd = (up - dn) / (2 * h)
            assert np.abs(fd - J[:, c]).max() < 1e-4
