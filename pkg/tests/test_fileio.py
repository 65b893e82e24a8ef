import json

import numpy as np
import pytest

from motionlift.camera import CameraTrajectory, default_intrinsics
from motionlift.camsim import CameraBank, PredefinedMode, generate_predefined
from motionlift.chamfer import MaskImage
from motionlift.denoiser import DenoiserArch, init_params
from motionlift.errors import SchemaError
from motionlift.fileio import (file_sha256, load_bundle, load_camera,
                               load_camera_bank, load_canonical_keypoints,
                               load_checkpoint, load_motion2d, load_motion3d,
                               load_obj_mesh, load_object_keypoints,
                               load_object_pose, load_pgm_mask, save_bundle,
                               save_camera, save_camera_bank,
                               save_canonical_keypoints, save_checkpoint,
                               save_motion2d, save_motion3d, save_obj_mesh,
                               save_object_keypoints, save_object_pose,
                               save_pgm_mask)
from motionlift.motion import KeypointSeq2D, ObjectKeypointSeq, Seq3D
from motionlift.objectpose import CanonicalKeypoints, ObjectPose
from motionlift.schedule import make_schedule
from motionlift.synth import box_mesh
from motionlift.training import AdamState

from conftest import random_seq, small_trajectory


def test_motion2d_round_trip(tmp_path, rng):
    seq = random_seq(rng, 5, 17)
    seq.visibility[2, 3] = False
    path = tmp_path / "m.json"
    save_motion2d(seq, path, fps=25.0, human_joints=12)
    loaded, meta = load_motion2d(path)
    assert np.array_equal(loaded.coords, seq.coords)
    assert np.array_equal(loaded.visibility, seq.visibility)
    assert meta["fps"] == 25.0
    assert meta["human_joints"] == 12


def test_motion2d_truncated_field(tmp_path, rng):
    seq = random_seq(rng, 3, 4)
    path = tmp_path / "m.json"
    save_motion2d(seq, path)
    data = json.loads(path.read_text())
    del data["visibility"]
    path.write_text(json.dumps(data))
    with pytest.raises(SchemaError) as e:
        load_motion2d(path)
    assert "visibility" in str(e.value)


def test_motion2d_wrong_shape(tmp_path, rng):
    seq = random_seq(rng, 3, 4)
    path = tmp_path / "m.json"
    save_motion2d(seq, path)
    data = json.loads(path.read_text())
    data["T"] = 5
    path.write_text(json.dumps(data))
    with pytest.raises(SchemaError):
        load_motion2d(path)


def test_motion2d_dual_parser_oracle(tmp_path, rng):
    # independent parse: raw json navigation without the loader
    for i in range(10):
        seq = random_seq(rng, 4, 6)
        path = tmp_path / f"m{i}.json"
        save_motion2d(seq, path, fps=30.0)
        raw = json.loads(path.read_text())
        manual = np.array(raw["coords"], dtype=np.float64)
        loaded, _ = load_motion2d(path)
        assert np.array_equal(manual, loaded.coords)
        assert raw["T"] == loaded.T and raw["K"] == loaded.K


def test_motion3d_round_trip(tmp_path, rng):
    seq = Seq3D(rng.standard_normal((4, 8, 3)))
    valid = rng.random((4, 8)) > 0.2
    path = tmp_path / "m3.json"
    save_motion3d(seq, path, valid=valid)
    loaded, lvalid = load_motion3d(path)
    assert np.array_equal(loaded.coords, seq.coords)
    assert np.array_equal(lvalid, valid)


def test_camera_round_trip(tmp_path, rng):
    traj = small_trajectory(rng, 6)
    path = tmp_path / "cam.json"
    save_camera(traj, path)
    loaded = load_camera(path)
    assert loaded.T == 6
    for a, b in zip(traj.extrinsics, loaded.extrinsics):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
    assert loaded.intrinsics == traj.intrinsics


def test_camera_bad_rotation(tmp_path, rng):
    traj = small_trajectory(rng, 2)
    path = tmp_path / "cam.json"
    save_camera(traj, path)
    data = json.loads(path.read_text())
    data["frames"][0][0] = 5.0
    path.write_text(json.dumps(data))
    with pytest.raises(SchemaError):
        load_camera(path)


def test_bundle_round_trip(tmp_path, rng):
    seqs = [random_seq(rng, 4, 5) for _ in range(3)]
    cams = [small_trajectory(rng, 4) for _ in range(3)]
    files = []
    for i, (s, c) in enumerate(zip(seqs, cams)):
        save_motion2d(s, tmp_path / f"v{i}.json")
        save_camera(c, tmp_path / f"c{i}.json")
        files.append((f"v{i}.json", f"c{i}.json"))
    save_bundle(tmp_path / "bundle.json", files, human_joints=3,
                object_static_visibility=np.array([True, False]))
    views, meta = load_bundle(tmp_path / "bundle.json")
    assert len(views) == 3
    assert meta["human_joints"] == 3
    assert np.array_equal(meta["object_static_visibility"], [True, False])
    for (s, c), orig in zip(views, seqs):
        assert np.array_equal(s.coords, orig.coords)


def test_object_pose_round_trip(tmp_path, rng):
    pose = ObjectPose(rot6d=np.tile([1.0, 0, 0, 0, 1.0, 0], (4, 1)),
                      translation=rng.standard_normal((4, 3)), scale=1.25)
    path = tmp_path / "pose.json"
    save_object_pose(pose, path)
    loaded = load_object_pose(path)
    assert np.array_equal(loaded.rot6d, pose.rot6d)
    assert np.array_equal(loaded.translation, pose.translation)
    assert loaded.scale == 1.25


def test_canonical_keypoints_round_trip(tmp_path):
    canon = CanonicalKeypoints(box_mesh().vertices, (0, 7))
    path = tmp_path / "canon.json"
    save_canonical_keypoints(canon, path)
    loaded = load_canonical_keypoints(path)
    assert np.array_equal(loaded.points, canon.points)
    assert loaded.reference_pair == (0, 7)


def test_obj_mesh_round_trip(tmp_path):
    mesh = box_mesh()
    path = tmp_path / "box.obj"
    save_obj_mesh(mesh, path)
    loaded = load_obj_mesh(path)
    assert np.array_equal(loaded.vertices, mesh.vertices)
    assert np.array_equal(loaded.faces, mesh.faces)


def test_obj_mesh_slash_faces(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n")
    mesh = load_obj_mesh(path)
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_obj_mesh_quad_rejected(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n")
    with pytest.raises(SchemaError):
        load_obj_mesh(path)


def test_pgm_round_trip(tmp_path, rng):
    grid = rng.random((12, 9)) > 0.5
    path = tmp_path / "mask.pgm"
    save_pgm_mask(MaskImage(grid), path)
    loaded = load_pgm_mask(path)
    assert np.array_equal(loaded.grid, grid)


def test_pgm_comments_and_errors(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_text("P2\n# a comment\n2 2\n255\n255 0 # trailing\n0 255\n")
    mask = load_pgm_mask(path)
    assert mask.grid.tolist() == [[True, False], [False, True]]
    path.write_text("P2\n2 2\n255\n255 0 0\n")
    with pytest.raises(SchemaError) as e:
        load_pgm_mask(path)
    assert "pixels" in str(e.value)
    path.write_text("P5\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(SchemaError):
        load_pgm_mask(path)


def test_pgm_dual_parser_oracle(tmp_path, rng):
    grid = rng.random((6, 7)) > 0.4
    path = tmp_path / "m.pgm"
    save_pgm_mask(MaskImage(grid), path)
    # independent parse: strip header lines manually
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    w, h = map(int, lines[1].split())
    vals = np.array(" ".join(lines[3:]).split(), dtype=int).reshape(h, w)
    assert np.array_equal(vals > 127, load_pgm_mask(path).grid)


def test_camera_bank_round_trip(tmp_path):
    t1 = generate_predefined(PredefinedMode("move_right", 1.0), 4)
    t2 = generate_predefined(PredefinedMode("zoom_in", 0.5), 4)
    t3 = generate_predefined(PredefinedMode("rotate_cw", 0.7), 4)
    bank = CameraBank(entries={"a": t1, "b": t2, "c": t3},
                      train=["a", "b"], test=["c"])
    save_camera_bank(bank, tmp_path / "bank")
    loaded = load_camera_bank(tmp_path / "bank")
    assert set(loaded.train) == {"a", "b"}
    assert set(loaded.test) == {"c"}
    assert not set(loaded.train) & set(loaded.test)
    for name in ("a", "b", "c"):
        for ea, eb in zip(bank.entries[name].extrinsics,
                          loaded.entries[name].extrinsics):
            assert np.array_equal(ea.rotation, eb.rotation)


def test_checkpoint_round_trip(tmp_path, rng):
    arch = DenoiserArch(joints=4, hidden=6, depth=1, kernel=3, step_embed=8)
    params = init_params(arch, rng)
    sched = make_schedule(20)
    opt = AdamState.for_params(params.weights)
    opt.m["enc_w"][0, 0] = 0.5
    opt.step = 7
    rng_state = np.random.default_rng(3).bit_generator.state
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, sched, "sv", train_step=42, optimizer=opt,
                    rng_state=rng_state)
    out = load_checkpoint(path)
    assert out["model"] == "sv"
    assert out["train_step"] == 42
    assert out["schedule"].N == 20
    for k in params.weights:
        assert np.array_equal(out["params"].weights[k], params.weights[k])
    assert out["optimizer"].step == 7
    assert out["optimizer"].m["enc_w"][0, 0] == 0.5
    restored = np.random.default_rng(0)
    restored.bit_generator.state = out["rng_state"]
    ref = np.random.default_rng(3)
    assert restored.standard_normal(4).tolist() == ref.standard_normal(4).tolist()


def test_checkpoint_shape_hash_validated(tmp_path, rng):
    arch = DenoiserArch(joints=3, hidden=4, depth=1, kernel=3, step_embed=8)
    params = init_params(arch, rng)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, make_schedule(10), "sv")
    data = json.loads(path.read_text())
    data["shape_hash"] = "0" * 16
    path.write_text(json.dumps(data))
    with pytest.raises(SchemaError):
        load_checkpoint(path)


def test_object_keypoints_round_trip(tmp_path, rng):
    static = np.array([True, True, False, True])
    frame = np.broadcast_to(static, (3, 4)).copy()
    frame[1, 0] = False
    obj = ObjectKeypointSeq(rng.uniform(0, 100, (3, 4, 2)), static, frame)
    path = tmp_path / "obj.json"
    save_object_keypoints(obj, path)
    loaded = load_object_keypoints(path)
    assert np.array_equal(loaded.coords, obj.coords)
    assert np.array_equal(loaded.static_visibility, static)
    assert np.array_equal(loaded.frame_visibility, frame)


def test_byte_identical_writes(tmp_path, rng):
    seq = random_seq(rng, 3, 5)
    save_motion2d(seq, tmp_path / "a.json")
    save_motion2d(seq, tmp_path / "b.json")
    assert file_sha256(tmp_path / "a.json") == file_sha256(tmp_path / "b.json")


def test_missing_file_errors():
    with pytest.raises(SchemaError):
        load_motion2d("/nonexistent/q.json")
    with pytest.raises(SchemaError):
        load_obj_mesh("/nonexistent/q.obj")
    with pytest.raises(SchemaError):
        load_pgm_mask("/nonexistent/q.pgm")
