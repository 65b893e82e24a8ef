"""File schemas: motion/camera/bundle/object JSON, OBJ meshes, PGM masks,
checkpoints, and the camera bank layout.

All JSON is written with sorted keys and float64 repr round-tripping, so a
save -> load cycle reproduces in-memory values exactly and identical runs
produce byte-identical files. Schema violations raise SchemaError naming the
offending file and field.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict

import numpy as np

from .camera import (CameraExtrinsic, CameraIntrinsics, CameraTrajectory)
from .camsim import CameraBank
from .chamfer import MaskImage, TriMesh
from .denoiser import DenoiserArch, DenoiserParams
from .errors import SchemaError
from .motion import KeypointSeq2D, ObjectKeypointSeq, Seq3D
from .objectpose import CanonicalKeypoints, ObjectPose
from .schedule import NoiseSchedule, make_schedule
from .training import AdamState


def _need(obj: dict, field: str, path: str):
    if field not in obj:
        raise SchemaError("missing field", path=path, field=field)
    return obj[field]


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise SchemaError("file not found", path=str(path))
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON ({e})", path=str(path))
    if not isinstance(data, dict):
        raise SchemaError("top level must be an object", path=str(path))
    return data


def _dump_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _check_kind(data: dict, kind: str, path: str):
    if data.get("kind") != kind:
        raise SchemaError(f"expected kind '{kind}', got '{data.get('kind')}'",
                          path=path, field="kind")
    if data.get("version") != 1:
        raise SchemaError(f"unsupported version {data.get('version')}",
                          path=path, field="version")


def _as_array(value, shape: tuple, path: str, field: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise SchemaError(f"expected shape {shape}, got {arr.shape}",
                          path=path, field=field)
    if not np.all(np.isfinite(arr)):
        raise SchemaError("non-finite values", path=path, field=field)
    return arr


# ---------------------------------------------------------------------------
# 2D motion


def save_motion2d(seq: KeypointSeq2D, path, fps: float = 30.0,
                  human_joints: int | None = None,
                  object_static_visibility: np.ndarray | None = None) -> None:
    payload = {
        "version": 1,
        "kind": "motion2d",
        "fps": float(fps),
        "T": seq.T,
        "K": seq.K,
        "coords": seq.coords.tolist(),
        "visibility": seq.visibility.tolist(),
    }
    if human_joints is not None:
        payload["human_joints"] = int(human_joints)
    if object_static_visibility is not None:
        payload["object_static_visibility"] = \
            np.asarray(object_static_visibility, dtype=bool).tolist()
    _dump_json(payload, path)


def load_motion2d(path) -> tuple[KeypointSeq2D, dict]:
    """Returns the sequence and a metadata dict (fps, human_joints, ...)."""
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "motion2d", p)
    T = int(_need(data, "T", p))
    K = int(_need(data, "K", p))
    coords = _as_array(_need(data, "coords", p), (T, K, 2), p, "coords")
    vis = np.asarray(_need(data, "visibility", p), dtype=bool)
    if vis.shape != (T, K):
        raise SchemaError(f"expected shape {(T, K)}, got {vis.shape}", p, "visibility")
    meta = {"fps": float(_need(data, "fps", p))}
    if "human_joints" in data:
        meta["human_joints"] = int(data["human_joints"])
    if "object_static_visibility" in data:
        meta["object_static_visibility"] = np.asarray(
            data["object_static_visibility"], dtype=bool)
    return KeypointSeq2D(coords, vis), meta


# ---------------------------------------------------------------------------
# 3D motion


def save_motion3d(seq: Seq3D, path, fps: float = 30.0,
                  valid: np.ndarray | None = None) -> None:
    payload = {
        "version": 1,
        "kind": "motion3d",
        "fps": float(fps),
        "T": seq.T,
        "J": seq.J,
        "coords": seq.coords.tolist(),
    }
    if valid is not None:
        payload["valid"] = np.asarray(valid, dtype=bool).tolist()
    _dump_json(payload, path)


def load_motion3d(path) -> tuple[Seq3D, np.ndarray | None]:
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "motion3d", p)
    T = int(_need(data, "T", p))
    J = int(_need(data, "J", p))
    coords = _as_array(_need(data, "coords", p), (T, J, 3), p, "coords")
    valid = None
    if "valid" in data:
        valid = np.asarray(data["valid"], dtype=bool)
        if valid.shape != (T, J):
            raise SchemaError(f"expected shape {(T, J)}", p, "valid")
    return Seq3D(coords), valid


# ---------------------------------------------------------------------------
# cameras


def save_camera(traj: CameraTrajectory, path) -> None:
    intr = traj.intrinsics
    frames = [e.matrix34().reshape(-1).tolist() for e in traj.extrinsics]
    payload = {
        "version": 1,
        "kind": "camera",
        "intrinsics": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                       "width": intr.width, "height": intr.height},
        "frames": frames,
    }
    _dump_json(payload, path)


def load_camera(path) -> CameraTrajectory:
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "camera", p)
    idata = _need(data, "intrinsics", p)
    for f in ("fx", "fy", "cx", "cy", "width", "height"):
        _need(idata, f, p)
    intr = CameraIntrinsics(fx=float(idata["fx"]), fy=float(idata["fy"]),
                            cx=float(idata["cx"]), cy=float(idata["cy"]),
                            width=int(idata["width"]), height=int(idata["height"]))
    frames = _need(data, "frames", p)
    if not frames:
        raise SchemaError("camera needs at least one frame", p, "frames")
    extr = []
    for i, row in enumerate(frames):
        mat = _as_array(row, (12,), p, f"frames[{i}]").reshape(3, 4)
        try:
            extr.append(CameraExtrinsic(mat[:, :3], mat[:, 3]))
        except ValueError as e:
            raise SchemaError(str(e), p, f"frames[{i}]")
    return CameraTrajectory(extr, intr)


# ---------------------------------------------------------------------------
# multi-view bundle


def save_bundle(path, view_files: list[tuple[str, str]],
                human_joints: int | None = None,
                object_static_visibility: np.ndarray | None = None) -> None:
    """Bundle references per-view (motion, camera) files relative to itself."""
    payload = {
        "version": 1,
        "kind": "bundle",
        "views": [{"motion": m, "camera": c} for m, c in view_files],
        "human_joints": None if human_joints is None else int(human_joints),
        "object_static_visibility": None if object_static_visibility is None
        else np.asarray(object_static_visibility, dtype=bool).tolist(),
    }
    _dump_json(payload, path)


def load_bundle(path) -> tuple[list[tuple[KeypointSeq2D, CameraTrajectory]], dict]:
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "bundle", p)
    views_field = _need(data, "views", p)
    if not views_field:
        raise SchemaError("bundle has no views", p, "views")
    base = os.path.dirname(os.path.abspath(p))
    views = []
    for i, entry in enumerate(views_field):
        m = _need(entry, "motion", p)
        c = _need(entry, "camera", p)
        seq, _ = load_motion2d(os.path.join(base, m))
        cam = load_camera(os.path.join(base, c))
        if cam.T != seq.T:
            raise SchemaError("camera/motion frame counts differ", p, f"views[{i}]")
        views.append((seq, cam))
    meta = {}
    if data.get("human_joints") is not None:
        meta["human_joints"] = int(data["human_joints"])
    if data.get("object_static_visibility") is not None:
        meta["object_static_visibility"] = np.asarray(
            data["object_static_visibility"], dtype=bool)
    return views, meta


# ---------------------------------------------------------------------------
# object pose + canonical keypoints


def save_object_pose(pose: ObjectPose, path) -> None:
    payload = {
        "version": 1,
        "kind": "objectpose",
        "T": pose.T,
        "scale": pose.scale,
        "rot6d": pose.rot6d.tolist(),
        "translation": pose.translation.tolist(),
    }
    _dump_json(payload, path)


def load_object_pose(path) -> ObjectPose:
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "objectpose", p)
    T = int(_need(data, "T", p))
    rot6d = _as_array(_need(data, "rot6d", p), (T, 6), p, "rot6d")
    trans = _as_array(_need(data, "translation", p), (T, 3), p, "translation")
    scale = float(_need(data, "scale", p))
    if scale <= 0:
        raise SchemaError("scale must be positive", p, "scale")
    return ObjectPose(rot6d=rot6d, translation=trans, scale=scale)


def save_canonical_keypoints(canon: CanonicalKeypoints, path) -> None:
    payload = {
        "version": 1,
        "kind": "canonical_keypoints",
        "points": canon.points.tolist(),
        "reference_pair": list(canon.reference_pair),
    }
    _dump_json(payload, path)


def load_canonical_keypoints(path) -> CanonicalKeypoints:
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "canonical_keypoints", p)
    pts = np.asarray(_need(data, "points", p), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise SchemaError("points must be (M, 3)", p, "points")
    pair = _need(data, "reference_pair", p)
    try:
        return CanonicalKeypoints(pts, (int(pair[0]), int(pair[1])))
    except (ValueError, IndexError, TypeError) as e:
        raise SchemaError(str(e), p, "reference_pair")


# ---------------------------------------------------------------------------
# meshes (triangulated OBJ subset: v and f lines)


def load_obj_mesh(path) -> TriMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    try:
        fh = open(path)
    except FileNotFoundError:
        raise SchemaError("file not found", path=str(path))
    with fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise SchemaError(f"line {ln}: vertex needs 3 coordinates",
                                      path=str(path), field="v")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise SchemaError(f"line {ln}: only triangles supported",
                                      path=str(path), field="f")
                idx = []
                for tok in parts[1:]:
                    vi = tok.split("/")[0]
                    idx.append(int(vi) - 1)
                faces.append(idx)
            # other OBJ records (vn, vt, o, g, usemtl, s) are ignored
    if not verts or not faces:
        raise SchemaError("mesh needs v and f records", path=str(path))
    try:
        return TriMesh(np.array(verts), np.array(faces))
    except ValueError as e:
        raise SchemaError(str(e), path=str(path))


def save_obj_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# masks (ASCII PGM, P2)


def load_pgm_mask(path) -> MaskImage:
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise SchemaError("file not found", path=str(path))
    tokens = []
    for line in text.splitlines():
        hash_pos = line.find("#")
        if hash_pos >= 0:
            line = line[:hash_pos]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise SchemaError("expected ASCII PGM magic 'P2'", path=str(path),
                          field="magic")
    if len(tokens) < 4:
        raise SchemaError("truncated PGM header", path=str(path))
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        values = [int(t) for t in tokens[4:]]
    except ValueError:
        raise SchemaError("non-integer PGM data", path=str(path))
    if w <= 0 or h <= 0 or maxval <= 0:
        raise SchemaError("invalid PGM dimensions", path=str(path))
    if len(values) != w * h:
        raise SchemaError(f"expected {w * h} pixels, got {len(values)}",
                          path=str(path), field="pixels")
    grid = np.array(values).reshape(h, w) > maxval / 2
    return MaskImage(grid)


def save_pgm_mask(mask: MaskImage, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"P2\n{mask.width} {mask.height}\n255\n")
        for row in mask.grid:
            fh.write(" ".join("255" if v else "0" for v in row))
            fh.write("\n")


# ---------------------------------------------------------------------------
# camera bank (directory of camera files + split manifest)


def save_camera_bank(bank: CameraBank, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, traj in bank.entries.items():
        save_camera(traj, os.path.join(directory, f"{name}.json"))
    manifest = {"version": 1, "kind": "camera_bank",
                "train": sorted(bank.train), "test": sorted(bank.test)}
    _dump_json(manifest, os.path.join(directory, "manifest.json"))


def load_camera_bank(directory) -> CameraBank:
    mpath = os.path.join(directory, "manifest.json")
    data = _load_json(mpath)
    _check_kind(data, "camera_bank", mpath)
    train = list(_need(data, "train", mpath))
    test = list(_need(data, "test", mpath))
    entries = {}
    for name in train + test:
        entries[name] = load_camera(os.path.join(directory, f"{name}.json"))
    return CameraBank(entries=entries, train=train, test=test)


# ---------------------------------------------------------------------------
# checkpoints


def _shape_hash(weights: dict[str, np.ndarray]) -> str:
    desc = ";".join(f"{k}:{','.join(map(str, weights[k].shape))}"
                    for k in sorted(weights))
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def save_checkpoint(path, params: DenoiserParams, sched: NoiseSchedule,
                    model_kind: str, train_step: int = 0,
                    optimizer: AdamState | None = None,
                    rng_state: dict | None = None) -> None:
    payload = {
        "version": 1,
        "kind": "checkpoint",
        "model": model_kind,
        "arch": asdict(params.arch),
        "schedule": {"N": sched.N, "beta_start": float(sched.beta[0]),
                     "beta_end": float(sched.beta[-1])},
        "weights": {k: v.reshape(-1).tolist() for k, v in params.weights.items()},
        "shapes": {k: list(v.shape) for k, v in params.weights.items()},
        "shape_hash": _shape_hash(params.weights),
        "train_step": int(train_step),
    }
    if optimizer is not None:
        payload["optimizer"] = {
            "m": {k: v.reshape(-1).tolist() for k, v in optimizer.m.items()},
            "v": {k: v.reshape(-1).tolist() for k, v in optimizer.v.items()},
            "step": optimizer.step,
        }
    if rng_state is not None:
        payload["rng_state"] = json.loads(json.dumps(rng_state, default=int))
    _dump_json(payload, path)


def load_checkpoint(path) -> dict:
    """Returns {params, schedule, model, train_step, optimizer?, rng_state?}."""
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "checkpoint", p)
    arch = DenoiserArch(**{k: (tuple(v) if isinstance(v, list) else v)
                           for k, v in _need(data, "arch", p).items()})
    shapes = _need(data, "shapes", p)
    raw = _need(data, "weights", p)
    weights = {}
    for name, shape in shapes.items():
        flat = np.asarray(_need(raw, name, p), dtype=np.float64)
        expect = int(np.prod(shape))
        if flat.size != expect:
            raise SchemaError(f"weight '{name}' has {flat.size} values, "
                              f"expected {expect}", p, name)
        weights[name] = flat.reshape(shape)
    if _shape_hash(weights) != _need(data, "shape_hash", p):
        raise SchemaError("shape hash mismatch", p, "shape_hash")
    try:
        params = DenoiserParams(arch, weights)
    except ValueError as e:
        raise SchemaError(str(e), p, "weights")
    sched_info = _need(data, "schedule", p)
    sched = make_schedule(int(sched_info["N"]), float(sched_info["beta_start"]),
                          float(sched_info["beta_end"]))
    out = {
        "params": params,
        "schedule": sched,
        "model": _need(data, "model", p),
        "train_step": int(data.get("train_step", 0)),
    }
    if "optimizer" in data:
        opt = data["optimizer"]
        out["optimizer"] = AdamState(
            m={k: np.asarray(v, dtype=np.float64).reshape(weights[k].shape)
               for k, v in opt["m"].items()},
            v={k: np.asarray(v, dtype=np.float64).reshape(weights[k].shape)
               for k, v in opt["v"].items()},
            step=int(opt["step"]),
        )
    if "rng_state" in data:
        out["rng_state"] = data["rng_state"]
    return out


# ---------------------------------------------------------------------------
# object keypoint sequences


def save_object_keypoints(obj: ObjectKeypointSeq, path, fps: float = 30.0) -> None:
    payload = {
        "version": 1,
        "kind": "object2d",
        "fps": float(fps),
        "T": obj.T,
        "M": obj.M,
        "coords": obj.coords.tolist(),
        "static_visibility": obj.static_visibility.tolist(),
        "frame_visibility": obj.frame_visibility.tolist(),
    }
    _dump_json(payload, path)


def load_object_keypoints(path) -> ObjectKeypointSeq:
    data = _load_json(path)
    p = str(path)
    _check_kind(data, "object2d", p)
    T = int(_need(data, "T", p))
    M = int(_need(data, "M", p))
    coords = _as_array(_need(data, "coords", p), (T, M, 2), p, "coords")
    static = np.asarray(_need(data, "static_visibility", p), dtype=bool)
    frame = np.asarray(_need(data, "frame_visibility", p), dtype=bool)
    if static.shape != (M,):
        raise SchemaError(f"expected shape ({M},)", p, "static_visibility")
    if frame.shape != (T, M):
        raise SchemaError(f"expected shape ({T}, {M})", p, "frame_visibility")
    try:
        return ObjectKeypointSeq(coords, static, frame)
    except ValueError as e:
        raise SchemaError(str(e), p, "frame_visibility")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
