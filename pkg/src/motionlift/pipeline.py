"""Pipeline stages behind the CLI: dataset synthesis, training loops, lifting,
reconstruction, and evaluation. Every stage is a plain function driven by a
Config and an explicit RNG so runs are reproducible end to end.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .camera import (CameraIntrinsics, CameraTrajectory, default_intrinsics,
                     normalize_trajectory, to_canvas, from_canvas)
from .camsim import (CameraBank, epipole_bank, random_predefined_mode,
                     generate_predefined, ring_views, sample_training_camera)
from .config import Config
from .denoiser import (Conditioning, DenoiserArch, DenoiserParams, init_params)
from .errors import SchemaError
from .fileio import (load_camera, load_camera_bank, load_motion2d, load_motion3d,
                     save_bundle, save_camera, save_camera_bank, save_motion2d,
                     save_motion3d, _dump_json, _load_json, _need, _check_kind)
from .metrics import (MetricsReport, SequenceMetrics, foot_sliding, j2d,
                      j2d_centered, mpjpe, pa_mpjpe, t_root)
from .motion import (KeypointSeq2D, Seq3D, SkeletonSpec, decompose,
                     default_skeleton, hip_exclusion_mask, pack_decomposition,
                     packed_to_global, random_drop_mask)
from .schedule import NoiseSchedule
from .sds import (LiftConfig, inference_conditionings, lift_single_to_multi,
                  denoiser_as_lift_fn, reverse_sample_multiview)
from .synth import facing_camera, project_motion, subject_center, toy_motion
from .training import (AdamState, MultiViewBatchItem, TrainingBatch, TrainingItem,
                       adam_step, hybrid_source_draw, multiview_training_loss,
                       training_loss, VIDEO_GLOBAL)
from .camera import training_epipolar_lines

SKEL = default_skeleton()


# ---------------------------------------------------------------------------
# dataset synthesis


def simulate_dataset(cfg: Config, out_dir: str, rng: np.random.Generator) -> dict:
    """Generate paired (2D sequence, camera, 3D ground truth) fixtures plus a
    train/test-disjoint camera bank."""
    os.makedirs(out_dir, exist_ok=True)
    T = cfg["sim.frames"]
    size = cfg["sim.image_size"]
    intr = default_intrinsics(width=size, height=size)

    entries = {}
    train_names, test_names = [], []

    def bank_trajectory():
        # bank entries are subject-independent camera motion bases; pelvis
        # tracking only applies when a motion is reprojected through them
        mode = random_predefined_mode(rng)
        mode.track_pelvis = False
        return generate_predefined(mode, T, intrinsics=intr)

    for i in range(cfg["sim.bank_train"]):
        name = f"train_{i:03d}"
        entries[name] = bank_trajectory()
        train_names.append(name)
    for i in range(cfg["sim.bank_test"]):
        name = f"test_{i:03d}"
        entries[name] = bank_trajectory()
        test_names.append(name)
    bank = CameraBank(entries=entries, train=train_names, test=test_names)
    save_camera_bank(bank, os.path.join(out_dir, "bank"))

    names = []
    for i in range(cfg["sim.sequences"]):
        motion = toy_motion(T, rng)
        base = facing_camera(motion, SKEL, intrinsics=intr)
        rel_name = train_names[int(rng.integers(len(train_names)))]
        rel = normalize_trajectory(entries[rel_name])
        extr = [rel.extrinsics[t].compose_after(base.extrinsics[t])
                for t in range(T)]
        cam = CameraTrajectory(extr, intr)
        seq = project_motion(motion, cam)
        name = f"seq_{i:03d}"
        save_motion2d(seq, os.path.join(out_dir, f"{name}.2d.json"))
        save_camera(cam, os.path.join(out_dir, f"{name}.cam.json"))
        save_motion3d(motion, os.path.join(out_dir, f"{name}.3d.json"))
        names.append(name)

    manifest = {"version": 1, "kind": "dataset", "sequences": names,
                "bank": "bank", "frames": T, "image_size": size}
    _dump_json(manifest, os.path.join(out_dir, "dataset.json"))
    return manifest


@dataclass
class DatasetSequence:
    name: str
    seq2d: KeypointSeq2D
    camera: CameraTrajectory
    motion3d: Seq3D


def load_dataset(dataset_dir: str) -> tuple[list[DatasetSequence], CameraBank, dict]:
    mpath = os.path.join(dataset_dir, "dataset.json")
    manifest = _load_json(mpath)
    _check_kind(manifest, "dataset", mpath)
    sequences = []
    for name in _need(manifest, "sequences", mpath):
        seq, _ = load_motion2d(os.path.join(dataset_dir, f"{name}.2d.json"))
        cam = load_camera(os.path.join(dataset_dir, f"{name}.cam.json"))
        motion, _ = load_motion3d(os.path.join(dataset_dir, f"{name}.3d.json"))
        sequences.append(DatasetSequence(name, seq, cam, motion))
    bank = load_camera_bank(os.path.join(dataset_dir, manifest["bank"]))
    return sequences, bank, manifest


# ---------------------------------------------------------------------------
# training batch construction


def packed_canvas(seq: KeypointSeq2D, intr: CameraIntrinsics) -> np.ndarray:
    dec = decompose(seq, SKEL, intr.center)
    return to_canvas(pack_decomposition(dec, SKEL), intr)


def _lines_for(seq: KeypointSeq2D, intr: CameraIntrinsics,
               rng: np.random.Generator):
    """Training-time epipolar lines: a random epipole from the simulated bank
    through the sequence's keypoints."""
    bank = epipole_bank(intr)
    epi = bank[int(rng.integers(len(bank)))]
    return training_epipolar_lines(seq, epi)


def build_sv_item(data: DatasetSequence, cfg: Config, bank: CameraBank,
                  rng: np.random.Generator) -> TrainingItem:
    """One hybrid-source training item (2:1 video-global : reprojected-local)."""
    intr = data.camera.intrinsics
    K = data.seq2d.K
    source = hybrid_source_draw(rng, cfg["training.hybrid_global"],
                                cfg["training.hybrid_local"])
    if source == VIDEO_GLOBAL:
        seq = data.seq2d
        camera = data.camera
        mask = np.ones(K, dtype=bool)
    else:
        base = facing_camera(data.motion3d, SKEL, intrinsics=intr)
        # pelvis track expressed in the base camera's frame, where the sampled
        # relative motion starts from the identity
        pelvis_world = data.motion3d.coords[:, SKEL.pelvis, :]
        pelvis = Seq3D(np.stack([base.extrinsics[0].apply(p)
                                 for p in pelvis_world])[:, None, :])
        rel = sample_training_camera(bank, cfg["training.predefined_fraction"],
                                     data.seq2d.T, rng, subject_pelvis=pelvis)
        extr = [rel.extrinsics[t].compose_after(base.extrinsics[t])
                for t in range(data.seq2d.T)]
        camera = CameraTrajectory(extr, intr)
        seq = project_motion(data.motion3d, camera)
        mask = hip_exclusion_mask(SKEL, K)
    visibility = random_drop_mask(seq.visibility, cfg["training.drop_rate"], rng)
    cond = Conditioning(camera=camera, lines=_lines_for(seq, intr, rng), step=1)
    return TrainingItem(target=packed_canvas(seq, intr), source=source,
                        cond=cond, joint_mask=mask, visibility=visibility)


def build_sv_batch(sequences: list[DatasetSequence], cfg: Config,
                   bank: CameraBank, rng: np.random.Generator) -> TrainingBatch:
    items = []
    intr = sequences[0].camera.intrinsics
    for _ in range(cfg["training.batch_size"]):
        data = sequences[int(rng.integers(len(sequences)))]
        items.append(build_sv_item(data, cfg, bank, rng))
    return TrainingBatch(items=items, skeleton=SKEL, intrinsics=intr)


def build_mv_item(data: DatasetSequence, cfg: Config,
                  rng: np.random.Generator) -> MultiViewBatchItem:
    """V ring-view projections of one ground-truth motion."""
    intr = data.camera.intrinsics
    V = cfg["model.views"]
    center = subject_center(data.motion3d, SKEL)
    cams = [data.camera] + ring_views(data.camera, V, center)
    targets = []
    visibility = []
    for cam in cams:
        seq = project_motion(data.motion3d, cam)
        targets.append(packed_canvas(seq, intr))
        visibility.append(random_drop_mask(seq.visibility,
                                           cfg["training.drop_rate"], rng))
    input_seq = project_motion(data.motion3d, cams[0])
    conds = inference_conditionings(input_seq, cams)
    return MultiViewBatchItem(targets=targets, conds=conds, visibility=visibility)


def sv_arch(cfg: Config, joints: int = 17) -> DenoiserArch:
    return DenoiserArch(joints=joints, hidden=cfg["model.hidden"],
                        depth=cfg["model.depth"], kernel=cfg["model.kernel"],
                        step_embed=cfg["model.step_embed"], cross_view=False)


def mv_arch(cfg: Config, joints: int = 17) -> DenoiserArch:
    return DenoiserArch(joints=joints, hidden=cfg["model.hidden"],
                        depth=cfg["model.depth"], kernel=cfg["model.kernel"],
                        step_embed=cfg["model.step_embed"], cross_view=True)


@dataclass
class TrainState:
    params: DenoiserParams
    optimizer: AdamState
    rng: np.random.Generator
    step: int
    losses: list[float]


def train_sv(cfg: Config, sequences: list[DatasetSequence], bank: CameraBank,
             sched: NoiseSchedule, steps: int, state: TrainState) -> TrainState:
    """Single-view training loop (resumable: pass the restored state)."""
    for _ in range(steps):
        batch = build_sv_batch(sequences, cfg, bank, state.rng)
        loss, grads = training_loss(state.params, batch, sched, state.rng,
                                    line_weight=cfg["training.line_weight"])
        new_w, state.optimizer = adam_step(state.params.weights, grads,
                                           state.optimizer, lr=cfg["training.lr"])
        state.params = DenoiserParams(state.params.arch, new_w)
        state.losses.append(loss)
        state.step += 1
    return state


def train_mv(cfg: Config, sequences: list[DatasetSequence],
             sched: NoiseSchedule, steps: int, state: TrainState) -> TrainState:
    """Multi-view training loop over ring-view projections."""
    intr = sequences[0].camera.intrinsics
    # mv batches are V-times heavier per item; shrink the item count
    per_batch = max(1, cfg["training.batch_size"] // cfg["model.views"])
    for _ in range(steps):
        items = []
        for _ in range(per_batch):
            data = sequences[int(state.rng.integers(len(sequences)))]
            items.append(build_mv_item(data, cfg, state.rng))
        loss, grads = multiview_training_loss(state.params, items, sched,
                                              state.rng, intr)
        new_w, state.optimizer = adam_step(state.params.weights, grads,
                                           state.optimizer, lr=cfg["training.lr"])
        state.params = DenoiserParams(state.params.arch, new_w)
        state.losses.append(loss)
        state.step += 1
    return state


def fresh_train_state(arch: DenoiserArch, seed: int) -> TrainState:
    rng = np.random.default_rng(seed)
    params = init_params(arch, rng)
    return TrainState(params=params, optimizer=AdamState.for_params(params.weights),
                      rng=rng, step=0, losses=[])


# ---------------------------------------------------------------------------
# lifting


def lift_sds(cfg: Config, input_seq: KeypointSeq2D, input_cam: CameraTrajectory,
             params: DenoiserParams, sched: NoiseSchedule,
             rng: np.random.Generator):
    """Stage-1 lifting: SDS + line-loss optimization of the ring views."""
    lift_cfg = cfg.lift_config()
    denoise = denoiser_as_lift_fn(params, input_cam.intrinsics)
    return lift_single_to_multi(input_seq, input_cam, denoise, SKEL, lift_cfg,
                                sched, rng)


def lift_sample(cfg: Config, input_seq: KeypointSeq2D,
                input_cam: CameraTrajectory, params: DenoiserParams,
                sched: NoiseSchedule, rng: np.random.Generator
                ) -> tuple[list[KeypointSeq2D], list[CameraTrajectory]]:
    """Stage-2 lifting: multi-view reverse sampling with the input clamped."""
    intr = input_cam.intrinsics
    lift_cfg: LiftConfig = cfg.lift_config()
    cams = [input_cam] + ring_views(input_cam, lift_cfg.views,
                                    np.asarray(lift_cfg.subject_center),
                                    lift_cfg.ring_radius)
    conds = inference_conditionings(input_seq, cams)
    clamp = packed_canvas(input_seq, intr)
    xs = reverse_sample_multiview(params, conds, clamp.shape, sched, rng,
                                  clamp_view0=clamp, intr=intr)
    seqs = []
    for v, x in enumerate(xs):
        glob = from_canvas(packed_to_global(x, SKEL, (0.0, 0.0)), intr)
        vis = input_seq.visibility.copy() if v == 0 \
            else np.ones_like(input_seq.visibility)
        seqs.append(KeypointSeq2D(glob, vis))
    # view 0 equals the input exactly (clamped in packed space)
    seqs[0] = input_seq.copy()
    return seqs, cams


def write_view_bundle(out_dir: str, seqs: list[KeypointSeq2D],
                      cams: list[CameraTrajectory],
                      human_joints: int | None = None,
                      object_static_visibility=None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for v, (seq, cam) in enumerate(zip(seqs, cams)):
        mfile = f"view_{v}.2d.json"
        cfile = f"view_{v}.cam.json"
        save_motion2d(seq, os.path.join(out_dir, mfile),
                      human_joints=human_joints,
                      object_static_visibility=object_static_visibility)
        save_camera(cam, os.path.join(out_dir, cfile))
        files.append((mfile, cfile))
    bundle_path = os.path.join(out_dir, "bundle.json")
    save_bundle(bundle_path, files, human_joints=human_joints,
                object_static_visibility=object_static_visibility)
    return bundle_path


# ---------------------------------------------------------------------------
# evaluation


def evaluate_pairs(pairs_2d: list[tuple[str, KeypointSeq2D, KeypointSeq2D]],
                   pairs_3d: list[tuple[str, Seq3D, Seq3D]],
                   pairs_obj: list[tuple[str, Seq3D, Seq3D]],
                   skel: SkeletonSpec = SKEL,
                   foot_height: float = 0.05) -> MetricsReport:
    """Assemble per-sequence metrics from matched prediction/target pairs."""
    by_name: dict[str, SequenceMetrics] = {}

    def entry(name: str) -> SequenceMetrics:
        if name not in by_name:
            by_name[name] = SequenceMetrics(name=name)
        return by_name[name]

    for name, pred, gt in pairs_2d:
        e = entry(name)
        e.j2d = j2d(pred, gt)
        e.j2d_centered = j2d_centered(pred, gt, skel)
    for name, pred, gt in pairs_3d:
        e = entry(name)
        e.t_root = t_root(pred, gt, skel.pelvis)
        e.mpjpe = mpjpe(pred, gt)
        e.pa_mpjpe = pa_mpjpe(pred, gt)
        e.fs = foot_sliding(pred, skel, foot_height)
    for name, pred, gt in pairs_obj:
        e = entry(name)
        e.t_o_root = t_root(pred, gt, "centroid")
        e.o_mpjpe = mpjpe(pred, gt)
    if not by_name:
        raise SchemaError("nothing to evaluate")
    return MetricsReport([by_name[k] for k in sorted(by_name)])
