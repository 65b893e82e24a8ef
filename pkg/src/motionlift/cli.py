"""Command-line pipeline.

Subcommands: simulate | train-sv | train-mv | lift | reconstruct |
fit-object-mask | evaluate | default-config. Global flags: --config, --seed,
--out, --threads. Exit codes: 0 success, 2 schema error, 3 numerical failure,
4 under-constrained geometry.

Every command writes a run_manifest.json recording the config digest, seed,
input hashes, artifact paths, and wall time. Data artifacts are byte-identical
across reruns with the same config/seed/inputs; the manifest itself carries
timing and is excluded from that guarantee.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import pipeline, viz
from .camera import default_intrinsics
from .chamfer import fit_mask_sequence
from .config import Config, default_config_text
from .errors import NumericalError, SchemaError, UnderConstrainedError
from .fileio import (_dump_json, file_sha256, load_bundle, load_camera,
                     load_canonical_keypoints, load_checkpoint, load_motion2d,
                     load_motion3d, load_obj_mesh, load_pgm_mask,
                     save_checkpoint, save_motion3d, save_object_pose)
from .motion import Seq3D
from .objectpose import ObjectPose, fit_object_trajectory
from .training import AdamState
from .triangulate import triangulate_sequence


class _Manifest:
    def __init__(self, command: str, cfg: Config, seed: int, out_dir: str):
        self.data = {
            "version": 1,
            "kind": "run_manifest",
            "command": command,
            "config_digest": cfg.digest(),
            "seed": seed,
            "inputs": {},
            "artifacts": [],
            "wall_time_s": None,
        }
        self.out_dir = out_dir
        self.t0 = time.monotonic()

    def add_input(self, path):
        self.data["inputs"][str(path)] = file_sha256(path)

    def add_artifact(self, path):
        rel = os.path.relpath(path, self.out_dir)
        self.data["artifacts"].append(rel)

    def write(self):
        self.data["artifacts"] = sorted(self.data["artifacts"])
        self.data["wall_time_s"] = round(time.monotonic() - self.t0, 3)
        _dump_json(self.data, os.path.join(self.out_dir, "run_manifest.json"))


def _write_loss_csv(losses, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, l in enumerate(losses):
            writer.writerow([i, repr(float(l))])


def _cmd_simulate(args, cfg: Config, rng, manifest: _Manifest):
    out = manifest.out_dir
    info = pipeline.simulate_dataset(cfg, out, rng)
    for name in info["sequences"]:
        for suffix in (".2d.json", ".cam.json", ".3d.json"):
            manifest.add_artifact(os.path.join(out, name + suffix))
    manifest.add_artifact(os.path.join(out, "dataset.json"))
    print(f"simulate: wrote {len(info['sequences'])} sequences to {out}")


def _restore_or_fresh(args, cfg: Config, arch, seed: int, sched):
    ckpt_path = getattr(args, "resume", None)
    if ckpt_path:
        loaded = load_checkpoint(ckpt_path)
        params = loaded["params"]
        state = pipeline.TrainState(
            params=params,
            optimizer=loaded.get("optimizer", AdamState.for_params(params.weights)),
            rng=np.random.default_rng(seed),
            step=loaded["train_step"],
            losses=[],
        )
        if "rng_state" in loaded:
            state.rng.bit_generator.state = loaded["rng_state"]
        return state
    return pipeline.fresh_train_state(arch, seed)


def _finish_training(cfg, sched, state, kind, out, manifest):
    ckpt = os.path.join(out, "checkpoint.json")
    save_checkpoint(ckpt, state.params, sched, kind, train_step=state.step,
                    optimizer=state.optimizer,
                    rng_state=state.rng.bit_generator.state)
    loss_csv = os.path.join(out, "loss_curve.csv")
    loss_png = os.path.join(out, "loss_curve.png")
    _write_loss_csv(state.losses, loss_csv)
    viz.save_loss_curve_png(state.losses, loss_png, title=f"{kind} training loss")
    for p in (ckpt, loss_csv, loss_png):
        manifest.add_artifact(p)
    if state.losses:
        print(f"train-{kind}: {len(state.losses)} steps, "
              f"loss {state.losses[0]:.4f} -> {state.losses[-1]:.4f}")


def _cmd_train_sv(args, cfg: Config, rng, manifest: _Manifest):
    sequences, bank, _ = pipeline.load_dataset(args.dataset)
    manifest.add_input(os.path.join(args.dataset, "dataset.json"))
    sched = cfg.schedule()
    steps = args.steps if args.steps is not None else cfg["training.steps_sv"]
    state = _restore_or_fresh(args, cfg, pipeline.sv_arch(cfg, sequences[0].seq2d.K),
                              cfg["seed"], sched)
    state = pipeline.train_sv(cfg, sequences, bank, sched, steps, state)
    _finish_training(cfg, sched, state, "sv", manifest.out_dir, manifest)


def _cmd_train_mv(args, cfg: Config, rng, manifest: _Manifest):
    sequences, bank, _ = pipeline.load_dataset(args.dataset)
    manifest.add_input(os.path.join(args.dataset, "dataset.json"))
    sched = cfg.schedule()
    steps = args.steps if args.steps is not None else cfg["training.steps_mv"]
    state = _restore_or_fresh(args, cfg, pipeline.mv_arch(cfg, sequences[0].seq2d.K),
                              cfg["seed"], sched)
    state = pipeline.train_mv(cfg, sequences, sched, steps, state)
    _finish_training(cfg, sched, state, "mv", manifest.out_dir, manifest)


def _cmd_lift(args, cfg: Config, rng, manifest: _Manifest):
    seq, _ = load_motion2d(args.input)
    cam = load_camera(args.camera)
    loaded = load_checkpoint(args.checkpoint)
    for p in (args.input, args.camera, args.checkpoint):
        manifest.add_input(p)
    sched = loaded["schedule"]
    params = loaded["params"]
    out = manifest.out_dir
    if args.mode == "sds":
        if loaded["model"] != "sv":
            raise SchemaError("sds lifting needs a single-view checkpoint",
                              path=args.checkpoint, field="model")
        state, history = pipeline.lift_sds(cfg, seq, cam, params, sched, rng)
        seqs = [state.global_pixels(v) for v in range(state.V)]
        cams = state.cameras
        _write_loss_csv(history, os.path.join(out, "line_loss.csv"))
        manifest.add_artifact(os.path.join(out, "line_loss.csv"))
    else:
        if loaded["model"] != "mv":
            raise SchemaError("sampling needs a multi-view checkpoint",
                              path=args.checkpoint, field="model")
        seqs, cams = pipeline.lift_sample(cfg, seq, cam, params, sched, rng)
    bundle = pipeline.write_view_bundle(out, seqs, cams)
    views_png = os.path.join(out, "views.png")
    viz.save_views_png(seqs, views_png, cam.intrinsics.width,
                       cam.intrinsics.height)
    manifest.add_artifact(views_png)
    for v in range(len(seqs)):
        manifest.add_artifact(os.path.join(out, f"view_{v}.2d.json"))
        manifest.add_artifact(os.path.join(out, f"view_{v}.cam.json"))
    manifest.add_artifact(bundle)
    print(f"lift ({args.mode}): wrote {len(seqs)}-view bundle to {out}")


def _cmd_reconstruct(args, cfg: Config, rng, manifest: _Manifest):
    views, meta = load_bundle(args.bundle)
    manifest.add_input(args.bundle)
    out = manifest.out_dir
    tri_cfg = cfg.triangulation_config()
    rec, report = triangulate_sequence(views, tri_cfg)
    human_joints = meta.get("human_joints")
    residual_csv = os.path.join(out, "residuals.csv")
    with open(residual_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "joint", "valid", "n_obs", "residual_px"])
        T, J = report.valid.shape
        for t in range(T):
            for j in range(J):
                res = report.residual_px[t, j]
                writer.writerow([t, j, int(report.valid[t, j]),
                                 int(report.n_observations[t, j]),
                                 "" if np.isnan(res) else repr(float(res))])
    manifest.add_artifact(residual_csv)
    residual_png = os.path.join(out, "residuals.png")
    viz.save_residual_png(report.residual_px, residual_png)
    manifest.add_artifact(residual_png)

    if human_joints is not None and human_joints < rec.J:
        human = Seq3D(rec.coords[:, :human_joints])
        obj_q = Seq3D(rec.coords[:, human_joints:])
        save_motion3d(human, os.path.join(out, "human.3d.json"),
                      valid=report.valid[:, :human_joints])
        manifest.add_artifact(os.path.join(out, "human.3d.json"))
        if args.canonical is None:
            raise SchemaError("bundle carries object keypoints; "
                              "--canonical is required")
        canon = load_canonical_keypoints(args.canonical)
        manifest.add_input(args.canonical)
        vis = meta.get("object_static_visibility")
        pose, fit_report = fit_object_trajectory(
            obj_q, canon, visibility=vis, config=cfg.object_fit_config())
        save_object_pose(pose, os.path.join(out, "object_pose.json"))
        manifest.add_artifact(os.path.join(out, "object_pose.json"))
        fit_csv = os.path.join(out, "object_fit.csv")
        with open(fit_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "total", "fit", "smooth"])
            for i, (tot, fit, smooth) in enumerate(fit_report["history"]):
                writer.writerow([i, repr(float(tot)), repr(float(fit)),
                                 repr(float(smooth))])
        manifest.add_artifact(fit_csv)
        tracks = [(human, "human"), (obj_q, "object")]
        print(f"reconstruct: object fit residual {fit_report['final_fit']:.6f} m")
    else:
        save_motion3d(rec, os.path.join(out, "human.3d.json"),
                      valid=report.valid)
        manifest.add_artifact(os.path.join(out, "human.3d.json"))
        tracks = [(rec, "human")]
    topdown_png = os.path.join(out, "topdown.png")
    viz.save_topdown_png(tracks, topdown_png)
    manifest.add_artifact(topdown_png)
    n_bad = int((~report.valid).sum())
    print(f"reconstruct: mean residual "
          f"{report.mean_residual():.6f} px, {n_bad} under-constrained entries")


def _cmd_fit_object_mask(args, cfg: Config, rng, manifest: _Manifest):
    mesh = load_obj_mesh(args.mesh)
    manifest.add_input(args.mesh)
    masks = []
    for path in args.masks:
        masks.append(load_pgm_mask(path))
        manifest.add_input(path)
    first = masks[0]
    # fixed pinhole model: fx = fy = 1000, principal point at the image center
    intr = default_intrinsics(width=first.width, height=first.height)
    chamfer_cfg = cfg.chamfer_config()
    chamfer_cfg.threads = args.effective_threads
    rot6d, trans, losses = fit_mask_sequence(mesh, masks, intr, rng, chamfer_cfg)
    pose = ObjectPose(rot6d=rot6d, translation=trans, scale=1.0)
    out = manifest.out_dir
    save_object_pose(pose, os.path.join(out, "object_pose.json"))
    manifest.add_artifact(os.path.join(out, "object_pose.json"))
    loss_csv = os.path.join(out, "chamfer_loss.csv")
    with open(loss_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "chamfer"])
        for i, l in enumerate(losses):
            writer.writerow([i, repr(float(l))])
    manifest.add_artifact(loss_csv)
    loss_png = os.path.join(out, "chamfer_loss.png")
    viz.save_loss_curve_png(losses, loss_png, title="per-frame chamfer loss")
    manifest.add_artifact(loss_png)
    print(f"fit-object-mask: {len(masks)} frames, "
          f"final loss {losses[-1]:.3f}")


def _matched(pred_list, gt_list, what):
    if len(pred_list or []) != len(gt_list or []):
        raise SchemaError(f"{what}: prediction/target counts differ "
                          f"({len(pred_list or [])} vs {len(gt_list or [])})")
    return list(zip(pred_list or [], gt_list or []))


def _cmd_evaluate(args, cfg: Config, rng, manifest: _Manifest):
    pairs_2d, pairs_3d, pairs_obj = [], [], []
    for pred_path, gt_path in _matched(args.pred_2d, args.gt_2d, "2d"):
        manifest.add_input(pred_path)
        manifest.add_input(gt_path)
        name = os.path.basename(pred_path).split(".")[0]
        pairs_2d.append((name, load_motion2d(pred_path)[0],
                         load_motion2d(gt_path)[0]))
    for pred_path, gt_path in _matched(args.pred_3d, args.gt_3d, "3d"):
        manifest.add_input(pred_path)
        manifest.add_input(gt_path)
        name = os.path.basename(pred_path).split(".")[0]
        pairs_3d.append((name, load_motion3d(pred_path)[0],
                         load_motion3d(gt_path)[0]))
    for pred_path, gt_path in _matched(args.pred_object, args.gt_object,
                                       "object"):
        manifest.add_input(pred_path)
        manifest.add_input(gt_path)
        name = os.path.basename(pred_path).split(".")[0]
        pairs_obj.append((name, load_motion3d(pred_path)[0],
                          load_motion3d(gt_path)[0]))
    report = pipeline.evaluate_pairs(pairs_2d, pairs_3d, pairs_obj,
                                     foot_height=cfg["metrics.foot_height"])
    out = manifest.out_dir
    report.write_csv(os.path.join(out, "metrics.csv"))
    report.write_json(os.path.join(out, "metrics.json"))
    viz.save_metrics_png(report, os.path.join(out, "metrics.png"))
    for name in ("metrics.csv", "metrics.json", "metrics.png"):
        manifest.add_artifact(os.path.join(out, name))
    agg = report.aggregate
    parts = [f"{f}={getattr(agg, f):.4g}" for f in
             ("j2d", "j2d_centered", "t_root", "mpjpe", "pa_mpjpe", "fs",
              "t_o_root", "o_mpjpe") if getattr(agg, f) is not None]
    print("evaluate:", ", ".join(parts) if parts else "(empty)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionlift",
        description="Camera-conditioned 2D motion diffusion and 3D lifting")
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int,
                        help="worker threads (default from config; 1 = "
                             "sequential, the reproducibility baseline)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("default-config", help="print the default config and exit")

    sub.add_parser("simulate", help="generate a synthetic dataset")

    for kind in ("sv", "mv"):
        p = sub.add_parser(f"train-{kind}",
                           help=f"train the {kind} denoiser on a dataset")
        p.add_argument("dataset", help="directory written by `simulate`")
        p.add_argument("--steps", type=int, default=None,
                       help="override the configured step count")
        p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("lift", help="synthesize multi-view 2D motion")
    p.add_argument("input", help="single-view motion JSON")
    p.add_argument("camera", help="camera JSON for the input view")
    p.add_argument("checkpoint", help="trained checkpoint")
    p.add_argument("--mode", choices=("sds", "sample"), default="sds",
                   help="stage-1 SDS optimization or stage-2 sampling")

    p = sub.add_parser("reconstruct", help="triangulate a multi-view bundle")
    p.add_argument("bundle", help="bundle JSON")
    p.add_argument("--canonical",
                   help="canonical object keypoints JSON (required when the "
                        "bundle carries object keypoints)")

    p = sub.add_parser("fit-object-mask",
                       help="recover object poses from segmentation masks")
    p.add_argument("mesh", help="triangulated OBJ mesh")
    p.add_argument("masks", nargs="+", help="ASCII PGM masks in frame order")

    p = sub.add_parser("evaluate", help="compute metrics for matched files")
    p.add_argument("--pred-2d", nargs="*", default=[])
    p.add_argument("--gt-2d", nargs="*", default=[])
    p.add_argument("--pred-3d", nargs="*", default=[])
    p.add_argument("--gt-3d", nargs="*", default=[])
    p.add_argument("--pred-object", nargs="*", default=[])
    p.add_argument("--gt-object", nargs="*", default=[])
    return parser


_HANDLERS = {
    "simulate": _cmd_simulate,
    "train-sv": _cmd_train_sv,
    "train-mv": _cmd_train_mv,
    "lift": _cmd_lift,
    "reconstruct": _cmd_reconstruct,
    "fit-object-mask": _cmd_fit_object_mask,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(default_config_text())
        return 0
    try:
        cfg = Config.load(args.config) if args.config else Config()
        seed = args.seed if args.seed is not None else cfg["seed"]
        args.effective_threads = args.threads if args.threads is not None \
            else cfg["threads"]
        os.makedirs(args.out, exist_ok=True)
        manifest = _Manifest(args.command, cfg, seed, args.out)
        rng = np.random.default_rng(seed)
        _HANDLERS[args.command](args, cfg, rng, manifest)
        manifest.write()
        return 0
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except UnderConstrainedError as e:
        print(f"under-constrained geometry: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
