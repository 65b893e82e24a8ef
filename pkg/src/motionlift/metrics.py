"""Evaluation metrics: 2D joint errors, 3D errors with/without Procrustes
alignment, root/object translation errors, and the foot-sliding score.

Units: 2D metrics in pixels, 3D metrics in millimeters (inputs are meters).
The foot-sliding score gates horizontal per-frame displacement by foot height
above the y = 0 ground plane, weighted by clamp(2 - 2^(h/H), 0, 1).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .motion import KeypointSeq2D, Seq3D, SkeletonSpec, hip_mean
from .objectpose import similarity_align

M_TO_MM = 1000.0
FOOT_HEIGHT_THRESHOLD = 0.05  # m

CSV_COLUMNS = ["name", "J2D", "J2D-C", "T_root", "MPJPE", "PA-MPJPE", "FS",
               "T_O_root", "O-MPJPE"]


def _check_same_shape(pred, gt):
    if pred.coords.shape != gt.coords.shape:
        raise ValueError(f"shape mismatch: pred {pred.coords.shape} vs "
                         f"gt {gt.coords.shape}")


def j2d(pred: KeypointSeq2D, gt: KeypointSeq2D) -> float:
    """Mean Euclidean per-joint pixel distance over mutually visible entries."""
    _check_same_shape(pred, gt)
    vis = pred.visibility & gt.visibility
    if not vis.any():
        raise ValueError("no mutually visible entries")
    d = np.linalg.norm(pred.coords - gt.coords, axis=-1)
    return float(d[vis].mean())


def j2d_centered(pred: KeypointSeq2D, gt: KeypointSeq2D, skel: SkeletonSpec,
                 center: tuple[float, float] = (500.0, 500.0)) -> float:
    """j2d after translating both sequences so the hip mean sits at `center`."""
    _check_same_shape(pred, gt)

    def recenter(seq: KeypointSeq2D) -> KeypointSeq2D:
        offset = hip_mean(seq.coords, skel)
        coords = seq.coords - offset[:, None, :] + np.asarray(center)
        return KeypointSeq2D(coords, seq.visibility)

    return j2d(recenter(pred), recenter(gt))


def mpjpe(pred: Seq3D, gt: Seq3D) -> float:
    """Mean per-joint position error in mm."""
    if pred.coords.shape != gt.coords.shape:
        raise ValueError("shape mismatch")
    d = np.linalg.norm(pred.coords - gt.coords, axis=-1)
    return float(d.mean() * M_TO_MM)


def pa_mpjpe(pred: Seq3D, gt: Seq3D) -> float:
    """mpjpe after one similarity transform fitted over the whole sequence.

    The transform is the least-squares (Umeyama) fit; since that optimizes
    squared error while mpjpe averages unsquared distances, the identity
    transform is kept whenever the fit does not reduce the metric, so
    pa_mpjpe <= mpjpe always holds.
    """
    if pred.coords.shape != gt.coords.shape:
        raise ValueError("shape mismatch")
    A = pred.coords.reshape(-1, 3)
    B = gt.coords.reshape(-1, 3)
    s, R, t = similarity_align(A, B)
    aligned = s * A @ R.T + t
    d = np.linalg.norm(aligned - B, axis=-1)
    plain = np.linalg.norm(A - B, axis=-1)
    return float(min(d.mean(), plain.mean()) * M_TO_MM)


def t_root(pred: Seq3D, gt: Seq3D, root: int | str = "centroid") -> float:
    """Mean root-trajectory error in mm.

    `root` is a joint index (human pelvis) or "centroid" (object keypoints).
    """
    if pred.coords.shape != gt.coords.shape:
        raise ValueError("shape mismatch")
    if root == "centroid":
        a = pred.coords.mean(axis=1)
        b = gt.coords.mean(axis=1)
    else:
        a = pred.coords[:, int(root)]
        b = gt.coords[:, int(root)]
    return float(np.linalg.norm(a - b, axis=-1).mean() * M_TO_MM)


def foot_sliding(pred: Seq3D, skel: SkeletonSpec,
                 height_threshold: float = FOOT_HEIGHT_THRESHOLD) -> float:
    """Horizontal foot drift near the ground, height-weighted.

    Per foot joint and frame transition: displacement in the x-z plane times
    clamp(2 - 2^(h/H), 0, 1), counted only when the foot height h < H.
    Averaged over all (T-1) * feet entries.
    """
    if not skel.foot_joints:
        raise ValueError("skeleton defines no foot joints")
    if pred.T < 2:
        return 0.0
    total = 0.0
    count = 0
    for f in skel.foot_joints:
        track = pred.coords[:, f]
        disp = np.linalg.norm(np.diff(track[:, [0, 2]], axis=0), axis=1)
        h = track[1:, 1]
        weight = np.clip(2.0 - np.power(2.0, h / height_threshold), 0.0, 1.0)
        contrib = np.where(h < height_threshold, disp * weight, 0.0)
        total += float(contrib.sum())
        count += len(contrib)
    return total / count


@dataclass
class SequenceMetrics:
    name: str
    j2d: float | None = None
    j2d_centered: float | None = None
    t_root: float | None = None
    mpjpe: float | None = None
    pa_mpjpe: float | None = None
    fs: float | None = None
    t_o_root: float | None = None
    o_mpjpe: float | None = None

    def validate(self):
        for key, val in asdict(self).items():
            if key != "name" and val is not None and val < 0:
                raise ValueError(f"{key} must be non-negative")
        if self.mpjpe is not None and self.pa_mpjpe is not None:
            if self.pa_mpjpe > self.mpjpe + 1e-6:
                raise ValueError("pa_mpjpe exceeds mpjpe")


METRIC_FIELDS = ["j2d", "j2d_centered", "t_root", "mpjpe", "pa_mpjpe", "fs",
                 "t_o_root", "o_mpjpe"]


@dataclass
class MetricsReport:
    sequences: list[SequenceMetrics]
    aggregate: SequenceMetrics = field(init=False)

    def __post_init__(self):
        for s in self.sequences:
            s.validate()
        agg = SequenceMetrics(name="aggregate")
        for f in METRIC_FIELDS:
            vals = [getattr(s, f) for s in self.sequences if getattr(s, f) is not None]
            if vals:
                setattr(agg, f, float(np.mean(vals)))
        self.aggregate = agg

    def rows(self) -> list[dict]:
        out = []
        for s in self.sequences + [self.aggregate]:
            row = {"name": s.name}
            for col, f in zip(CSV_COLUMNS[1:], METRIC_FIELDS):
                v = getattr(s, f)
                row[col] = "" if v is None else repr(float(v))
            out.append(row)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)

    def write_json(self, path):
        payload = {
            "version": 1,
            "kind": "metrics",
            "sequences": [asdict(s) for s in self.sequences],
            "aggregate": asdict(self.aggregate),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
