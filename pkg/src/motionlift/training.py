"""Training losses, hybrid batch construction, and the Adam optimizer.

Training targets are packed decompositions in canvas units: hip slots hold the
global root tracks, the remaining slots hold the center-aligned local pose.
Items tagged `reprojected_local` carry a hip-excluding joint mask, so the L1
term (and therefore the gradient) never touches their hip predictions; the
line-matching term applies to `video_global` items only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, lines_to_canvas
from .denoiser import (Conditioning, DenoiserParams, denoiser_backward,
                       denoiser_forward, multiview_denoiser_backward,
                       multiview_denoiser_forward, zero_like_params)
from .motion import SkeletonSpec, packed_to_global, packed_to_global_backward
from .schedule import NoiseSchedule, q_sample

VIDEO_GLOBAL = "video_global"
REPROJECTED_LOCAL = "reprojected_local"
SOURCES = (VIDEO_GLOBAL, REPROJECTED_LOCAL)

LAMBDA_LINE_DEFAULT = 0.1


@dataclass
class TrainingItem:
    target: np.ndarray       # (T, K, 2) packed decomposition, canvas units
    source: str              # one of SOURCES
    cond: Conditioning
    joint_mask: np.ndarray   # (K,) bool; hips False for reprojected_local
    visibility: np.ndarray   # (T, K) bool

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        self.joint_mask = np.asarray(self.joint_mask, dtype=bool)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.source not in SOURCES:
            raise ValueError(f"unknown source tag '{self.source}'")
        T, K, _ = self.target.shape
        if self.joint_mask.shape != (K,) or self.visibility.shape != (T, K):
            raise ValueError("mask/visibility shapes do not match the target")


@dataclass
class TrainingBatch:
    items: list[TrainingItem]
    skeleton: SkeletonSpec
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        if not self.items:
            raise ValueError("empty training batch")
        for item in self.items:
            if item.source == REPROJECTED_LOCAL:
                if item.joint_mask[self.skeleton.left_hip] or \
                        item.joint_mask[self.skeleton.right_hip]:
                    raise ValueError("reprojected_local items must mask the hip joints")


def _masked_l1(pred: np.ndarray, target: np.ndarray, mask2d: np.ndarray
               ) -> tuple[float, np.ndarray]:
    """Mean absolute error over unmasked coordinates, with its gradient."""
    diff = pred - target
    active = mask2d[..., None]
    count = max(1, int(active.sum()) * 2)
    loss = float(np.abs(np.where(active, diff, 0.0)).sum()) / count
    grad = np.where(active, np.sign(diff), 0.0) / count
    return loss, grad


def _line_term(pred: np.ndarray, item: TrainingItem, skel: SkeletonSpec,
               intr: CameraIntrinsics) -> tuple[float, np.ndarray]:
    """Mean canvas-space point-line distance of the recomposed global
    prediction against the item's epipolar lines, plus the gradient pulled
    back to the packed representation.

    Computed in canvas units and averaged over active entries so its scale is
    comparable to the L1 term regardless of image resolution.
    """
    lines_cv = lines_to_canvas(item.cond.lines, intr)    # (T, K, 3)
    valid = np.linalg.norm(lines_cv[..., :2], axis=-1) > 0.5
    active = valid & item.visibility
    count = int(active.sum())
    if count == 0:
        return 0.0, np.zeros_like(pred)
    # Canvas coordinates put the decomposition center at 0.
    glob = packed_to_global(pred, skel, center=(0.0, 0.0))
    r = (lines_cv[..., 0] * glob[..., 0] + lines_cv[..., 1] * glob[..., 1]
         + lines_cv[..., 2])
    r = np.where(active, r, 0.0)
    loss = float(np.abs(r).sum()) / count
    gglob = np.zeros_like(glob)
    s = np.sign(r) / count
    gglob[..., 0] = s * lines_cv[..., 0]
    gglob[..., 1] = s * lines_cv[..., 1]
    return loss, packed_to_global_backward(gglob, skel)


def item_loss_and_grad(pred: np.ndarray, item: TrainingItem, skel: SkeletonSpec,
                       intr: CameraIntrinsics,
                       line_weight: float = LAMBDA_LINE_DEFAULT
                       ) -> tuple[float, np.ndarray]:
    """Loss of one prediction and its gradient w.r.t. the prediction.

    Hip entries of the gradient are exactly zero for reprojected_local items:
    the L1 mask excludes them and the line term does not apply.
    """
    mask2d = item.joint_mask[None, :] & item.visibility
    loss, dpred = _masked_l1(pred, item.target, mask2d)
    if item.source == VIDEO_GLOBAL and line_weight > 0:
        lloss, dline = _line_term(pred, item, skel, intr)
        loss += line_weight * lloss
        dpred = dpred + line_weight * dline
    return loss, dpred


def training_loss(params: DenoiserParams, batch: TrainingBatch, sched: NoiseSchedule,
                  rng: np.random.Generator,
                  line_weight: float = LAMBDA_LINE_DEFAULT
                  ) -> tuple[float, dict[str, np.ndarray]]:
    """One stochastic evaluation of the hybrid training objective.

    Per item: draw a step n and noise, form X_n, predict x0, and accumulate
    the visibility/joint-masked L1 plus (for video_global items) the line
    term. Returns the batch-mean loss and parameter gradients.
    """
    grads = zero_like_params(params)
    total = 0.0
    B = len(batch.items)
    for item in batch.items:
        n = int(rng.integers(1, sched.N + 1))
        eps = rng.standard_normal(item.target.shape)
        xn = q_sample(item.target, n, eps, sched)
        pred, cache = denoiser_forward(params, xn, item.cond.at_step(n),
                                       batch.intrinsics)
        loss, dpred = item_loss_and_grad(pred, item, batch.skeleton,
                                         batch.intrinsics, line_weight)
        g, _ = denoiser_backward(params, cache, dpred)
        for k in grads:
            grads[k] += g[k]
        total += loss
    for k in grads:
        grads[k] /= B
    return total / B, grads


@dataclass
class MultiViewBatchItem:
    """One multi-view training example: V aligned views of the same motion."""

    targets: list[np.ndarray]        # V arrays (T, K, 2), canvas packed
    conds: list[Conditioning]
    visibility: list[np.ndarray]     # V arrays (T, K) bool

    def __post_init__(self):
        if not (len(self.targets) == len(self.conds) == len(self.visibility)):
            raise ValueError("per-view lists must have equal length")


def multiview_training_loss(params: DenoiserParams, items: list[MultiViewBatchItem],
                            sched: NoiseSchedule, rng: np.random.Generator,
                            intr: CameraIntrinsics
                            ) -> tuple[float, dict[str, np.ndarray]]:
    """Masked L1 over jointly denoised views (cross-view mixing active)."""
    if not items:
        raise ValueError("empty training batch")
    grads = zero_like_params(params)
    total = 0.0
    for item in items:
        n = int(rng.integers(1, sched.N + 1))
        xs = [q_sample(t, n, rng.standard_normal(t.shape), sched)
              for t in item.targets]
        conds = [c.at_step(n) for c in item.conds]
        preds, cache = multiview_denoiser_forward(params, xs, conds, intr)
        dpreds = []
        loss = 0.0
        for pred, target, vis in zip(preds, item.targets, item.visibility):
            l, g = _masked_l1(pred, target, vis)
            loss += l
            dpreds.append(g)
        loss /= len(preds)
        dpreds = [g / len(preds) for g in dpreds]
        g, _ = multiview_denoiser_backward(params, cache, dpreds)
        for k in grads:
            grads[k] += g[k]
        total += loss
    for k in grads:
        grads[k] /= len(items)
    return total / len(items), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @staticmethod
    def for_params(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(m={k: np.zeros_like(w) for k, w in params.items()},
                         v={k: np.zeros_like(w) for k, w in params.items()},
                         step=0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update; returns new parameter and state dicts."""
    if set(params) != set(grads):
        raise ValueError("parameter and gradient names differ")
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    t = state.step + 1
    for k, w in params.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape mismatch for '{k}'")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[k] = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(m=new_m, v=new_v, step=t)


def hybrid_source_draw(rng: np.random.Generator, global_weight: int = 2,
                       local_weight: int = 1) -> str:
    """Sample the data-source tag at the configured ratio (default 2:1)."""
    p = global_weight / (global_weight + local_weight)
    return VIDEO_GLOBAL if rng.random() < p else REPROJECTED_LOCAL
