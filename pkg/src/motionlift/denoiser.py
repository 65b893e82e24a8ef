"""Compact x0-predicting conditional denoiser with hand-written backprop.

Per frame, the noisy keypoints, a 12-number camera pose, the per-keypoint
epipolar lines, and a sinusoidal step embedding are concatenated and encoded
to a hidden vector; a stack of residual temporal convolutions mixes
information across frames; a linear head emits the clean-sample estimate.
The multi-view variant adds residual cross-view attention (each view attends
to the other views of the same frame) between the trunk and the head.

Everything is float64 numpy. Backward passes are exact reverse-mode and are
validated against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import (CameraIntrinsics, CameraTrajectory, EpipolarLineSet,
                     lines_to_canvas, normalize_trajectory)

CAMERA_FEATURE_DIM = 12  # row-major [R | t] per frame


@dataclass
class Conditioning:
    """Per-view conditioning: camera trajectory, epipolar lines, diffusion step."""

    camera: CameraTrajectory
    lines: EpipolarLineSet
    step: int = 1

    def __post_init__(self):
        if self.camera.T != self.lines.T:
            raise ValueError(f"camera T={self.camera.T} and lines T={self.lines.T} differ")

    @property
    def T(self) -> int:
        return self.camera.T

    def at_step(self, n: int) -> "Conditioning":
        return replace(self, step=n)


def camera_features(traj: CameraTrajectory) -> np.ndarray:
    """Per-frame 12-vector: rows of [R | t] after trajectory normalization."""
    norm = normalize_trajectory(traj)
    feats = np.empty((norm.T, CAMERA_FEATURE_DIM), dtype=np.float64)
    for t, ext in enumerate(norm.extrinsics):
        feats[t] = ext.matrix34().reshape(-1)
    return feats


def step_embedding(n: int, dim: int) -> np.ndarray:
    """Standard sinusoidal embedding of the diffusion step index."""
    if dim % 2 != 0:
        raise ValueError("step embedding dimension must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = n * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


@dataclass(frozen=True)
class DenoiserArch:
    """Shape description of the compact denoiser."""

    joints: int
    hidden: int = 64
    depth: int = 2
    kernel: int = 3           # temporal window, odd
    step_embed: int = 32
    cross_view: bool = False
    attn_dim: int | None = None  # cross-view attention width, defaults to hidden

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("temporal kernel must be odd")

    @property
    def in_dim(self) -> int:
        # noisy keypoints 2K + camera 12 + lines 3K + step embedding
        return 5 * self.joints + CAMERA_FEATURE_DIM + self.step_embed

    @property
    def out_dim(self) -> int:
        return 2 * self.joints

    @property
    def attn(self) -> int:
        return self.hidden if self.attn_dim is None else self.attn_dim


def param_shapes(arch: DenoiserArch) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "enc_w": (arch.in_dim, arch.hidden),
        "enc_b": (arch.hidden,),
    }
    for d in range(arch.depth):
        shapes[f"conv{d}_w"] = (arch.kernel, arch.hidden, arch.hidden)
        shapes[f"conv{d}_b"] = (arch.hidden,)
    shapes["head_w"] = (arch.hidden, arch.out_dim)
    shapes["head_b"] = (arch.out_dim,)
    if arch.cross_view:
        a = arch.attn
        shapes["xview_wq"] = (arch.hidden, a)
        shapes["xview_wk"] = (arch.hidden, a)
        shapes["xview_wv"] = (arch.hidden, a)
        shapes["xview_wo"] = (a, arch.hidden)
    return shapes


def param_count(arch: DenoiserArch) -> int:
    """Deterministic parameter count:
    in*H + H  (encoder)
    + D * (kw*H*H + H)  (temporal convolutions)
    + H*2K + 2K  (head)
    + 3*H*A + A*H  (cross-view attention, when enabled)."""
    return sum(int(np.prod(s)) for s in param_shapes(arch).values())


@dataclass
class DenoiserParams:
    arch: DenoiserArch
    weights: dict[str, np.ndarray]

    def __post_init__(self):
        expected = param_shapes(self.arch)
        if set(self.weights) != set(expected):
            raise ValueError(f"weight names {sorted(self.weights)} do not match "
                             f"architecture {sorted(expected)}")
        for name, shape in expected.items():
            w = np.asarray(self.weights[name], dtype=np.float64)
            if w.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"{name} contains non-finite values")
            self.weights[name] = w

    @property
    def count(self) -> int:
        return param_count(self.arch)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.arch, {k: v.copy() for k, v in self.weights.items()})


def init_params(arch: DenoiserArch, rng: np.random.Generator) -> DenoiserParams:
    """Fan-in-scaled Gaussian weights, zero biases."""
    weights: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith("_b"):
            weights[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            weights[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return DenoiserParams(arch, weights)


def zero_like_params(params: DenoiserParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.weights.items()}


def build_features(xn: np.ndarray, cond: Conditioning, arch: DenoiserArch,
                   intr: CameraIntrinsics) -> np.ndarray:
    """Assemble the per-frame input feature matrix, shape (T, in_dim)."""
    T, K, _ = xn.shape
    if K != arch.joints:
        raise ValueError(f"sequence has K={K} joints, architecture expects {arch.joints}")
    if cond.T != T:
        raise ValueError(f"conditioning T={cond.T} does not match sequence T={T}")
    cam = camera_features(cond.camera)                       # (T, 12)
    lns = lines_to_canvas(cond.lines, intr).reshape(T, 3 * K)  # (T, 3K)
    emb = np.broadcast_to(step_embedding(cond.step, arch.step_embed), (T, arch.step_embed))
    return np.concatenate([xn.reshape(T, 2 * K), cam, lns, emb], axis=1)


def _conv_time(h: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Temporal conv with zero padding: out[t] = sum_j h[t + j - r] @ w[j] + b."""
    T = h.shape[0]
    kw = w.shape[0]
    r = kw // 2
    out = np.broadcast_to(b, (T, w.shape[2])).copy()
    for j in range(kw):
        s = j - r
        lo, hi = max(0, -s), min(T, T - s)
        if lo < hi:
            out[lo:hi] += h[lo + s:hi + s] @ w[j]
    return out


def _conv_time_backward(h: np.ndarray, dout: np.ndarray, w: np.ndarray
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of `_conv_time` w.r.t. (w, b, h)."""
    T = h.shape[0]
    kw = w.shape[0]
    r = kw // 2
    dw = np.zeros_like(w)
    dh = np.zeros_like(h)
    for j in range(kw):
        s = j - r
        lo, hi = max(0, -s), min(T, T - s)
        if lo < hi:
            dw[j] = h[lo + s:hi + s].T @ dout[lo:hi]
            dh[lo + s:hi + s] += dout[lo:hi] @ w[j].T
    db = dout.sum(axis=0)
    return dw, db, dh


def _trunk_forward(params: DenoiserParams, xn: np.ndarray, cond: Conditioning,
                   intr: CameraIntrinsics) -> tuple[np.ndarray, dict]:
    """Encoder + temporal stack; returns the final hidden state and a cache."""
    w = params.weights
    arch = params.arch
    feat = build_features(xn, cond, arch, intr)
    z0 = feat @ w["enc_w"] + w["enc_b"]
    h = np.tanh(z0)
    hs = [h]
    cs = []
    for d in range(arch.depth):
        c = _conv_time(h, w[f"conv{d}_w"], w[f"conv{d}_b"])
        h = h + np.tanh(c)
        cs.append(c)
        hs.append(h)
    cache = {"feat": feat, "z0": z0, "hs": hs, "cs": cs}
    return h, cache


def _trunk_backward(params: DenoiserParams, cache: dict, dh: np.ndarray,
                    grads: dict[str, np.ndarray]) -> np.ndarray:
    """Backprop through the trunk; accumulates into `grads`, returns d(xn)."""
    w = params.weights
    arch = params.arch
    for d in range(arch.depth - 1, -1, -1):
        c = cache["cs"][d]
        h_in = cache["hs"][d]
        dc = dh * (1.0 - np.tanh(c) ** 2)
        dw, db, dh_conv = _conv_time_backward(h_in, dc, w[f"conv{d}_w"])
        grads[f"conv{d}_w"] += dw
        grads[f"conv{d}_b"] += db
        dh = dh + dh_conv
    dz0 = dh * (1.0 - np.tanh(cache["z0"]) ** 2)
    grads["enc_w"] += cache["feat"].T @ dz0
    grads["enc_b"] += dz0.sum(axis=0)
    dfeat = dz0 @ w["enc_w"].T
    T = dfeat.shape[0]
    K = arch.joints
    return dfeat[:, :2 * K].reshape(T, K, 2)


def denoiser_forward(params: DenoiserParams, xn: np.ndarray, cond: Conditioning,
                     intr: CameraIntrinsics | None = None
                     ) -> tuple[np.ndarray, dict]:
    """Predict x0 from a noisy sequence; returns (prediction, cache)."""
    if intr is None:
        intr = cond.camera.intrinsics
    xn = np.asarray(xn, dtype=np.float64)
    h, cache = _trunk_forward(params, xn, cond, intr)
    w = params.weights
    y = h @ w["head_w"] + w["head_b"]
    T = xn.shape[0]
    cache["h_final"] = h
    cache["params_id"] = id(params)
    cache["out_shape"] = (T, params.arch.joints, 2)
    return y.reshape(T, params.arch.joints, 2), cache


def denoiser_backward(params: DenoiserParams, cache: dict, grad_out: np.ndarray
                      ) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact reverse-mode gradients w.r.t. all weights and the noisy input."""
    if cache.get("params_id") != id(params):
        raise ValueError("stale cache: backward must use the forward's params")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache["out_shape"]:
        raise ValueError(f"grad shape {grad_out.shape} != output {cache['out_shape']}")
    w = params.weights
    grads = zero_like_params(params)
    T = grad_out.shape[0]
    dy = grad_out.reshape(T, -1)
    grads["head_w"] += cache["h_final"].T @ dy
    grads["head_b"] += dy.sum(axis=0)
    dh = dy @ w["head_w"].T
    dxn = _trunk_backward(params, cache, dh, grads)
    return grads, dxn


def _attention_forward(params: DenoiserParams, hs: list[np.ndarray]
                       ) -> tuple[list[np.ndarray], dict]:
    """Residual cross-view attention: each view attends to the other views.

    hs: V hidden states, each (T, H). With a single view there is nothing to
    attend to and the inputs pass through unchanged.
    """
    V = len(hs)
    w = params.weights
    a_dim = params.arch.attn
    scale = 1.0 / np.sqrt(a_dim)
    H = np.stack(hs, axis=0)                       # (V, T, Hdim)
    q = H @ w["xview_wq"]                          # (V, T, A)
    k = H @ w["xview_wk"]
    v = H @ w["xview_wv"]
    # logits[t, i, j] = q_i(t) . k_j(t), self masked out
    logits = np.einsum("ita,jta->tij", q, k) * scale  # (T, V, V)
    mask = np.eye(V, dtype=bool)[None, :, :]
    neg = np.where(mask, -np.inf, 0.0)
    attn = _masked_softmax(logits + neg)            # (T, V, V), zero diagonal
    mix = np.einsum("tij,jta->ita", attn, v)        # (V, T, A)
    out = H + mix @ w["xview_wo"]
    cache = {"H": H, "q": q, "k": k, "v": v, "attn": attn, "mix": mix, "scale": scale}
    return [out[i] for i in range(V)], cache


def _masked_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(np.where(np.isfinite(logits), logits, -np.inf), axis=-1, keepdims=True)
    e = np.exp(np.where(np.isfinite(logits), logits - m, -np.inf))
    e = np.where(np.isfinite(logits), e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _attention_backward(params: DenoiserParams, cache: dict, douts: list[np.ndarray],
                        grads: dict[str, np.ndarray]) -> list[np.ndarray]:
    w = params.weights
    V = len(douts)
    dO = np.stack(douts, axis=0)                    # (V, T, Hdim)
    H, q, k, v = cache["H"], cache["q"], cache["k"], cache["v"]
    attn, mix, scale = cache["attn"], cache["mix"], cache["scale"]
    dH = dO.copy()
    dmix = dO @ w["xview_wo"].T                     # (V, T, A)
    grads["xview_wo"] += np.einsum("ita,ith->ah", mix, dO)
    dattn = np.einsum("ita,jta->tij", dmix, v)      # (T, V, V)
    dv = np.einsum("tij,ita->jta", attn, dmix)      # (V, T, A)
    # softmax backward per row (self entries carry zero attention weights)
    row_dot = (dattn * attn).sum(axis=-1, keepdims=True)
    dlogits = attn * (dattn - row_dot) * scale
    dq = np.einsum("tij,jta->ita", dlogits, k)
    dk = np.einsum("tij,ita->jta", dlogits, q)
    grads["xview_wq"] += np.einsum("ith,ita->ha", H, dq)
    grads["xview_wk"] += np.einsum("ith,ita->ha", H, dk)
    grads["xview_wv"] += np.einsum("ith,ita->ha", H, dv)
    dH += dq @ w["xview_wq"].T + dk @ w["xview_wk"].T + dv @ w["xview_wv"].T
    return [dH[i] for i in range(V)]


def multiview_denoiser_forward(params: DenoiserParams, xs: list[np.ndarray],
                               conds: list[Conditioning],
                               intr: CameraIntrinsics | None = None
                               ) -> tuple[list[np.ndarray], dict]:
    """Joint multi-view x0 prediction with per-frame cross-view mixing.

    With one view (or zeroed mixing weights) this reduces to independent
    single-view forwards.
    """
    if not params.arch.cross_view:
        raise ValueError("architecture was built without cross-view weights")
    if len(xs) != len(conds) or not xs:
        raise ValueError("need one conditioning per view")
    T = xs[0].shape[0]
    if any(x.shape[0] != T for x in xs):
        raise ValueError("all views must share the frame count T")
    if intr is None:
        intr = conds[0].camera.intrinsics
    hs = []
    trunk_caches = []
    for x, cond in zip(xs, conds):
        h, c = _trunk_forward(params, np.asarray(x, dtype=np.float64), cond, intr)
        hs.append(h)
        trunk_caches.append(c)
    if len(xs) > 1:
        mixed, attn_cache = _attention_forward(params, hs)
    else:
        mixed, attn_cache = hs, None
    w = params.weights
    outs = [(h @ w["head_w"] + w["head_b"]).reshape(T, params.arch.joints, 2)
            for h in mixed]
    cache = {"trunks": trunk_caches, "attn": attn_cache, "mixed": mixed,
             "params_id": id(params), "out_shape": outs[0].shape, "views": len(xs)}
    return outs, cache


def multiview_denoiser_backward(params: DenoiserParams, cache: dict,
                                grad_outs: list[np.ndarray]
                                ) -> tuple[dict[str, np.ndarray], list[np.ndarray]]:
    if cache.get("params_id") != id(params):
        raise ValueError("stale cache: backward must use the forward's params")
    if len(grad_outs) != cache["views"]:
        raise ValueError("one output gradient per view required")
    w = params.weights
    grads = zero_like_params(params)
    dhs = []
    for g, h in zip(grad_outs, cache["mixed"]):
        g = np.asarray(g, dtype=np.float64)
        dy = g.reshape(g.shape[0], -1)
        grads["head_w"] += h.T @ dy
        grads["head_b"] += dy.sum(axis=0)
        dhs.append(dy @ w["head_w"].T)
    if cache["attn"] is not None:
        dhs = _attention_backward(params, cache["attn"], dhs, grads)
    dxs = [_trunk_backward(params, tc, dh, grads)
           for tc, dh in zip(cache["trunks"], dhs)]
    return grads, dxs
