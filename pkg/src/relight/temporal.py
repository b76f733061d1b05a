"""Temporal consistency over tri-plane sequences.

Two deflicker routes share the tokenization: an attention network that
predicts residual planes for every frame of a window, and a weight-free
patch smoother whose single temperature is calibrated against the temporal
objective.  The losses compare rendered frames after backward-warping the
earlier one onto the later one's pixel grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .camera import interpolate_cameras, sample_camera_pose
from .fileio import expect_payload, read_container, write_container
from .fit import perceptual_proxy, _pool2
from .render import RenderOptions, default_decoder, render
from .synth import generate_sequence, warp_backward
from .triplane import DualTriPlane, TriPlane, TriPlaneWindow
from .triplane import add_residual as _add_plane_residual

TCN_MAGIC = b"RTCN"
LN_EPS = 1e-5


# --- configuration and parameters -------------------------------------------

@dataclass(frozen=True)
class TcnConfig:
    """Architecture constants for the residual network.

    Two self-attention transformers (one per plane set) feed two
    cross-attention transformers, so `transformers` is structural and only 4
    is supported; likewise the mixers are pointwise (kernel 1).
    """

    window: int = 5
    heads: int = 8
    layers: int = 4
    hidden: int = 512
    patch: int = 4
    resolution: int = 64
    albedo_channels: int = 4
    shading_channels: int = 1
    transformers: int = 4
    mixer_kernel: int = 1

    def __post_init__(self):
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.hidden < 1 or self.heads < 1 or self.hidden % self.heads:
            raise ValueError(f"hidden ({self.hidden}) must be a positive multiple of heads ({self.heads})")
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.patch < 1 or self.resolution % self.patch:
            raise ValueError(f"resolution {self.resolution} not divisible by patch {self.patch}")
        if self.albedo_channels < 1 or self.shading_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.transformers != 4:
            raise ValueError("only the 2 self + 2 cross transformer layout is supported")
        if self.mixer_kernel != 1:
            raise ValueError("mixers are pointwise; kernel must be 1")

    @property
    def tokens_per_frame(self) -> int:
        return 3 * (self.resolution // self.patch) ** 2

    @property
    def albedo_token_dim(self) -> int:
        return self.patch * self.patch * self.albedo_channels

    @property
    def shading_token_dim(self) -> int:
        return self.patch * self.patch * self.shading_channels


_BRANCHES = ("self_albedo", "self_shading", "cross_albedo", "cross_shading")


def _param_shapes(cfg: TcnConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) listing; file payload order follows it."""
    h = cfg.hidden
    da, ds = cfg.albedo_token_dim, cfg.shading_token_dim
    seq = cfg.window * cfg.tokens_per_frame
    shapes = [
        ("pre_albedo_w", (h, da)), ("pre_albedo_b", (h,)),
        ("pre_shading_w", (h, ds)), ("pre_shading_b", (h,)),
        ("pos_albedo", (seq, h)), ("pos_shading", (seq, h)),
    ]
    for branch in _BRANCHES:
        for layer in range(cfg.layers):
            p = f"{branch}{layer}_"
            shapes += [(p + "ln1_g", (h,)), (p + "ln1_b", (h,))]
            if branch.startswith("cross"):
                shapes += [(p + "lnkv_g", (h,)), (p + "lnkv_b", (h,))]
            shapes += [
                (p + "wq", (h, h)), (p + "bq", (h,)),
                (p + "wk", (h, h)), (p + "bk", (h,)),
                (p + "wv", (h, h)), (p + "bv", (h,)),
                (p + "wo", (h, h)), (p + "bo", (h,)),
                (p + "ln2_g", (h,)), (p + "ln2_b", (h,)),
                (p + "mlp_w1", (2 * h, h)), (p + "mlp_b1", (2 * h,)),
                (p + "mlp_w2", (h, 2 * h)), (p + "mlp_b2", (h,)),
            ]
    shapes += [
        ("post_albedo_w", (da, h)), ("post_albedo_b", (da,)),
        ("post_shading_w", (ds, h)), ("post_shading_b", (ds,)),
    ]
    return shapes


@dataclass
class TcnParams:
    cfg: TcnConfig
    arrays: dict

    def __post_init__(self):
        expected = _param_shapes(self.cfg)
        names = {n for n, _ in expected}
        extra = set(self.arrays) - names
        if extra:
            raise ValueError(f"unexpected parameter arrays: {sorted(extra)}")
        for name, shape in expected:
            if name not in self.arrays:
                raise ValueError(f"missing parameter array {name!r}")
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite values")
            self.arrays[name] = arr


def init_identity(cfg: TcnConfig, seed: int = 0) -> TcnParams:
    """Random attention weights with zero post-mixers: forward is a no-op."""
    params = random_params(cfg, seed)
    for name in ("post_albedo_w", "post_albedo_b", "post_shading_w", "post_shading_b"):
        params.arrays[name] = np.zeros_like(params.arrays[name])
    return params


def random_params(cfg: TcnConfig, seed: int = 0) -> TcnParams:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _param_shapes(cfg):
        if name.endswith("_g"):
            arrays[name] = np.ones(shape)
        elif name.endswith("_b") or name.endswith("ln1_b") or name.endswith("lnkv_b"):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.normal(0.0, 0.02, size=shape)
    return TcnParams(cfg, arrays)


def save_tcn(path, params: TcnParams) -> None:
    cfg = params.cfg
    header = (cfg.window, cfg.heads, cfg.layers, cfg.hidden, cfg.patch,
              cfg.resolution, cfg.albedo_channels, cfg.shading_channels)
    payload = np.concatenate([params.arrays[n].ravel() for n, _ in _param_shapes(cfg)])
    write_container(path, TCN_MAGIC, header, payload.astype(np.float32))


def load_tcn(path) -> TcnParams:
    header, payload = read_container(path, TCN_MAGIC, 8)
    cfg = TcnConfig(window=header[0], heads=header[1], layers=header[2],
                    hidden=header[3], patch=header[4], resolution=header[5],
                    albedo_channels=header[6], shading_channels=header[7])
    shapes = _param_shapes(cfg)
    total = sum(int(np.prod(s)) for _, s in shapes)
    flat = expect_payload(payload, total).astype(np.float64)
    arrays, offset = {}, 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        arrays[name] = flat[offset:offset + n].reshape(shape)
        offset += n
    return TcnParams(cfg, arrays)


# --- tokenization ------------------------------------------------------------

def tokenize(tp: TriPlane, patch: int) -> np.ndarray:
    """Non-overlapping patch tokens, (3*(R/patch)^2, patch*patch*C).

    Pure reshuffle, so untokenize(tokenize(x)) is bitwise x.
    """
    r, c = tp.resolution, tp.channels
    if patch < 1 or r % patch:
        raise ValueError(f"resolution {r} not divisible by patch {patch}")
    g = r // patch
    t = tp.planes.reshape(3, g, patch, g, patch, c)
    return t.transpose(0, 1, 3, 2, 4, 5).reshape(3 * g * g, patch * patch * c)


def untokenize(tokens: np.ndarray, resolution: int, channels: int, patch: int) -> TriPlane:
    g = resolution // patch
    if tokens.shape != (3 * g * g, patch * patch * channels):
        raise ValueError(f"token grid has shape {tokens.shape}, expected "
                         f"({3 * g * g}, {patch * patch * channels})")
    t = tokens.reshape(3, g, g, patch, patch, channels)
    return TriPlane(t.transpose(0, 1, 3, 2, 4, 5).reshape(3, resolution, resolution, channels))


# --- network forward ----------------------------------------------------------

def _layernorm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def _gelu(x):
    # tanh approximation, good to ~1e-3 absolute and cheap in numpy
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def _attention(q, k, v, heads):
    tq, h = q.shape
    dh = h // heads
    qh = q.reshape(tq, heads, dh)
    kh = k.reshape(-1, heads, dh)
    vh = v.reshape(-1, heads, dh)
    scores = np.einsum("qhd,khd->hqk", qh, kh) / math.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    return np.einsum("hqk,khd->qhd", w, vh).reshape(tq, h)


def _transformer(x, arrays, branch, cfg, kv=None):
    """Pre-norm residual stack; cross branches read a fixed key/value stream."""
    for layer in range(cfg.layers):
        p = f"{branch}{layer}_"
        q_in = _layernorm(x, arrays[p + "ln1_g"], arrays[p + "ln1_b"])
        if kv is None:
            kv_in = q_in
        else:
            kv_in = _layernorm(kv, arrays[p + "lnkv_g"], arrays[p + "lnkv_b"])
        q = q_in @ arrays[p + "wq"].T + arrays[p + "bq"]
        k = kv_in @ arrays[p + "wk"].T + arrays[p + "bk"]
        v = kv_in @ arrays[p + "wv"].T + arrays[p + "bv"]
        x = x + _attention(q, k, v, cfg.heads) @ arrays[p + "wo"].T + arrays[p + "bo"]
        h2 = _layernorm(x, arrays[p + "ln2_g"], arrays[p + "ln2_b"])
        x = x + _gelu(h2 @ arrays[p + "mlp_w1"].T + arrays[p + "mlp_b1"]) \
            @ arrays[p + "mlp_w2"].T + arrays[p + "mlp_b2"]
    return x


def tcn_forward(window: TriPlaneWindow, params: TcnParams, cfg: TcnConfig) -> list[DualTriPlane]:
    """Residual dual tri-plane per frame; caller adds them with add_residual."""
    if window.n != cfg.window:
        raise ValueError(f"window holds {window.n} frames, config expects {cfg.window}")
    f0 = window.frames[0]
    if (f0.albedo.resolution != cfg.resolution
            or f0.albedo.channels != cfg.albedo_channels
            or f0.shading.channels != cfg.shading_channels):
        raise ValueError("window planes do not match the configured shapes")
    a = params.arrays
    tok_a = np.concatenate([tokenize(f.albedo, cfg.patch) for f in window.frames])
    tok_s = np.concatenate([tokenize(f.shading, cfg.patch) for f in window.frames])

    x_a = tok_a @ a["pre_albedo_w"].T + a["pre_albedo_b"] + a["pos_albedo"]
    x_s = tok_s @ a["pre_shading_w"].T + a["pre_shading_b"] + a["pos_shading"]
    x_a = _transformer(x_a, a, "self_albedo", cfg)
    x_s = _transformer(x_s, a, "self_shading", cfg)
    y_a = _transformer(x_a, a, "cross_albedo", cfg, kv=x_s)
    y_s = _transformer(x_s, a, "cross_shading", cfg, kv=x_a)
    res_a = y_a @ a["post_albedo_w"].T + a["post_albedo_b"]
    res_s = y_s @ a["post_shading_w"].T + a["post_shading_b"]

    t, r = cfg.tokens_per_frame, cfg.resolution
    out = []
    for i, f in enumerate(window.frames):
        ra = untokenize(res_a[i * t:(i + 1) * t], r, cfg.albedo_channels, cfg.patch)
        rs = untokenize(res_s[i * t:(i + 1) * t], r, cfg.shading_channels, cfg.patch)
        out.append(DualTriPlane(ra, rs, f.lighting_tag.copy()))
    return out


def add_residual(dual: DualTriPlane, residual: DualTriPlane) -> DualTriPlane:
    return DualTriPlane(_add_plane_residual(dual.albedo, residual.albedo),
                        _add_plane_residual(dual.shading, residual.shading),
                        dual.lighting_tag.copy())


# --- non-parametric smoother ---------------------------------------------------

def nonparametric_smooth(sequence, temperature: float, window: int,
                         patch: int = 4) -> list[DualTriPlane]:
    """Patch-attention average over a sliding window, no learned weights.

    Each output patch is softmax(-||patch_i - patch_j||^2 / temperature)
    weighted over the window, so it stays inside the componentwise convex
    hull of the window's patches.  temperature -> 0 returns the input,
    temperature -> inf returns the window mean.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    m = len(sequence)
    if m < window:
        raise ValueError(f"sequence of {m} frames is shorter than window {window}")
    toks = {
        "albedo": np.stack([tokenize(d.albedo, patch) for d in sequence]),
        "shading": np.stack([tokenize(d.shading, patch) for d in sequence]),
    }
    r = sequence[0].albedo.resolution
    channels = {"albedo": sequence[0].albedo.channels,
                "shading": sequence[0].shading.channels}
    out = []
    for i in range(m):
        lo = min(max(0, i - window // 2), m - window)
        smoothed = {}
        for name, tk in toks.items():
            block = tk[lo:lo + window]                       # (n, T, D)
            d2 = ((block - tk[i]) ** 2).sum(axis=-1)          # (n, T)
            logits = -d2 / temperature
            logits -= logits.max(axis=0, keepdims=True)
            w = np.exp(logits)
            w /= w.sum(axis=0, keepdims=True)
            smoothed[name] = np.einsum("nt,ntd->td", w, block)
        out.append(DualTriPlane(
            untokenize(smoothed["albedo"], r, channels["albedo"], patch),
            untokenize(smoothed["shading"], r, channels["shading"], patch),
            sequence[i].lighting_tag.copy()))
    return out


# --- synthetic training windows -------------------------------------------------

def synth_training_window(scene, dual: DualTriPlane, n: int, seed: int, *,
                          noise_sd: float | None = None, image_size: int = 64,
                          focal: float | None = None,
                          opts: RenderOptions | None = None):
    """Camera-interpolated window with per-frame plane noise and exact flows.

    Draws the two endpoint poses from the orbit distributions (first and
    second slot), interpolates n steps, renders ground truth under the dual's
    bake lighting, and perturbs each frame's planes with gaussian noise.
    noise_sd defaults to 0.05x the feature standard deviation, measured per
    plane set; `focal` overrides both endpoints so narrow-field content stays
    in frame.  Returns (noisy window, clean window, ground-truth bundle).
    """
    if n < 2:
        raise ValueError(f"need at least 2 frames, got {n}")
    rng = np.random.default_rng(seed)
    cam_a = sample_camera_pose(int(rng.integers(2 ** 31 - 1)), "first", image_size)
    cam_b = sample_camera_pose(int(rng.integers(2 ** 31 - 1)), "second", image_size)
    if focal is not None:
        cam_a = replace(cam_a, focal=focal)
        cam_b = replace(cam_b, focal=focal)
    cams = [interpolate_cameras(cam_a, cam_b, t) for t in np.linspace(0.0, 1.0, n)]
    bundle = generate_sequence(scene, cams, dual.lighting_tag, opts)

    sd = {
        "albedo": float(dual.albedo.planes.std()) * 0.05 if noise_sd is None else noise_sd,
        "shading": float(dual.shading.planes.std()) * 0.05 if noise_sd is None else noise_sd,
    }
    noisy = []
    for _ in range(n):
        na = dual.albedo.planes + rng.normal(0.0, sd["albedo"], size=dual.albedo.planes.shape)
        ns = dual.shading.planes + rng.normal(0.0, sd["shading"], size=dual.shading.planes.shape)
        noisy.append(DualTriPlane(TriPlane(na), TriPlane(ns), dual.lighting_tag.copy()))
    clean = TriPlaneWindow([dual.copy() for _ in range(n)], cams)
    return TriPlaneWindow(noisy, cams), clean, bundle


# --- temporal losses --------------------------------------------------------------

@dataclass
class MaskImage:
    """Per-pixel confidence that the warped previous frame explains this one."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("mask must be (H, W)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("mask must be finite")
        if np.any(self.weights <= 0.0) or np.any(self.weights > 1.0):
            raise ValueError("mask weights must lie in (0, 1]")


def consistency_mask(frame, warped_prev) -> MaskImage:
    """exp(-L1 residual) between a frame and the warped earlier frame."""
    a = np.asarray(frame, dtype=np.float64)
    b = np.asarray(warped_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    resid = np.abs(a - b)
    if resid.ndim == 3:
        resid = resid.mean(axis=-1)
    # clip keeps exp() away from a hard zero on wildly inconsistent pixels
    return MaskImage(np.exp(-np.minimum(resid, 700.0)))


def _masked_proxy(a, b, weights, levels):
    """Multi-scale weighted L1; equals perceptual_proxy when weights are 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = weights
    total = 0.0
    count = 0
    for _ in range(levels):
        diff = np.abs(a - b)
        chans = diff.shape[-1] if diff.ndim == 3 else 1
        wd = w[..., None] * diff if diff.ndim == 3 else w * diff
        total += wd.sum() / (w.sum() * chans + 1e-12)
        count += 1
        if min(a.shape[0], a.shape[1]) < 2:
            break
        a, b, w = _pool2(a), _pool2(b), _pool2(w)
    return total / count


def _pairwise_temporal_loss(out_i, out_prev, flow, gt_i, gt_prev, levels):
    mask = consistency_mask(gt_i.rgb, warp_backward(gt_prev.rgb, flow))
    total = 0.0
    for cur, prev in ((out_i.rgb, out_prev.rgb),
                      (out_i.albedo, out_prev.albedo),
                      (out_i.shading, out_prev.shading)):
        total += _masked_proxy(cur, warp_backward(prev, flow), mask.weights, levels)
    return total


def temporal_loss_short(out_i, out_prev, flow, gt_i, gt_prev, levels: int = 3) -> float:
    """Masked warped multi-scale L1 over rgb, albedo and shading."""
    if flow is None:
        raise ValueError("short-term loss needs a flow field")
    return _pairwise_temporal_loss(out_i, out_prev, flow, gt_i, gt_prev, levels)


def temporal_loss_long(out_i, out_first, flow, gt_i, gt_first, levels: int = 3) -> float:
    """Same form anchored to the first frame; the first frame itself scores 0."""
    if flow is None:
        return 0.0
    return _pairwise_temporal_loss(out_i, out_first, flow, gt_i, gt_first, levels)


def temporal_objective(short: float, long: float, recon: float,
                       weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> float:
    ws, wl, wr = weights
    return ws * short + wl * long + wr * recon


# --- smoother calibration ------------------------------------------------------------

def calibrate_smoother(windows, tau_grid, *, patch: int = 4, levels: int = 3,
                       dec=None, opts: RenderOptions | None = None):
    """Grid-search the smoother temperature against the temporal objective.

    `windows` holds (TriPlaneWindow, GroundTruthBundle) pairs as produced by
    synth_training_window.  Every window is smoothed at each temperature,
    rendered at its own cameras, and scored with the mean temporal objective
    over frames 2..n; returns (best temperature, score table rows).
    """
    tau_grid = [float(t) for t in tau_grid]
    if not tau_grid or any(t <= 0.0 for t in tau_grid):
        raise ValueError("temperature grid must be non-empty and positive")
    if not windows:
        raise ValueError("need at least one calibration window")
    rows = []
    for tau in tau_grid:
        shorts, longs, recons = [], [], []
        for win, bundle in windows:
            smoothed = nonparametric_smooth(win.frames, tau, window=win.n, patch=patch)
            outs = [_render_dual(d, cam, dec, opts) for d, cam in zip(smoothed, win.cameras)]
            for i in range(1, win.n):
                shorts.append(temporal_loss_short(outs[i], outs[i - 1],
                                                  bundle.flows_short[i],
                                                  bundle.frames[i], bundle.frames[i - 1],
                                                  levels))
                longs.append(temporal_loss_long(outs[i], outs[0],
                                                bundle.flows_long[i],
                                                bundle.frames[i], bundle.frames[0],
                                                levels))
                recons.append(perceptual_proxy(outs[i].rgb, bundle.frames[i].rgb, levels))
        s, l, r = float(np.mean(shorts)), float(np.mean(longs)), float(np.mean(recons))
        rows.append({"tau": tau, "short": s, "long": l, "recon": r,
                     "objective": temporal_objective(s, l, r)})
    best = min(rows, key=lambda row: row["objective"])
    return best["tau"], rows


def _render_dual(dual, cam, dec, opts):
    if dec is None:
        dec = default_decoder(dual.albedo.channels, dual.shading.channels)
    return render(dual, dec, cam, opts or RenderOptions())


def save_calibration(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["tau", "short", "long", "recon", "objective"])
        writer.writeheader()
        writer.writerows(rows)
