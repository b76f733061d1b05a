"""Per-scene inverse fitting of the dual tri-planes against posed frames.

Three stages: carve the albedo planes while shading renders from a pinned
reference, then the reverse, then a joint pass.  All gradients are exact
(hand-chained through compositing, decode, and bilinear plane sampling), so
the whole stack is finite-difference checkable.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import generate_rays
from .metrics import psnr
from .render import (
    EPS_WSUM,
    DecoderParams,
    RenderOptions,
    default_decoder,
    render,
    render_rays,
    render_rays_backward,
)
from .triplane import DualTriPlane, TriPlane, new_triplane


# --- image-space loss pieces ------------------------------------------------

def _as_hwc(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"expected an image, got shape {a.shape}")
    return a


def _pool2(img: np.ndarray) -> np.ndarray:
    h2, w2 = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    c = img[:h2, :w2]
    return 0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2])


def _unpool2(g: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    h2, w2 = (shape[0] // 2) * 2, (shape[1] // 2) * 2
    q = 0.25 * g
    out[0:h2:2, 0:w2:2] += q
    out[1:h2:2, 0:w2:2] += q
    out[0:h2:2, 1:w2:2] += q
    out[1:h2:2, 1:w2:2] += q
    return out


def _pyramid(a: np.ndarray, levels: int) -> list:
    out = [a]
    while len(out) < levels and min(out[-1].shape[0], out[-1].shape[1]) >= 2:
        out.append(_pool2(out[-1]))
    return out


def perceptual_proxy(a, b, levels: int = 3) -> float:
    """Mean L1 over a half-resolution image pyramid (perceptual stand-in)."""
    value, _ = perceptual_proxy_grad(a, b, levels)
    return value


def perceptual_proxy_grad(a, b, levels: int = 3):
    """(value, d value / d a) for the multi-scale L1."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    a = _as_hwc(a)
    b = _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    pa = _pyramid(a, levels)
    pb = _pyramid(b, levels)
    n = len(pa)
    value = 0.0
    grad = np.zeros_like(pa[-1])
    # walk back up the pyramid, folding each level's sign map in
    for lv in range(n - 1, -1, -1):
        diff = pa[lv] - pb[lv]
        value += float(np.mean(np.abs(diff)))
        grad = grad + np.sign(diff) / (diff.size * n)
        if lv > 0:
            grad = _unpool2(grad, pa[lv - 1].shape)
    return value / n, grad


def _l1(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def _plane_l1(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def tv_regularizer(tp):
    """Squared-difference smoothness over every plane; (value, gradient)."""
    p = tp.planes if isinstance(tp, TriPlane) else np.asarray(tp, dtype=np.float64)
    d1 = p[:, 1:, :, :] - p[:, :-1, :, :]
    d2 = p[:, :, 1:, :] - p[:, :, :-1, :]
    n = p.size
    value = (float(np.sum(d1 ** 2)) + float(np.sum(d2 ** 2))) / n
    g = np.zeros_like(p)
    g[:, 1:, :, :] += 2.0 * d1 / n
    g[:, :-1, :, :] -= 2.0 * d1 / n
    g[:, :, 1:, :] += 2.0 * d2 / n
    g[:, :, :-1, :] -= 2.0 * d2 / n
    return value, g


def albedo_loss(pred, target, plane_pred=None, plane_target=None,
                plane_weight: float = 0.0, levels: int = 3):
    """L1 + multi-scale L1 on albedo images, plus a pull toward reference
    planes; returns (value, d image, d planes or None)."""
    v1, g1 = _l1(_as_hwc(pred), _as_hwc(target))
    v2, g2 = perceptual_proxy_grad(pred, target, levels)
    value, d_img = v1 + v2, g1 + g2
    d_planes = None
    if plane_weight > 0.0:
        if plane_pred is None or plane_target is None:
            raise ValueError("plane pull requested without reference planes")
        pv, pg = _plane_l1(_planes_of(plane_pred), _planes_of(plane_target))
        value += plane_weight * pv
        d_planes = plane_weight * pg
    return value, d_img, d_planes


def shading_loss(pred, target, plane_pred=None, plane_target=None,
                 plane_weight: float = 0.0, levels: int = 3):
    """Mirror of albedo_loss for the shading image and planes."""
    return albedo_loss(pred, target, plane_pred, plane_target, plane_weight,
                       levels)


def rgb_loss(pred, target, levels: int = 3):
    """L1 + multi-scale L1 on composited images; (value, d image)."""
    v1, g1 = _l1(_as_hwc(pred), _as_hwc(target))
    v2, g2 = perceptual_proxy_grad(pred, target, levels)
    return v1 + v2, g1 + g2


def _planes_of(x) -> np.ndarray:
    return x.planes if isinstance(x, TriPlane) else np.asarray(x, dtype=np.float64)


# --- loss weights and config -------------------------------------------------

def decayed(start: float, end: float, iteration: int, span: int) -> float:
    """Linear schedule from start at 0 to end at span, clamped outside."""
    if span <= 1:
        return end
    t = min(max(iteration / (span - 1), 0.0), 1.0)
    return start + (end - start) * t


@dataclass
class LossWeights:
    """Weights of the fitting objective; the plane-pull weights anneal
    linearly from start to end over each stage."""

    albedo: float = 1.0
    shading: float = 1.0
    rgb: float = 1.0
    plane_albedo_start: float = 1.0
    plane_albedo_end: float = 0.01
    plane_shading_start: float = 1.0
    plane_shading_end: float = 0.01
    feature: float = 0.0      # reserved slot, no feature-space term here
    adversarial: float = 0.0  # reserved slot, intentionally unused
    tv: float = 1e-4

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"weight {name} must be finite and >= 0")

    def plane_albedo_at(self, iteration: int, span: int) -> float:
        return decayed(self.plane_albedo_start, self.plane_albedo_end,
                       iteration, span)

    def plane_shading_at(self, iteration: int, span: int) -> float:
        return decayed(self.plane_shading_start, self.plane_shading_end,
                       iteration, span)


def total_loss(terms: dict, w: LossWeights, iteration: int = 0,
               span: int = 1) -> float:
    """Weighted sum of named loss terms at the given schedule position."""
    get = lambda k: float(terms.get(k, 0.0))
    return (w.albedo * get("albedo") + w.shading * get("shading")
            + w.rgb * get("rgb")
            + w.plane_albedo_at(iteration, span) * get("plane_albedo")
            + w.plane_shading_at(iteration, span) * get("plane_shading")
            + w.tv * get("tv") + w.feature * get("feature")
            + w.adversarial * get("adversarial"))


@dataclass
class FitConfig:
    resolution: int = 64
    stage_iterations: tuple = (2000, 2000, 4000)
    learning_rate: float = 1e-4
    samples_per_ray: int = 48
    rays_per_iter: int = 0      # 0 = full frame (enables the pyramid terms)
    jitter: bool = False        # re-draw quadrature offsets every iteration
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 0         # 0 = only evaluate at the end
    init_sd: float = 0.01
    proxy_levels: int = 3

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if len(self.stage_iterations) != 3 or any(int(n) < 0 for n in self.stage_iterations):
            raise ValueError("stage_iterations must be three nonnegative counts")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")
        if self.rays_per_iter < 0:
            raise ValueError("rays_per_iter must be >= 0")


@dataclass
class FitReport:
    curve: list = field(default_factory=list)
    final_terms: dict = field(default_factory=dict)
    final_psnr: float = 0.0
    stage_seconds: list = field(default_factory=list)
    stage_bounds: list = field(default_factory=list)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if self.curve:
            with open(out / "curve.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(self.curve[0]))
                writer.writeheader()
                writer.writerows(self.curve)
        summary = {
            "final_terms": self.final_terms,
            "final_psnr": self.final_psnr,
            "stage_seconds": self.stage_seconds,
            "stage_bounds": self.stage_bounds,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2))


# --- optimizer ----------------------------------------------------------------

class _Adam:
    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        param -= self.lr * mh / (np.sqrt(vh) + self.eps)


# --- forward/backward through the finalize step --------------------------------

def _finalize_vectors(acc: dict, bg: np.ndarray):
    A = acc["albedo"]
    W = acc["weights_sum"]
    S = acc["shading_acc"] / (W + EPS_WSUM)
    I = A * S[:, None] + bg[None, :] * (1.0 - W)[:, None]
    return A, S, I


def _finalize_backward(acc: dict, bg: np.ndarray, dA_img, dS_img, dI_img):
    """Gradients on the finalized (A, S, I) back to the raw accumulators."""
    A = acc["albedo"]
    W = acc["weights_sum"]
    Ssc = acc["shading_acc"]
    S = Ssc / (W + EPS_WSUM)
    u = dS_img + np.einsum("nc,nc->n", dI_img, A)  # total pull on S
    d_albedo = dA_img + dI_img * S[:, None]
    d_shading_acc = u / (W + EPS_WSUM)
    d_wsum = -u * Ssc / (W + EPS_WSUM) ** 2 - dI_img @ bg
    d_depth = np.zeros_like(W)
    return d_albedo, d_shading_acc, d_wsum, d_depth


def _evaluate(dual_render, dec, origins, dirs, ray_ids, opts, near, far,
              targets, image_shape, bg, levels, term_weights):
    """One forward/backward through render + image losses on chosen rays.

    term_weights = (w_albedo, w_shading, w_rgb) scale the image gradients
    before the single chain backward.  Returns (terms, plane grads).  The
    pyramid terms only exist when the rays cover a full frame (image_shape
    given); minibatches use the plain L1 means.
    """
    acc, cache = render_rays(dual_render, dec, origins, dirs, opts, near, far,
                             ray_ids=ray_ids, want_cache=True)
    A, S, I = _finalize_vectors(acc, bg)
    At, St, It = targets
    va, ga = _l1(A, At)
    vs, gs = _l1(S, St)
    vr, gr = _l1(I, It)
    if image_shape is not None:
        h, w = image_shape
        pa, gpa = perceptual_proxy_grad(A.reshape(h, w, 3),
                                        At.reshape(h, w, 3), levels)
        ps, gps = perceptual_proxy_grad(S.reshape(h, w),
                                        St.reshape(h, w), levels)
        pr, gpr = perceptual_proxy_grad(I.reshape(h, w, 3),
                                        It.reshape(h, w, 3), levels)
        va, vs, vr = va + pa, vs + ps, vr + pr
        ga = ga + gpa.reshape(-1, 3)
        gs = gs + gps.reshape(-1)
        gr = gr + gpr.reshape(-1, 3)
    wa, ws, wr = term_weights
    terms = {"albedo": va, "shading": vs, "rgb": vr}
    d_acc = _finalize_backward(acc, bg, wa * ga, ws * gs, wr * gr)
    g_pa, g_ps = render_rays_backward(cache, *d_acc)
    return terms, g_pa, g_ps


# --- the fit loop ---------------------------------------------------------------

# stage 0 carves albedo against pinned shading, stage 1 the reverse, stage 2
# refines both jointly; "pin" swaps the counterpart's render source to the
# reference planes while the optimized copy stays untouched
_STAGES = (
    {"optimize": ("albedo",), "pin": "shading"},
    {"optimize": ("shading",), "pin": "albedo"},
    {"optimize": ("albedo", "shading"), "pin": None},
)


def fit(bundle, cfg: FitConfig, gt_dual: DualTriPlane | None = None,
        dec: DecoderParams | None = None,
        init_dual: DualTriPlane | None = None):
    """Fit a dual tri-plane to the bundle's posed frames.

    Returns (DualTriPlane, FitReport).  gt_dual supplies the pinned
    counterpart planes for stages 1-2 and the plane-pull targets; without it
    the counterpart renders from its frozen initialization and the pull
    terms are disabled.  Aborts with a diagnostic if the loss goes
    non-finite.
    """
    frames, cams = bundle.frames, bundle.cameras
    if len(frames) < 3:
        raise ValueError(f"need at least 3 posed views, got {len(frames)}")
    size = cams[0].image_size
    if any(c.image_size != size for c in cams):
        raise ValueError("all views must share one image size")
    dec = dec or default_decoder()
    weights = cfg.weights

    if init_dual is not None:
        dual = DualTriPlane(TriPlane(init_dual.albedo.planes.copy()),
                            TriPlane(init_dual.shading.planes.copy()),
                            lighting_tag=bundle.lighting)
    else:
        dual = DualTriPlane(
            new_triplane(cfg.resolution, dec.albedo_weight.shape[1],
                         "gaussian", sd=cfg.init_sd, seed=cfg.seed),
            new_triplane(cfg.resolution, dec.shading_weight.shape[1],
                         "gaussian", sd=cfg.init_sd, seed=cfg.seed + 1),
            lighting_tag=bundle.lighting)

    opts = RenderOptions(samples_per_ray=cfg.samples_per_ray,
                         background=bundle.background)
    views = []
    for frame, cam in zip(frames, cams):
        near, far = opts.resolve_near_far(cam)
        o, d = generate_rays(cam)
        views.append({
            "cam": cam, "origins": o.reshape(-1, 3), "dirs": d.reshape(-1, 3),
            "near": near, "far": far,
            "albedo": frame.albedo.reshape(-1, 3),
            "shading": frame.shading.reshape(-1),
            "rgb": frame.rgb.reshape(-1, 3),
            "rgb_img": frame.rgb,
        })
    n_pixels = size * size
    full_frame = cfg.rays_per_iter == 0 or cfg.rays_per_iter >= n_pixels
    bg = np.asarray(opts.background, dtype=np.float64)
    term_weights = (weights.albedo, weights.shading, weights.rgb)

    rng = np.random.default_rng(cfg.seed)
    report = FitReport()
    global_it = 0

    def mean_view_psnr(render_dual):
        vals = [psnr(render(render_dual, dec, v["cam"], opts).rgb, v["rgb_img"])
                for v in views]
        return float(np.mean(vals))

    for stage_idx, stage in enumerate(_STAGES):
        span = int(cfg.stage_iterations[stage_idx])
        opt_albedo = "albedo" in stage["optimize"]
        opt_shading = "shading" in stage["optimize"]
        adam_a = _Adam(dual.albedo.planes.shape, cfg.learning_rate)
        adam_s = _Adam(dual.shading.planes.shape, cfg.learning_rate)
        render_albedo = (gt_dual.albedo
                         if stage["pin"] == "albedo" and gt_dual is not None
                         else dual.albedo)
        render_shading = (gt_dual.shading
                          if stage["pin"] == "shading" and gt_dual is not None
                          else dual.shading)
        dual_render = DualTriPlane(render_albedo, render_shading,
                                   lighting_tag=bundle.lighting)
        t0 = time.perf_counter()

        for it in range(span):
            v = views[int(rng.integers(len(views)))]
            if full_frame:
                idx = np.arange(n_pixels)
                image_shape = (size, size)
            else:
                idx = np.sort(rng.choice(n_pixels, cfg.rays_per_iter,
                                         replace=False))
                image_shape = None
            targets = (v["albedo"][idx], v["shading"][idx], v["rgb"][idx])
            # a fixed comb pins the density only at its own depths; fresh
            # offsets each step supervise the whole interval instead
            it_opts = (replace(opts, stratified=True, seed=global_it)
                       if cfg.jitter else opts)
            terms, g_pa, g_ps = _evaluate(
                dual_render, dec, v["origins"][idx], v["dirs"][idx], idx,
                it_opts, v["near"], v["far"], targets, image_shape, bg,
                cfg.proxy_levels, term_weights)

            # pull weights anneal over the stage that introduces each plane
            # set and then hold at their end value during the joint stage
            lam_a = lam_s = 0.0
            if gt_dual is not None:
                if stage_idx == 0:
                    lam_a = weights.plane_albedo_at(it, span)
                elif stage_idx == 1:
                    lam_s = weights.plane_shading_at(it, span)
                else:
                    lam_a = weights.plane_albedo_end
                    lam_s = weights.plane_shading_end

            total = (weights.albedo * terms["albedo"]
                     + weights.shading * terms["shading"]
                     + weights.rgb * terms["rgb"])
            if opt_albedo:
                if lam_a > 0.0:
                    pv, pg = _plane_l1(dual.albedo.planes, gt_dual.albedo.planes)
                    terms["plane_albedo"] = pv
                    total += lam_a * pv
                    g_pa = g_pa + lam_a * pg
                tv_a, tg_a = tv_regularizer(dual.albedo.planes)
                terms["tv_albedo"] = tv_a
                total += weights.tv * tv_a
                g_pa = g_pa + weights.tv * tg_a
            if opt_shading:
                if lam_s > 0.0:
                    pv, pg = _plane_l1(dual.shading.planes, gt_dual.shading.planes)
                    terms["plane_shading"] = pv
                    total += lam_s * pv
                    g_ps = g_ps + lam_s * pg
                tv_s, tg_s = tv_regularizer(dual.shading.planes)
                terms["tv_shading"] = tv_s
                total += weights.tv * tv_s
                g_ps = g_ps + weights.tv * tg_s

            if not np.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at stage {stage_idx} iteration {it}: "
                    f"terms={terms}")

            if opt_albedo:
                adam_a.step(dual.albedo.planes, g_pa)
            if opt_shading:
                adam_s.step(dual.shading.planes, g_ps)

            global_it += 1
            row = {"iteration": global_it, "stage": stage_idx,
                   "total": total,
                   "albedo": terms["albedo"], "shading": terms["shading"],
                   "rgb": terms["rgb"],
                   "plane_albedo": terms.get("plane_albedo", 0.0),
                   "plane_shading": terms.get("plane_shading", 0.0),
                   "tv": terms.get("tv_albedo", 0.0) + terms.get("tv_shading", 0.0),
                   "psnr": ""}
            if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
                row["psnr"] = mean_view_psnr(dual_render)
            report.curve.append(row)

        report.stage_seconds.append(time.perf_counter() - t0)
        report.stage_bounds.append(global_it)

    if report.curve:
        last = report.curve[-1]
        report.final_terms = {k: last[k] for k in
                              ("total", "albedo", "shading", "rgb",
                               "plane_albedo", "plane_shading", "tv")}
    report.final_psnr = mean_view_psnr(dual)
    return dual, report


# --- finite-difference audit ------------------------------------------------

def grad_check(loss_fn, params: np.ndarray, n_probes: int, h: float = 1e-5,
               seed: int = 0, denom_floor: float = 1e-10) -> float:
    """Max relative error between loss_fn's gradient and central differences.

    loss_fn(params) -> (value, gradient).  Probes favor entries with live
    gradients (sampled from the largest-magnitude pool) since comparing
    noise against noise validates nothing.
    """
    params = np.asarray(params, dtype=np.float64)
    _, grad = loss_fn(params)
    flat = np.abs(np.asarray(grad).ravel())
    if flat.size < n_probes:
        raise ValueError("fewer parameters than probes")
    order = np.argsort(-flat, kind="stable")
    pool = order[:max(8 * n_probes, n_probes)]
    rng = np.random.default_rng(seed)
    picks = rng.choice(pool.size, size=n_probes, replace=False)
    worst = 0.0
    g = np.asarray(grad).ravel()
    for idx in pool[np.sort(picks)]:
        probe = params.copy().ravel()
        probe[idx] += h
        up, _ = loss_fn(probe.reshape(params.shape))
        probe[idx] -= 2 * h
        dn, _ = loss_fn(probe.reshape(params.shape))
        fd = (up - dn) / (2 * h)
        rel = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), denom_floor)
        worst = max(worst, rel)
    return worst
