"""Volumetric rendering of dual tri-plane scenes.

The quadrature along each ray uses alpha compositing:
alpha_i = 1 - exp(-sigma_i * dt), w_i = alpha_i * prod_{j<i}(1 - alpha_j).
Accumulated albedo is sum(w * albedo); the shading image is the
opacity-normalized accumulation sum(w * s) / (sum(w) + eps) so that the
composed rgb = albedo * shading holds exactly before the background is
added by the remaining transmittance.

This module is the float64 reference path (plain numpy, used by fitting,
oracles and metrics); the float32 interactive path lives in _kernels.py.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, generate_rays
from .sh import eval_sh_basis, as_sh
from .triplane import DualTriPlane, TriPlane, sample_points

EPS_WSUM = 1e-8

# raw decoder response below this adds nothing at float precision
SKIP_RAW = -18.0


@dataclass
class DecoderParams:
    """Affine decoders: albedo features -> (raw density, raw rgb), shading
    features -> raw shading; fixed activations are applied afterwards."""

    albedo_weight: np.ndarray   # (4, C_A)
    albedo_bias: np.ndarray     # (4,)
    shading_weight: np.ndarray  # (1, C_S)
    shading_bias: np.ndarray    # (1,)

    def __post_init__(self):
        self.albedo_weight = np.asarray(self.albedo_weight, dtype=np.float64)
        self.albedo_bias = np.asarray(self.albedo_bias, dtype=np.float64)
        self.shading_weight = np.asarray(self.shading_weight, dtype=np.float64)
        self.shading_bias = np.asarray(self.shading_bias, dtype=np.float64)
        if self.albedo_weight.ndim != 2 or self.albedo_weight.shape[0] != 4:
            raise ValueError("albedo decoder must map C_A features to 4 outputs")
        if self.shading_weight.ndim != 2 or self.shading_weight.shape[0] != 1:
            raise ValueError("shading decoder must map C_S features to 1 output")
        if self.albedo_bias.shape != (4,) or self.shading_bias.shape != (1,):
            raise ValueError("decoder bias arity mismatch")
        for a in (self.albedo_weight, self.albedo_bias, self.shading_weight, self.shading_bias):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite decoder weights")


def default_decoder(c_albedo: int = 4, c_shading: int = 1) -> DecoderParams:
    """Routing decoder: first albedo channels map to (density, r, g, b)."""
    wa = np.zeros((4, c_albedo))
    for i in range(min(4, c_albedo)):
        wa[i, i] = 1.0
    ws = np.zeros((1, c_shading))
    ws[0, 0] = 1.0
    return DecoderParams(wa, np.zeros(4), ws, np.zeros(1))


@dataclass
class RenderOptions:
    samples_per_ray: int = 96
    near: float | None = None
    far: float | None = None
    stratified: bool = False
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)

    def resolve_near_far(self, cam: Camera) -> tuple[float, float]:
        near, far = cam.default_near_far()
        if self.near is not None:
            near = self.near
        if self.far is not None:
            far = self.far
        if not near < far:
            raise ValueError(f"need near < far, got {near}, {far}")
        return near, far


@dataclass
class RenderOutput:
    rgb: np.ndarray          # (H, W, 3)
    albedo: np.ndarray       # (H, W, 3)
    shading: np.ndarray      # (H, W, 1)
    depth: np.ndarray        # (H, W)
    weights_sum: np.ndarray  # (H, W)
    diagnostics: dict = field(default_factory=dict)


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_grad(x):
    return sigmoid(x)


def inv_softplus(y):
    """Stable inverse: log(expm1(y))."""
    y = np.asarray(y, dtype=np.float64)
    out = np.where(y > 30.0, y, np.log(np.expm1(np.maximum(y, 1e-300))))
    return out


def sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def logit(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y) - np.log1p(-y)


# counter-based stratified jitter: the same (seed, ray, sample) triple always
# produces the same offset, independent of any worker layout
def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


def stratified_offsets(seed: int, ray_ids: np.ndarray, n_samples: int) -> np.ndarray:
    """Jitter in [0,1) per (ray, sample), reproducible and layout-independent."""
    rid = np.asarray(ray_ids, dtype=np.uint64)[:, None]
    sid = np.arange(n_samples, dtype=np.uint64)[None, :]
    key = _splitmix64(rid * np.uint64(0x100000001B3) + sid
                      + (np.uint64(seed & 0xFFFFFFFFFFFFFFFF) << np.uint64(20)))
    return (key >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


def sample_depths(opts: RenderOptions, near: float, far: float,
                  ray_ids: np.ndarray) -> np.ndarray:
    """(N, S) depth values: bin midpoints, or stratified jitter inside bins."""
    n = len(ray_ids)
    s = opts.samples_per_ray
    if s < 2:
        raise ValueError("samples_per_ray must be >= 2")
    dt = (far - near) / s
    if opts.stratified:
        u = stratified_offsets(opts.seed, ray_ids, s)
    else:
        u = np.full((n, s), 0.5)
    return near + (np.arange(s)[None, :] + u) * dt


def composite_weights(sigma: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """(N, S) densities -> (weights, transmittance-before-sample)."""
    alpha = -np.expm1(-sigma * dt)
    trans = np.cumprod(1.0 - alpha, axis=-1)
    trans = np.concatenate([np.ones_like(trans[:, :1]), trans[:, :-1]], axis=1)
    return alpha * trans, trans


class RayBatchCache:
    """Everything the backward pass needs from one forward ray batch."""

    def __init__(self, **kw):
        self.__dict__.update(kw)


def _decode_albedo(dec: DecoderParams, feat: np.ndarray):
    raw = feat @ dec.albedo_weight.T + dec.albedo_bias
    return raw, softplus(raw[..., 0]), sigmoid(raw[..., 1:4])


def _decode_shading(dec: DecoderParams, feat: np.ndarray):
    raw = feat @ dec.shading_weight.T + dec.shading_bias
    return raw, softplus(raw[..., 0])


def render_rays(dual: DualTriPlane, dec: DecoderParams, origins: np.ndarray,
                dirs: np.ndarray, opts: RenderOptions, near: float, far: float,
                ray_ids: np.ndarray | None = None, want_cache: bool = False):
    """Render a flat batch of rays; returns per-ray accumulators.

    Output dict fields: albedo (N,3), shading_acc (N,), weights_sum (N,),
    depth_acc (N,); derived images are assembled by the callers.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    if ray_ids is None:
        ray_ids = np.arange(n)
    ts = sample_depths(opts, near, far, ray_ids)
    dt = (far - near) / opts.samples_per_ray
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    flat = pts.reshape(-1, 3)

    feat_a = sample_points(dual.albedo, flat).reshape(n, opts.samples_per_ray, -1)
    raw_a, sigma, albedo = _decode_albedo(dec, feat_a)
    feat_s = sample_points(dual.shading, flat).reshape(n, opts.samples_per_ray, -1)
    raw_s, shading = _decode_shading(dec, feat_s)

    w, trans = composite_weights(sigma, dt)
    out = {
        "albedo": np.einsum("ns,nsc->nc", w, albedo),
        "shading_acc": np.einsum("ns,ns->n", w, shading),
        "weights_sum": w.sum(axis=1),
        "depth_acc": np.einsum("ns,ns->n", w, ts),
    }
    if not want_cache:
        return out, None
    cache = RayBatchCache(pts=pts, ts=ts, dt=dt, feat_a=feat_a, raw_a=raw_a,
                          sigma=sigma, albedo=albedo, feat_s=feat_s, raw_s=raw_s,
                          shading=shading, w=w, trans=trans, dual=dual, dec=dec,
                          opts=opts)
    return out, cache


def composite_backward(cache: RayBatchCache, d_albedo: np.ndarray,
                       d_shading_acc: np.ndarray, d_weights_sum: np.ndarray,
                       d_depth_acc: np.ndarray):
    """Hand-derived backprop from ray accumulators to per-sample raw decoders.

    Returns (d_raw_albedo (N,S,4), d_raw_shading (N,S,1)).
    Uses the suffix recurrence q_i = (1-a_{i+1}) q_{i+1} + g_{i+1} a_{i+1}
    so no division by (1 - alpha) is needed.
    """
    w, trans = cache.w, cache.trans
    alpha = -np.expm1(-cache.sigma * cache.dt)
    # per-sample sensitivity of the loss to w_i
    g = (np.einsum("nc,nsc->ns", d_albedo, cache.albedo)
         + d_shading_acc[:, None] * cache.shading
         + d_weights_sum[:, None]
         + d_depth_acc[:, None] * cache.ts)
    n, s = g.shape
    q = np.zeros((n, s))
    for i in range(s - 2, -1, -1):
        q[:, i] = (1.0 - alpha[:, i + 1]) * q[:, i + 1] + g[:, i + 1] * alpha[:, i + 1]
    d_alpha = trans * (g - q)
    d_sigma = d_alpha * cache.dt * (1.0 - alpha)

    d_albedo_samples = w[..., None] * d_albedo[:, None, :]
    d_shading_samples = w * d_shading_acc[:, None]

    d_raw_a = np.empty_like(cache.raw_a)
    d_raw_a[..., 0] = d_sigma * softplus_grad(cache.raw_a[..., 0])
    d_raw_a[..., 1:4] = d_albedo_samples * sigmoid_grad(cache.raw_a[..., 1:4])
    d_raw_s = (d_shading_samples * softplus_grad(cache.raw_s[..., 0]))[..., None]
    return d_raw_a, d_raw_s


def scatter_plane_grads(tp: TriPlane, pts: np.ndarray, d_feat: np.ndarray) -> np.ndarray:
    """Accumulate d loss / d planes for a batch of sample points.

    pts (M,3), d_feat (M,C) -> (3,R,R,C).  Mirrors sample_points: each plane
    receives upstream * bilinear_weight / 3 at its four taps.
    """
    from .triplane import PLANE_AXES, _lattice_coords

    R, C = tp.resolution, tp.channels
    p = np.clip(np.asarray(pts, dtype=np.float64), -1.0, 1.0)
    d_feat = np.asarray(d_feat, dtype=np.float64) / 3.0
    grads = np.zeros((3, R * R * C))
    chan = np.arange(C, dtype=np.int64)[None, :]
    for plane_idx, (au, av) in enumerate(PLANE_AXES):
        i0, fu = _lattice_coords(p[:, au], R)
        j0, fv = _lattice_coords(p[:, av], R)
        for di, dj, wgt in ((0, 0, (1 - fu) * (1 - fv)), (0, 1, (1 - fu) * fv),
                            (1, 0, fu * (1 - fv)), (1, 1, fu * fv)):
            flat_idx = ((i0 + di) * R + (j0 + dj))[:, None] * C + chan
            contrib = wgt[:, None] * d_feat
            grads[plane_idx] += np.bincount(flat_idx.ravel(),
                                            weights=contrib.ravel(),
                                            minlength=R * R * C)
    return grads.reshape(3, R, R, C)


def render_rays_backward(cache: RayBatchCache, d_albedo, d_shading_acc,
                         d_weights_sum, d_depth_acc):
    """Full chain: accumulators -> raw decodes -> features -> plane texels."""
    d_raw_a, d_raw_s = composite_backward(cache, d_albedo, d_shading_acc,
                                          d_weights_sum, d_depth_acc)
    d_feat_a = d_raw_a @ cache.dec.albedo_weight
    d_feat_s = d_raw_s @ cache.dec.shading_weight
    flat = cache.pts.reshape(-1, 3)
    ga = scatter_plane_grads(cache.dual.albedo, flat, d_feat_a.reshape(flat.shape[0], -1))
    gs = scatter_plane_grads(cache.dual.shading, flat, d_feat_s.reshape(flat.shape[0], -1))
    return ga, gs


def finalize_image(acc: dict, h: int, w: int, background, far: float) -> RenderOutput:
    """Assemble a RenderOutput from flat per-ray accumulators."""
    bg = np.asarray(background, dtype=np.float64).reshape(1, 1, 3)
    albedo = acc["albedo"].reshape(h, w, 3)
    wsum = acc["weights_sum"].reshape(h, w)
    shading = (acc["shading_acc"].reshape(h, w) / (wsum + EPS_WSUM))[..., None]
    rgb = albedo * shading + bg * (1.0 - wsum[..., None])
    depth = acc["depth_acc"].reshape(h, w) + (1.0 - wsum) * far
    return RenderOutput(rgb=rgb, albedo=albedo, shading=shading, depth=depth,
                        weights_sum=wsum)


def render(dual: DualTriPlane, dec: DecoderParams, cam: Camera,
           opts: RenderOptions | None = None, chunk: int = 8192) -> RenderOutput:
    """Reference full-frame render (float64 numpy path)."""
    opts = opts or RenderOptions()
    near, far = opts.resolve_near_far(cam)
    if cam.radius <= near:
        raise ValueError(f"degenerate camera: radius {cam.radius} <= near {near}")
    origins, dirs = generate_rays(cam)
    s = cam.image_size
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    parts = []
    for lo in range(0, o.shape[0], chunk):
        hi = min(lo + chunk, o.shape[0])
        out, _ = render_rays(dual, dec, o[lo:hi], d[lo:hi], opts, near, far,
                             ray_ids=np.arange(lo, hi))
        parts.append(out)
    acc = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return finalize_image(acc, s, s, opts.background, far)


def density_field(dual: DualTriPlane, dec: DecoderParams, pts: np.ndarray) -> np.ndarray:
    """Decoded density at arbitrary points (used for relighting normals)."""
    feat = sample_points(dual.albedo, pts)
    raw = feat @ dec.albedo_weight.T + dec.albedo_bias
    return softplus(raw[..., 0])


def density_normals(dual: DualTriPlane, dec: DecoderParams, pts: np.ndarray,
                    h: float | None = None):
    """Surface normals -grad(sigma)/|grad(sigma)| by central differences.

    Returns (normals (M,3), valid (M,) bool); invalid where the gradient
    vanishes.
    """
    if h is None:
        h = 2.0 / dual.albedo.resolution
    pts = np.asarray(pts, dtype=np.float64)
    grad = np.empty_like(pts)
    for ax in range(3):
        off = np.zeros(3)
        off[ax] = h
        grad[:, ax] = (density_field(dual, dec, pts + off)
                       - density_field(dual, dec, pts - off)) / (2.0 * h)
    norm = np.linalg.norm(grad, axis=1)
    valid = norm > 1e-12
    normals = np.zeros_like(grad)
    normals[valid] = -grad[valid] / norm[valid, None]
    return normals, valid


def render_analytic_relight(dual: DualTriPlane, dec: DecoderParams, cam: Camera,
                            L_new, opts: RenderOptions | None = None,
                            h: float | None = None, chunk: int = 4096) -> RenderOutput:
    """Relight without refitting: replace the stored shading field by
    Lambertian shading of the decoded-density normals under L_new."""
    opts = opts or RenderOptions()
    L_new = as_sh(L_new)
    near, far = opts.resolve_near_far(cam)
    if cam.radius <= near:
        raise ValueError(f"degenerate camera: radius {cam.radius} <= near {near}")
    origins, dirs = generate_rays(cam)
    s = cam.image_size
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    dt = (far - near) / opts.samples_per_ray
    parts = []
    zero_grad_count = 0
    for lo in range(0, o.shape[0], chunk):
        hi = min(lo + chunk, o.shape[0])
        ids = np.arange(lo, hi)
        ts = sample_depths(opts, near, far, ids)
        pts = o[lo:hi, None, :] + ts[..., None] * d[lo:hi, None, :]
        flat = pts.reshape(-1, 3)
        feat_a = sample_points(dual.albedo, flat)
        raw_a = feat_a @ dec.albedo_weight.T + dec.albedo_bias
        sigma = softplus(raw_a[:, 0]).reshape(len(ids), -1)
        albedo = sigmoid(raw_a[:, 1:4]).reshape(len(ids), -1, 3)
        w, _ = composite_weights(sigma, dt)
        # normals only where the sample can contribute
        shade = np.zeros(flat.shape[0])
        active = (w > 1e-9).reshape(-1)
        if np.any(active):
            normals, valid = density_normals(dual, dec, flat[active], h=h)
            sh_active = np.zeros(valid.shape[0])
            if np.any(valid):
                sh_active[valid] = np.maximum(
                    0.0, eval_sh_basis(normals[valid]) @ L_new)
            shade[active] = sh_active
            zero_grad_count += int(np.count_nonzero(~valid))
        shade = shade.reshape(len(ids), -1)
        parts.append({
            "albedo": np.einsum("ns,nsc->nc", w, albedo),
            "shading_acc": np.einsum("ns,ns->n", w, shade),
            "weights_sum": w.sum(axis=1),
            "depth_acc": np.einsum("ns,ns->n", w, ts),
        })
    acc = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    out = finalize_image(acc, s, s, opts.background, far)
    out.diagnostics["zero_gradient_samples"] = zero_grad_count
    return out
