"""Analytic test scenes, the reference tracer, baking, and exact flows.

Scenes are sums of smooth density blobs with closed-form gradients, so
density, albedo, normals and therefore every rendered ground-truth quantity
has an analytic oracle.  Sequences rendered from these scenes (with exact
reprojection flow) stand in for real footage everywhere downstream: fitting,
temporal smoothing, metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .camera import Camera, camera_pose_matrix, generate_rays, rays_from_pose
from .fileio import expect_payload, read_container, write_container
from .render import (
    DecoderParams,
    RenderOptions,
    RenderOutput,
    composite_weights,
    finalize_image,
    inv_softplus,
    logit,
    sample_depths,
    sigmoid,
    softplus,
)
from .sh import C0 as SH_C0
from .sh import as_sh, shade_lambert
from .triplane import DualTriPlane, TriPlane

IMAGE_MAGIC = b"RIMG"
FLOW_MAGIC = b"RFLW"

# density targets are clamped into softplus range before inversion
# raw = inv_softplus(density) must stay finite; 1e-200 only catches f64
# underflow, so well-defined fields bake without distortion
DENSITY_FLOOR = 1e-200
DENSITY_CEIL = 1e7
ALBEDO_MARGIN = 1e-4
# clamped shading hits exact zero on the dark hemisphere; 1e-4 is below
# visibility and keeps the plane fit's target range tame
SHADING_FLOOR = 1e-4


@dataclass
class Blob:
    center: np.ndarray
    radius: float
    sharpness: float
    albedo: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise ValueError("blob radius must be > 0")
        if self.sharpness <= 0:
            raise ValueError("blob sharpness must be > 0")
        if np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise ValueError("blob albedo must lie in [0,1]")


@dataclass
class SyntheticScene:
    """Smooth-max blend of blobs; single-blob fields are reproduced exactly."""

    blobs: list
    blend_temperature: float = 1.0
    albedo_floor: float = 1e-6  # weight of the mean albedo in empty space

    def __post_init__(self):
        if not self.blobs:
            raise ValueError("scene needs at least one blob")
        if self.blend_temperature <= 0:
            raise ValueError("blend temperature must be > 0")

    def _blob_raws(self, pts: np.ndarray) -> np.ndarray:
        """(N, n_blobs) pre-activation responses sharp*(radius^2 - |x-c|^2)."""
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty((pts.shape[0], len(self.blobs)))
        for k, b in enumerate(self.blobs):
            d2 = np.sum((pts - b.center) ** 2, axis=-1)
            out[:, k] = b.sharpness * (b.radius ** 2 - d2)
        return out

    def density(self, pts: np.ndarray) -> np.ndarray:
        t = self.blend_temperature
        x = softplus(self._blob_raws(pts)) / t
        m = x.max(axis=1)
        # log1p(sum expm1(x)) == logsumexp once any x is large; branch keeps
        # both ends of the range exact
        small = m < 25.0
        total = np.expm1(np.minimum(x, 30.0)).sum(axis=1)
        lse = m + np.log(np.exp(x - m[:, None]).sum(axis=1))
        return t * np.where(small, np.log1p(total), lse)

    def density_gradient(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        raws = self._blob_raws(pts)
        x = softplus(raws) / self.blend_temperature
        m = x.max(axis=1, keepdims=True)
        # d density / d pt = sum_k e^{x_k} sig'_k / (1 + sum expm1(x));
        # rescaling both sides by e^{-m} keeps every exp in range
        wk = np.exp(x - m)
        den = wk.sum(axis=1) + (1.0 - len(self.blobs)) * np.exp(-m[:, 0])
        grad = np.zeros_like(pts)
        for k, b in enumerate(self.blobs):
            coeff = wk[:, k] * sigmoid(raws[:, k]) * b.sharpness * -2.0 / den
            grad += coeff[:, None] * (pts - b.center)
        return grad

    def albedo(self, pts: np.ndarray) -> np.ndarray:
        w = softplus(self._blob_raws(pts))
        colors = np.stack([b.albedo for b in self.blobs])
        mean_albedo = colors.mean(axis=0)
        num = w @ colors + self.albedo_floor * mean_albedo
        den = w.sum(axis=1, keepdims=True) + self.albedo_floor
        return num / den

    def normal(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unit -grad(density)/|grad|; valid=False where the gradient vanishes."""
        g = self.density_gradient(pts)
        norm = np.linalg.norm(g, axis=-1)
        valid = norm > 1e-12
        n = np.zeros_like(g)
        n[valid] = -g[valid] / norm[valid, None]
        return n, valid


def make_scene(spec: dict) -> SyntheticScene:
    if not spec.get("blobs"):
        raise ValueError("scene spec has no blobs")
    blobs = [Blob(b["center"], b["radius"], b["sharpness"], b["albedo"])
             for b in spec["blobs"]]
    return SyntheticScene(blobs,
                          blend_temperature=spec.get("blend_temperature", 1.0),
                          albedo_floor=spec.get("albedo_floor", 1e-6))


def scene_to_dict(scene: SyntheticScene) -> dict:
    return {
        "blend_temperature": scene.blend_temperature,
        "albedo_floor": scene.albedo_floor,
        "blobs": [{"center": b.center.tolist(), "radius": b.radius,
                   "sharpness": b.sharpness, "albedo": b.albedo.tolist()}
                  for b in scene.blobs],
    }


def save_scene(path, scene: SyntheticScene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path) -> SyntheticScene:
    return make_scene(json.loads(Path(path).read_text()))


def lambertian_sphere(radius: float = 0.55, sharpness: float = 40.0,
                      albedo=(0.75, 0.45, 0.3)) -> SyntheticScene:
    """The workhorse single-blob scene used by most oracles."""
    return SyntheticScene([Blob((0.0, 0.0, 0.0), radius, sharpness, albedo)])


def render_reference(scene: SyntheticScene, cam: Camera, L,
                     opts: RenderOptions | None = None,
                     chunk: int = 4096) -> RenderOutput:
    """Ray-trace the analytic fields with the renderer's exact quadrature."""
    opts = opts or RenderOptions()
    L = as_sh(L)
    near, far = opts.resolve_near_far(cam)
    if cam.radius <= near:
        raise ValueError(f"degenerate camera: radius {cam.radius} <= near {near}")
    origins, dirs = generate_rays(cam)
    s = cam.image_size
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    dt = (far - near) / opts.samples_per_ray
    parts = []
    zero_grad = 0
    for lo in range(0, o.shape[0], chunk):
        hi = min(lo + chunk, o.shape[0])
        ids = np.arange(lo, hi)
        ts = sample_depths(opts, near, far, ids)
        pts = o[lo:hi, None, :] + ts[..., None] * d[lo:hi, None, :]
        flat = pts.reshape(-1, 3)
        sigma = scene.density(flat).reshape(len(ids), -1)
        alb = scene.albedo(flat).reshape(len(ids), -1, 3)
        normals, valid = scene.normal(flat)
        shade = np.zeros(flat.shape[0])
        shade[valid] = shade_lambert(L, normals[valid])
        zero_grad += int(np.count_nonzero(~valid))
        shade = shade.reshape(len(ids), -1)
        w, _ = composite_weights(sigma, dt)
        parts.append({
            "albedo": np.einsum("ns,nsc->nc", w, alb),
            "shading_acc": np.einsum("ns,ns->n", w, shade),
            "weights_sum": w.sum(axis=1),
            "depth_acc": np.einsum("ns,ns->n", w, ts),
        })
    acc = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    out = finalize_image(acc, s, s, opts.background, far)
    out.diagnostics["zero_gradient_samples"] = zero_grad
    return out


# --- baking ---------------------------------------------------------------

def _texel_centers(resolution: int) -> np.ndarray:
    return -1.0 + (2.0 * np.arange(resolution) + 1.0) / resolution


def _solve_separable(target: np.ndarray, ridge: float = 1e-8,
                     tol: float = 1e-10, maxiter: int = 400) -> np.ndarray:
    """Least-squares planes for mean-of-planes(x_i,y_j,z_k) ~ target[i,j,k].

    At texel centers each grid point reads exactly one texel per plane, so the
    normal equations involve only axis sums; solved matrix-free with CG.
    The gauge freedom (constant shifts between planes) is pinned by the ridge.
    """
    r = target.shape[0]
    n = r * r

    def unpack(v):
        return v[:n].reshape(r, r), v[n:2 * n].reshape(r, r), v[2 * n:].reshape(r, r)

    def matvec(v):
        a, b, c = unpack(v)  # a: xy, b: xz, c: yz
        oa = r * a + b.sum(axis=1)[:, None] + c.sum(axis=1)[None, :]
        ob = r * b + a.sum(axis=1)[:, None] + c.sum(axis=0)[None, :]
        oc = r * c + a.sum(axis=0)[:, None] + b.sum(axis=0)[None, :]
        out = np.concatenate([oa.ravel(), ob.ravel(), oc.ravel()])
        return out / 9.0 + ridge * v

    rhs = np.concatenate([target.sum(axis=2).ravel(), target.sum(axis=1).ravel(),
                          target.sum(axis=0).ravel()]) / 3.0
    op = LinearOperator((3 * n, 3 * n), matvec=matvec, dtype=np.float64)
    sol, info = cg(op, rhs, rtol=tol, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise RuntimeError(f"plane least-squares did not converge (info={info})")
    return np.stack(unpack(sol))


def _invertible_feature_targets(raw_targets: np.ndarray, weight: np.ndarray,
                                bias: np.ndarray) -> np.ndarray:
    """Feature values whose affine decode reproduces raw_targets (min-norm)."""
    sv = np.linalg.svd(weight, compute_uv=False)
    if sv[-1] < 1e-9:
        raise ValueError("decoder weights are not invertible")
    pinv = np.linalg.pinv(weight)
    return (raw_targets - bias) @ pinv.T


def bake_scene_to_triplanes(scene: SyntheticScene, resolution: int,
                            dec: DecoderParams, L=None,
                            chunk_slabs: int = 8,
                            return_report: bool = False):
    """Dual tri-planes whose decoded fields best match the scene on the
    texel-center lattice; the shading plane is baked under lighting L."""
    L = as_sh(L) if L is not None else np.r_[1.0, np.zeros(8)]
    r = resolution
    centers = _texel_centers(r)
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    clamped = {"density": 0, "albedo": 0, "shading": 0}

    raw_sigma = np.empty((r, r, r))
    raw_rgb = np.empty((r, r, r, 3))
    raw_shade = np.empty((r, r, r))
    for lo in range(0, r, max(1, r // chunk_slabs)):
        hi = min(lo + max(1, r // chunk_slabs), r)
        zs = centers[lo:hi]
        pts = np.stack(np.meshgrid(centers, centers, zs, indexing="ij"),
                       axis=-1).reshape(-1, 3)
        dens = scene.density(pts)
        clamped["density"] += int(np.count_nonzero((dens < DENSITY_FLOOR)
                                                   | (dens > DENSITY_CEIL)))
        raw_sigma[:, :, lo:hi] = inv_softplus(
            np.clip(dens, DENSITY_FLOOR, DENSITY_CEIL)).reshape(r, r, -1)

        alb = scene.albedo(pts)
        clamped["albedo"] += int(np.count_nonzero((alb < ALBEDO_MARGIN)
                                                  | (alb > 1 - ALBEDO_MARGIN)))
        raw_rgb[:, :, lo:hi] = logit(
            np.clip(alb, ALBEDO_MARGIN, 1 - ALBEDO_MARGIN)).reshape(r, r, -1, 3)

        normals, valid = scene.normal(pts)
        # orientation-free points take the angular mean of the shade (its DC
        # level) so the target stays smooth across the validity boundary
        ambient = max(SHADING_FLOOR, float(L[0]) * SH_C0)
        shade = np.full(pts.shape[0], ambient)
        shade[valid] = shade_lambert(L, normals[valid])
        clamped["shading"] += int(np.count_nonzero(~valid)
                                  + np.count_nonzero(shade < SHADING_FLOOR))
        raw_shade[:, :, lo:hi] = inv_softplus(
            np.clip(shade, SHADING_FLOOR, DENSITY_CEIL)).reshape(r, r, -1)

    raw_albedo_targets = np.concatenate([raw_sigma[..., None], raw_rgb], axis=-1)
    feat_a = _invertible_feature_targets(
        raw_albedo_targets.reshape(-1, 4), dec.albedo_weight, dec.albedo_bias)
    feat_s = _invertible_feature_targets(
        raw_shade.reshape(-1, 1), dec.shading_weight, dec.shading_bias)

    ca = dec.albedo_weight.shape[1]
    cs = dec.shading_weight.shape[1]
    planes_a = np.empty((3, r, r, ca))
    for c in range(ca):
        planes_a[..., c] = _solve_separable(feat_a[:, c].reshape(r, r, r))
    planes_s = np.empty((3, r, r, cs))
    for c in range(cs):
        planes_s[..., c] = _solve_separable(feat_s[:, c].reshape(r, r, r))

    dual = DualTriPlane(TriPlane(planes_a), TriPlane(planes_s), lighting_tag=L)
    if return_report:
        return dual, clamped
    return dual


# --- exact optical flow ----------------------------------------------------

@dataclass
class FlowField:
    """Pixel displacements on the source grid plus a validity mask."""

    flow: np.ndarray   # (H, W, 2) dx, dy
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise ValueError("flow must be (H, W, 2)")
        if self.valid.shape != self.flow.shape[:2]:
            raise ValueError("valid mask shape mismatch")
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("flow must be finite")


def flow_between_poses(depth_src: np.ndarray, pose_src: np.ndarray, intr_src,
                       pose_dst: np.ndarray, intr_dst,
                       foreground: np.ndarray | None = None,
                       depth_dst: np.ndarray | None = None,
                       occlusion_tol: float = 0.05) -> FlowField:
    """Exact reprojection flow between two explicit poses.

    intr = (focal_pixels, cx, cy, image_size).  Unprojects each source pixel
    by its ray depth and reprojects into the destination camera; pixels that
    land outside the destination frame, sit behind its image plane, or fall
    outside the optional foreground mask are flagged invalid.  When depth_dst
    is given, pixels whose reprojected distance disagrees with the
    destination depth map (relative tol) are flagged too: they are occluded
    in the destination view.
    """
    f_src, cx_s, cy_s, s = intr_src
    if depth_src.shape != (s, s):
        raise ValueError("depth map does not match source camera size")
    origins, dirs = rays_from_pose(pose_src, f_src, (cx_s, cy_s), s)
    pts = origins + depth_src[..., None] * dirs

    f_dst, cx_d, cy_d, sd = intr_dst
    x_cam = (pts - pose_dst[:3, 3]) @ pose_dst[:3, :3]
    z = x_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = cx_d + f_dst * x_cam[..., 0] / z
        py = cy_d + f_dst * x_cam[..., 1] / z
    iy, ix = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="ij")
    flow = np.stack([px - ix, py - iy], axis=-1)

    valid = ((z > 1e-9) & (px >= 0.5) & (px <= sd - 0.5)
             & (py >= 0.5) & (py <= sd - 0.5))
    if depth_dst is not None:
        dist = np.linalg.norm(pts - pose_dst[:3, 3], axis=-1)
        seen = _bilinear_at(depth_dst, np.where(valid, px, 0.5),
                            np.where(valid, py, 0.5))
        valid &= np.abs(dist - seen) <= occlusion_tol * np.maximum(dist, 1e-9)
    if foreground is not None:
        valid &= foreground
    flow[~np.isfinite(flow)] = 0.0
    return FlowField(flow, valid)


def _bilinear_at(image: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Sample a (H, W) map at pixel-center coordinates, edge-clamped."""
    h, w = image.shape[:2]
    gx = np.clip(px - 0.5, 0.0, w - 1.0)
    gy = np.clip(py - 0.5, 0.0, h - 1.0)
    x0 = np.clip(np.floor(gx).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(gy).astype(np.int64), 0, h - 2)
    fx = gx - x0
    fy = gy - y0
    return ((1 - fy) * ((1 - fx) * image[y0, x0] + fx * image[y0, x0 + 1])
            + fy * ((1 - fx) * image[y0 + 1, x0] + fx * image[y0 + 1, x0 + 1]))


def _intrinsics(cam: Camera):
    cx, cy = cam.principal_pixels
    return (cam.focal_pixels, cx, cy, cam.image_size)


def ground_truth_flow(depth_src: np.ndarray, cam_src: Camera, cam_dst: Camera,
                      foreground: np.ndarray | None = None,
                      depth_dst: np.ndarray | None = None,
                      occlusion_tol: float = 0.05) -> FlowField:
    """Camera-level wrapper over flow_between_poses.

    Pass (depth_i, cam_i, cam_{i-1}) to get the flow that backward-warps
    frame i-1 onto frame i's grid.
    """
    return flow_between_poses(depth_src, camera_pose_matrix(cam_src),
                              _intrinsics(cam_src), camera_pose_matrix(cam_dst),
                              _intrinsics(cam_dst), foreground=foreground,
                              depth_dst=depth_dst, occlusion_tol=occlusion_tol)


def warp_backward(image: np.ndarray, field: FlowField) -> np.ndarray:
    """Bilinear lookup of `image` at pixel + flow; invalid pixels keep the
    unwarped value at their own position."""
    h, w = field.flow.shape[:2]
    img = np.asarray(image, dtype=np.float64)
    if img.shape[:2] != (h, w):
        raise ValueError("image size does not match flow field")
    flat = img.reshape(h, w, -1)
    iy, ix = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    # pixel-center coordinates -> lattice coordinates
    gx = np.clip(ix + field.flow[..., 0] - 0.5, 0.0, w - 1.0)
    gy = np.clip(iy + field.flow[..., 1] - 0.5, 0.0, h - 1.0)
    x0 = np.clip(np.floor(gx).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(gy).astype(np.int64), 0, h - 2)
    fx = (gx - x0)[..., None]
    fy = (gy - y0)[..., None]
    out = ((1 - fy) * ((1 - fx) * flat[y0, x0] + fx * flat[y0, x0 + 1])
           + fy * ((1 - fx) * flat[y0 + 1, x0] + fx * flat[y0 + 1, x0 + 1]))
    out[~field.valid] = flat[~field.valid]
    return out.reshape(img.shape)


# --- sequences and bundle IO ------------------------------------------------

@dataclass
class GroundTruthBundle:
    frames: list            # RenderOutput per frame
    cameras: list           # Camera per frame
    lighting: np.ndarray    # (9,)
    flows_short: list       # FlowField | None per frame (None at index 0)
    flows_long: list        # FlowField | None per frame (None at index 0)
    background: tuple = (0.0, 0.0, 0.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lighting = as_sh(self.lighting)
        if not (len(self.frames) == len(self.cameras) == len(self.flows_short)
                == len(self.flows_long)):
            raise ValueError("bundle lists must have equal length")


def generate_sequence(scene: SyntheticScene, cam_path: list, L,
                      opts: RenderOptions | None = None,
                      foreground_threshold: float = 0.5) -> GroundTruthBundle:
    if len(cam_path) < 2:
        raise ValueError("need at least two cameras")
    opts = opts or RenderOptions()
    frames = [render_reference(scene, cam, L, opts) for cam in cam_path]
    flows_short: list = [None]
    flows_long: list = [None]
    for i in range(1, len(cam_path)):
        fg = frames[i].weights_sum > foreground_threshold
        flows_short.append(ground_truth_flow(frames[i].depth, cam_path[i],
                                             cam_path[i - 1], foreground=fg,
                                             depth_dst=frames[i - 1].depth))
        flows_long.append(ground_truth_flow(frames[i].depth, cam_path[i],
                                            cam_path[0], foreground=fg,
                                            depth_dst=frames[0].depth))
    return GroundTruthBundle(frames, list(cam_path), as_sh(L), flows_short,
                             flows_long, background=opts.background)


def _camera_to_dict(cam: Camera) -> dict:
    return {"yaw": cam.yaw, "pitch": cam.pitch, "radius": cam.radius,
            "focal": cam.focal, "roll": cam.roll,
            "principal": cam.principal.tolist(), "image_size": cam.image_size}


def _camera_from_dict(d: dict) -> Camera:
    return Camera(yaw=d["yaw"], pitch=d["pitch"], radius=d["radius"],
                  focal=d["focal"], roll=d["roll"],
                  principal=np.asarray(d["principal"]),
                  image_size=d["image_size"])


def _write_image(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    write_container(path, IMAGE_MAGIC, (w, h, c), img.astype(np.float32))


def _read_image(path) -> np.ndarray:
    (w, h, c), payload = read_container(path, IMAGE_MAGIC, 3)
    data = expect_payload(payload, w * h * c).astype(np.float64)
    img = data.reshape(h, w, c)
    return img[..., 0] if c == 1 else img


def _write_flow(path, f: FlowField) -> None:
    h, w = f.valid.shape
    packed = np.concatenate([f.flow, f.valid[..., None].astype(np.float64)], axis=-1)
    write_container(path, FLOW_MAGIC, (w, h, 3), packed.astype(np.float32))


def _read_flow(path) -> FlowField:
    (w, h, c), payload = read_container(path, FLOW_MAGIC, 3)
    if c != 3:
        raise ValueError(f"flow container must have 3 channels, got {c}")
    data = expect_payload(payload, w * h * 3).astype(np.float64).reshape(h, w, 3)
    return FlowField(data[..., :2], data[..., 2] > 0.5)


def save_bundle(directory, bundle: GroundTruthBundle) -> None:
    root = Path(directory)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "flows").mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(bundle.frames):
        base = root / "frames" / f"{i:04d}"
        _write_image(f"{base}.rgb.f32", fr.rgb)
        _write_image(f"{base}.albedo.f32", fr.albedo)
        _write_image(f"{base}.shading.f32", fr.shading)
        _write_image(f"{base}.depth.f32", fr.depth)
        _write_image(f"{base}.wsum.f32", fr.weights_sum)
    for i in range(1, len(bundle.frames)):
        _write_flow(root / "flows" / f"{i:04d}.short.f32", bundle.flows_short[i])
        _write_flow(root / "flows" / f"{i:04d}.long.f32", bundle.flows_long[i])
    meta = {
        "n_frames": len(bundle.frames),
        "lighting": bundle.lighting.tolist(),
        "background": list(bundle.background),
        "cameras": [_camera_to_dict(c) for c in bundle.cameras],
        "extra": bundle.meta,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_bundle(directory) -> GroundTruthBundle:
    root = Path(directory)
    meta = json.loads((root / "meta.json").read_text())
    n = meta["n_frames"]
    frames = []
    for i in range(n):
        base = root / "frames" / f"{i:04d}"
        rgb = _read_image(f"{base}.rgb.f32")
        shading = _read_image(f"{base}.shading.f32")
        frames.append(RenderOutput(
            rgb=rgb,
            albedo=_read_image(f"{base}.albedo.f32"),
            shading=shading if shading.ndim == 3 else shading[..., None],
            depth=_read_image(f"{base}.depth.f32"),
            weights_sum=_read_image(f"{base}.wsum.f32"),
        ))
    flows_short: list = [None]
    flows_long: list = [None]
    for i in range(1, n):
        flows_short.append(_read_flow(root / "flows" / f"{i:04d}.short.f32"))
        flows_long.append(_read_flow(root / "flows" / f"{i:04d}.long.f32"))
    return GroundTruthBundle(frames, [_camera_from_dict(d) for d in meta["cameras"]],
                             np.asarray(meta["lighting"]), flows_short, flows_long,
                             background=tuple(meta["background"]),
                             meta=meta.get("extra", {}))
