"""Tri-plane feature grids over the unit cube.

A tri-plane holds three axis-aligned R x R x C feature planes (XY, XZ, YZ).
A 3D point is projected onto each plane, bilinearly interpolated with
edge-clamped addressing, and the three features are averaged.  Texel (0, 0)
sits at the (-1, -1) corner; texel centers lie at -1 + (2i+1)/R.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fileio import expect_payload, read_container, write_container

TRIPLANE_MAGIC = b"RTPL"

# (u, v) source axes per plane, indexing into xyz
PLANE_AXES = ((0, 1), (0, 2), (1, 2))


@dataclass
class TriPlane:
    """Three R x R x C planes, stored as one (3, R, R, C) array."""

    planes: np.ndarray

    def __post_init__(self):
        self.planes = np.asarray(self.planes)
        if self.planes.ndim != 4 or self.planes.shape[0] != 3:
            raise ValueError(f"planes must be (3, R, R, C), got {self.planes.shape}")
        if self.planes.shape[1] != self.planes.shape[2]:
            raise ValueError("planes must be square")
        if not np.all(np.isfinite(self.planes)):
            raise ValueError("non-finite plane values")

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    def copy(self) -> "TriPlane":
        return TriPlane(self.planes.copy())


@dataclass
class DualTriPlane:
    """Albedo + shading plane pair; shading was fitted under lighting_tag."""

    albedo: TriPlane
    shading: TriPlane
    lighting_tag: np.ndarray = field(default_factory=lambda: np.zeros(9))

    def __post_init__(self):
        self.lighting_tag = np.asarray(self.lighting_tag, dtype=np.float64)
        if self.lighting_tag.shape != (9,):
            raise ValueError("lighting_tag must hold 9 coefficients")

    def copy(self) -> "DualTriPlane":
        return DualTriPlane(self.albedo.copy(), self.shading.copy(), self.lighting_tag.copy())


@dataclass
class TriPlaneWindow:
    """n consecutive dual tri-planes with their cameras."""

    frames: Sequence[DualTriPlane]
    cameras: Sequence

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("window must hold at least one frame")
        r0 = self.frames[0]
        for f in self.frames:
            if (f.albedo.resolution, f.albedo.channels) != (r0.albedo.resolution, r0.albedo.channels):
                raise ValueError("albedo planes dimension mismatch inside window")
            if (f.shading.resolution, f.shading.channels) != (r0.shading.resolution, r0.shading.channels):
                raise ValueError("shading planes dimension mismatch inside window")

    @property
    def n(self) -> int:
        return len(self.frames)


def new_triplane(resolution: int, channels: int, init: str = "zeros", *,
                 value: float = 0.0, mean: float = 0.0, sd: float = 0.0,
                 seed: int = 0) -> TriPlane:
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    shape = (3, resolution, resolution, channels)
    if init == "zeros":
        planes = np.zeros(shape)
    elif init == "constant":
        planes = np.full(shape, float(value))
    elif init == "gaussian":
        if sd < 0:
            raise ValueError("sd must be >= 0")
        rng = np.random.default_rng(seed)
        planes = rng.normal(mean, sd, shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return TriPlane(planes)


def _lattice_coords(u: np.ndarray, resolution: int):
    """Continuous [-1,1] coordinate -> (lower texel index, fraction in [0,1])."""
    t = (u + 1.0) * (0.5 * resolution) - 0.5
    i0 = np.clip(np.floor(t).astype(np.int64), 0, resolution - 2)
    # fraction relative to the clamped cell; border cells saturate at 0 or 1
    f = np.clip(t - i0, 0.0, 1.0)
    return i0, f


def sample_points(tp: TriPlane, pts: np.ndarray) -> np.ndarray:
    """Vectorized tri-plane lookup: (N, 3) points -> (N, C) features."""
    pts = np.asarray(pts, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite sample point")
    p = np.clip(pts, -1.0, 1.0)
    R = tp.resolution
    acc = 0.0
    for plane_idx, (au, av) in enumerate(PLANE_AXES):
        i0, fu = _lattice_coords(p[..., au], R)
        j0, fv = _lattice_coords(p[..., av], R)
        g = tp.planes[plane_idx]
        fu = fu[..., None]
        fv = fv[..., None]
        acc = acc + ((1 - fu) * (1 - fv) * g[i0, j0]
                     + (1 - fu) * fv * g[i0, j0 + 1]
                     + fu * (1 - fv) * g[i0 + 1, j0]
                     + fu * fv * g[i0 + 1, j0 + 1])
    return acc / 3.0


def sample_triplane(tp: TriPlane, p) -> np.ndarray:
    """Single-point lookup returning the C-vector feature."""
    return sample_points(tp, np.asarray(p, dtype=np.float64)[None, :])[0]


def sample_triplane_grad(tp: TriPlane, p, upstream: np.ndarray):
    """Backprop through one lookup.

    Returns (texel_indices (12,3) int, texel_weights (12,), grad_p (3,)):
    d loss / d planes[pi, i, j, c] = upstream[c] * texel_weights[row],
    grad_p is the derivative of upstream . feature wrt the point (zero where
    the point is clamped to the cube or to the lattice border).
    """
    p = np.asarray(p, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (tp.channels,):
        raise ValueError("upstream must match channel count")
    R = tp.resolution
    pc = np.clip(p, -1.0, 1.0)
    inside_cube = (p >= -1.0) & (p <= 1.0)

    idx = np.zeros((12, 3), dtype=np.int64)
    w = np.zeros(12)
    grad_p = np.zeros(3)
    row = 0
    for plane_idx, (au, av) in enumerate(PLANE_AXES):
        i0, fu = _lattice_coords(np.asarray(pc[au]), R)
        j0, fv = _lattice_coords(np.asarray(pc[av]), R)
        i0 = int(i0)
        j0 = int(j0)
        fu = float(fu)
        fv = float(fv)
        corners = ((i0, j0, (1 - fu) * (1 - fv)),
                   (i0, j0 + 1, (1 - fu) * fv),
                   (i0 + 1, j0, fu * (1 - fv)),
                   (i0 + 1, j0 + 1, fu * fv))
        for (ci, cj, cw) in corners:
            idx[row] = (plane_idx, ci, cj)
            w[row] = cw / 3.0
            row += 1
        # point gradient: d feature / d u = (R/2) * d/d fu of the interpolant
        g = tp.planes[plane_idx]
        up_dot = lambda ci, cj: float(upstream @ g[ci, cj])
        dfu = ((up_dot(i0 + 1, j0) - up_dot(i0, j0)) * (1 - fv)
               + (up_dot(i0 + 1, j0 + 1) - up_dot(i0, j0 + 1)) * fv)
        dfv = ((up_dot(i0, j0 + 1) - up_dot(i0, j0)) * (1 - fu)
               + (up_dot(i0 + 1, j0 + 1) - up_dot(i0 + 1, j0)) * fu)
        scale = 0.5 * R / 3.0
        # clamped lattice border has zero slope: fraction pinned at 0 or 1
        t_u = (pc[au] + 1.0) * 0.5 * R - 0.5
        t_v = (pc[av] + 1.0) * 0.5 * R - 0.5
        if inside_cube[au] and 0.0 <= t_u <= R - 1:
            grad_p[au] += dfu * scale
        if inside_cube[av] and 0.0 <= t_v <= R - 1:
            grad_p[av] += dfv * scale
    return idx, w, grad_p


def add_residual(tp: TriPlane, residual: TriPlane) -> TriPlane:
    if tp.planes.shape != residual.planes.shape:
        raise ValueError(f"shape mismatch: {tp.planes.shape} vs {residual.planes.shape}")
    return TriPlane(tp.planes + residual.planes)


def save_triplane(tp: TriPlane, path) -> None:
    R, C = tp.resolution, tp.channels
    write_container(path, TRIPLANE_MAGIC, (R, C), tp.planes)


def load_triplane(path) -> TriPlane:
    (R, C), payload = read_container(path, TRIPLANE_MAGIC, 2)
    flat = expect_payload(payload, 3 * R * R * C)
    return TriPlane(flat.reshape(3, R, R, C).astype(np.float32))


DUAL_MAGIC = b"RDTP"


def save_dual(dual: DualTriPlane, path) -> None:
    """One container for the pair: both plane sets plus the lighting tag."""
    a, s = dual.albedo, dual.shading
    payload = np.concatenate([a.planes.ravel(), s.planes.ravel(),
                              dual.lighting_tag])
    write_container(path, DUAL_MAGIC, (a.resolution, a.channels,
                                       s.resolution, s.channels), payload)


def load_dual(path) -> DualTriPlane:
    (ra, ca, rs, cs), payload = read_container(path, DUAL_MAGIC, 4)
    na, ns = 3 * ra * ra * ca, 3 * rs * rs * cs
    flat = expect_payload(payload, na + ns + 9).astype(np.float64)
    return DualTriPlane(TriPlane(flat[:na].reshape(3, ra, ra, ca)),
                        TriPlane(flat[na:na + ns].reshape(3, rs, rs, cs)),
                        flat[na + ns:])
