"""Second-order real spherical-harmonic lighting.

Lighting is a plain (9,) float array with coefficients ordered
(Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22).  Shading is monochrome:
one scalar per surface point, shade = max(0, sum_k L_k * Y_k(n)).
Environment maps are equirectangular lat-long grids: azimuth phi in [0, 2pi)
maps to u (columns), polar theta in [0, pi] maps to v (rows).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .fileio import expect_payload, read_container, write_container

ENVMAP_MAGIC = b"RENV"

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = 1.0925484305920792
C3 = 0.31539156525252005
C4 = 0.5462742152960396

N_COEFFS = 9


def as_sh(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if c.shape != (N_COEFFS,):
        raise ValueError(f"expected {N_COEFFS} SH coefficients, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite SH coefficients")
    return c


def eval_sh_basis(direction) -> np.ndarray:
    """Basis values for one or many unit directions; (..., 3) -> (..., 9)."""
    d = np.asarray(direction, dtype=np.float64)
    norms = np.linalg.norm(d, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= 1e-6):
        raise ValueError("direction must be unit length")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (N_COEFFS,))
    out[..., 0] = C0
    out[..., 1] = C1 * y
    out[..., 2] = C1 * z
    out[..., 3] = C1 * x
    out[..., 4] = C2 * x * y
    out[..., 5] = C2 * y * z
    out[..., 6] = C3 * (3.0 * z * z - 1.0)
    out[..., 7] = C2 * x * z
    out[..., 8] = C4 * (x * x - y * y)
    return out


def shade_lambert(L, normal) -> np.ndarray:
    """Clamped SH dot product; accepts a single normal or an (..., 3) stack."""
    basis = eval_sh_basis(normal)
    return np.maximum(0.0, basis @ as_sh(L))


@dataclass
class EnvMap:
    """Equirectangular scalar-radiance map, texels shape (height, width)."""

    texels: np.ndarray

    def __post_init__(self):
        self.texels = np.asarray(self.texels, dtype=np.float64)
        if self.texels.ndim != 2:
            raise ValueError("texels must be (height, width)")
        h, w = self.texels.shape
        if w < 4 or h < 2:
            raise ValueError(f"env map too small: {w}x{h}")
        if not np.all(np.isfinite(self.texels)) or np.any(self.texels < 0):
            raise ValueError("radiance must be finite and >= 0")

    @property
    def width(self) -> int:
        return self.texels.shape[1]

    @property
    def height(self) -> int:
        return self.texels.shape[0]


def envmap_directions(width: int, height: int) -> np.ndarray:
    """Unit directions at texel centers, shape (height, width, 3), z up."""
    theta = (np.arange(height) + 0.5) * np.pi / height
    phi = (np.arange(width) + 0.5) * 2.0 * np.pi / width
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    st = np.sin(th)
    return np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)


def project_envmap_to_sh(env: EnvMap) -> np.ndarray:
    """Discrete quadrature L_k = sum env * Y_k * sin(theta) * dtheta * dphi."""
    h, w = env.height, env.width
    dirs = envmap_directions(w, h)
    basis = eval_sh_basis(dirs)
    theta = (np.arange(h) + 0.5) * np.pi / h
    weight = np.sin(theta)[:, None] * (np.pi / h) * (2.0 * np.pi / w)
    return np.einsum("hw,hwk->k", env.texels * weight, basis)


def rotate_sh_yaw(L, angle: float) -> np.ndarray:
    """Rotate the lighting about the vertical (z) axis.

    Within each band the (m, -m) coefficient pair rotates by m*angle; m=0
    terms are unchanged.
    """
    c = as_sh(L)
    if not np.isfinite(angle):
        raise ValueError("angle must be finite")
    out = c.copy()

    def rot_pair(ip, im, m):
        ca, sa = np.cos(m * angle), np.sin(m * angle)
        out[ip] = ca * c[ip] - sa * c[im]
        out[im] = sa * c[ip] + ca * c[im]

    rot_pair(3, 1, 1)   # (Y11, Y1-1)
    rot_pair(7, 5, 1)   # (Y21, Y2-1)
    rot_pair(8, 4, 2)   # (Y22, Y2-2)
    return out


def align_envmap_convention(env: EnvMap) -> EnvMap:
    """Quarter-turn azimuth shift: texel (u, v) moves to (u + width/4, v)."""
    if env.width % 4 != 0:
        raise ValueError(f"width {env.width} not divisible by 4")
    return EnvMap(np.roll(env.texels, env.width // 4, axis=1))


def renormalize_sh(L) -> np.ndarray:
    """Scale so the mean unclamped shading over the sphere equals 1."""
    c = as_sh(L)
    if c[0] <= 0:
        raise ValueError("non-positive DC coefficient")
    return c / (c[0] * C0)


def save_envmap(env: EnvMap, path) -> None:
    path = str(path)
    if path.endswith(".pfm"):
        _save_pfm(env.texels, path)
    else:
        write_container(path, ENVMAP_MAGIC, (env.width, env.height), env.texels)


def load_envmap(path) -> EnvMap:
    path = str(path)
    if path.endswith(".pfm"):
        return EnvMap(_load_pfm(path))
    (w, h), payload = read_container(path, ENVMAP_MAGIC, 2)
    return EnvMap(expect_payload(payload, w * h).reshape(h, w).astype(np.float64))


def _save_pfm(texels: np.ndarray, path: str) -> None:
    h, w = texels.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        # PFM stores rows bottom-up
        fh.write(np.flipud(texels).astype("<f4").tobytes())


def _load_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM")
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h:
        raise ValueError("PFM payload size mismatch")
    return np.flipud(data.reshape(h, w)).astype(np.float64)
