"""Orbit-parameterized pinhole cameras.

World frame is z-up; the camera orbits the origin and always looks at it.
Camera frame follows the vision convention: x right, y down, z forward.
Focal length and principal point are stored in 512-scale units and converted
to pixels as value * image_size / 512, so the same numbers work at any
render resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

PRINCIPAL_SCALE = 512.0

# orbit sampling supports: (focal, radius, principal) gaussians and
# (pitch, yaw) uniform in degrees, roll gaussian in degrees
FIRST_SLOT = dict(focal=(18.837, 1.0), radius=(2.7, 0.1), principal=(256.0, 14.0),
                  pitch_deg=26.0, yaw_deg=49.0, roll_sd_deg=2.0)
SECOND_SLOT = dict(focal=18.837, radius=2.7, principal=256.0,
                   pitch_deg=26.0, yaw_deg=36.0, roll=0.0)

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class Camera:
    yaw: float
    pitch: float
    radius: float
    focal: float
    roll: float = 0.0
    principal: np.ndarray = field(default_factory=lambda: np.array([256.0, 256.0]))
    image_size: int = 128

    def __post_init__(self):
        self.principal = np.asarray(self.principal, dtype=np.float64).reshape(2)
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if self.focal <= 0:
            raise ValueError("focal must be > 0")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")

    @property
    def focal_pixels(self) -> float:
        return self.focal * self.image_size / PRINCIPAL_SCALE

    @property
    def principal_pixels(self) -> np.ndarray:
        return self.principal * self.image_size / PRINCIPAL_SCALE

    def default_near_far(self) -> tuple[float, float]:
        return self.radius - 1.0, self.radius + 1.0

    def position(self) -> np.ndarray:
        cp = math.cos(self.pitch)
        return self.radius * np.array([cp * math.sin(self.yaw),
                                       -cp * math.cos(self.yaw),
                                       math.sin(self.pitch)])


def camera_pose_matrix(cam: Camera) -> np.ndarray:
    """4x4 world-from-camera transform (columns: right, down, forward, position)."""
    pos = cam.position()
    forward = -pos / np.linalg.norm(pos)
    right = np.cross(forward, WORLD_UP)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("degenerate pose: view axis parallel to world up")
    right /= nr
    down = np.cross(forward, right)
    if cam.roll != 0.0:
        cr, sr = math.cos(cam.roll), math.sin(cam.roll)
        right, down = cr * right + sr * down, -sr * right + cr * down
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = down
    m[:3, 2] = forward
    m[:3, 3] = pos
    return m


def rays_from_pose(pose: np.ndarray, focal_pixels: float, principal_pixels,
                   image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel rays for an explicit world-from-camera pose."""
    s = image_size
    cx, cy = principal_pixels
    px, py = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="xy")
    d_cam = np.stack([(px - cx) / focal_pixels, (py - cy) / focal_pixels,
                      np.ones_like(px)], axis=-1)
    d_world = d_cam @ pose[:3, :3].T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose[:3, 3], d_world.shape).copy()
    return origins, d_world


def generate_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel rays: (origins (H,W,3), unit directions (H,W,3))."""
    return rays_from_pose(camera_pose_matrix(cam), cam.focal_pixels,
                          cam.principal_pixels, cam.image_size)


def sample_camera_pose(rng_seed: int, view_slot: str = "first",
                       image_size: int = 128) -> Camera:
    """Draw one camera from the orbit pose distribution.

    The first slot draws focal, radius, principal point, pitch, yaw and roll
    from their full distributions; the second slot only draws pitch and yaw
    (narrower) and fixes everything else.
    """
    rng = np.random.default_rng(rng_seed)
    if view_slot == "first":
        p = FIRST_SLOT
        focal = rng.normal(*p["focal"])
        radius = rng.normal(*p["radius"])
        principal = rng.normal(p["principal"][0], p["principal"][1], size=2)
        pitch = math.radians(rng.uniform(-p["pitch_deg"], p["pitch_deg"]))
        yaw = math.radians(rng.uniform(-p["yaw_deg"], p["yaw_deg"]))
        roll = math.radians(rng.normal(0.0, p["roll_sd_deg"]))
    elif view_slot == "second":
        p = SECOND_SLOT
        focal = p["focal"]
        radius = p["radius"]
        principal = np.array([p["principal"], p["principal"]])
        pitch = math.radians(rng.uniform(-p["pitch_deg"], p["pitch_deg"]))
        yaw = math.radians(rng.uniform(-p["yaw_deg"], p["yaw_deg"]))
        roll = p["roll"]
    else:
        raise ValueError(f"unknown view slot {view_slot!r}")
    # keep sampled scale parameters physical even in the distribution tails
    focal = max(focal, 1.0)
    radius = max(radius, 1.2)
    return Camera(yaw=yaw, pitch=pitch, radius=radius, focal=focal, roll=roll,
                  principal=principal, image_size=image_size)


def interpolate_cameras(a: Camera, b: Camera, t: float) -> Camera:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0,1], got {t}")
    if a.image_size != b.image_size:
        raise ValueError("image_size mismatch")
    lerp = lambda x, y: (1.0 - t) * x + t * y
    return Camera(yaw=lerp(a.yaw, b.yaw), pitch=lerp(a.pitch, b.pitch),
                  radius=lerp(a.radius, b.radius), focal=lerp(a.focal, b.focal),
                  roll=lerp(a.roll, b.roll),
                  principal=lerp(a.principal, b.principal),
                  image_size=a.image_size)


def smooth_pose_sequence(poses: Sequence[Camera], alpha: float) -> list[Camera]:
    """Exponential smoothing of each pose parameter; first pose unchanged."""
    if not poses:
        raise ValueError("empty pose list")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0,1], got {alpha}")
    out = [replace(poses[0])]
    state = np.array([poses[0].yaw, poses[0].pitch, poses[0].roll,
                      poses[0].radius, poses[0].focal,
                      poses[0].principal[0], poses[0].principal[1]])
    for cam in list(poses)[1:]:
        x = np.array([cam.yaw, cam.pitch, cam.roll, cam.radius, cam.focal,
                      cam.principal[0], cam.principal[1]])
        state = alpha * x + (1.0 - alpha) * state
        out.append(Camera(yaw=state[0], pitch=state[1], roll=state[2],
                          radius=state[3], focal=state[4],
                          principal=state[5:7].copy(),
                          image_size=cam.image_size))
    return out
