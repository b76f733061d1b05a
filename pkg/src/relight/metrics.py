"""Evaluation measures for relit sequences.

Lighting recovery works from rendered shading plus normals, so it needs no
pretrained estimator; all distances are defined explicitly here and are only
comparable within this codebase.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sh import as_sh, eval_sh_basis, renormalize_sh, shade_lambert
from .synth import FlowField, warp_backward

PSNR_CAP = 99.0
RIDGE = 1e-3
UNCLAMPED_MIN_SHADE = 0.05


def psnr(image, reference, peak: float = 1.0) -> float:
    """10·log10(peak²/MSE), capped at 99 dB for (near-)identical inputs."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def unclamped_mask(L_target, normals, valid=None,
                   threshold: float = UNCLAMPED_MIN_SHADE) -> np.ndarray:
    """Pixels whose target-lighting shade stays clear of the zero clamp."""
    L = as_sh(L_target)
    n = np.asarray(normals, dtype=np.float64)
    mask = np.zeros(n.shape[:-1], dtype=bool)
    ok = np.linalg.norm(n, axis=-1) > 1e-6 if valid is None else np.asarray(valid, bool)
    if not ok.any():
        return mask
    mask[ok] = shade_lambert(L, n[ok]) > threshold
    return mask


def estimate_lighting(shading, normals, mask) -> np.ndarray:
    """Ridge least-squares SH coefficients from a shading image.

    Solves min_L sum_p (S(p) - basis(n(p))·L)² + RIDGE·|L|² over masked
    pixels.  The caller is responsible for masking out clamped (zero-shade)
    regions, e.g. via unclamped_mask.
    """
    S = np.asarray(shading, dtype=np.float64)
    if S.ndim == 3:
        S = S[..., 0]
    n = np.asarray(normals, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if S.shape != m.shape or n.shape[:-1] != m.shape:
        raise ValueError("shading, normals, and mask shapes disagree")
    if int(m.sum()) < 9:
        raise ValueError(f"need at least 9 masked pixels, got {int(m.sum())}")
    nd = n[m]
    nd = nd / np.linalg.norm(nd, axis=-1, keepdims=True)
    Y = eval_sh_basis(nd)
    gram = Y.T @ Y
    # the ridge must stay a perturbation: once the weakest eigendirection of
    # the gram is within an order of magnitude of RIDGE, the answer is shaped
    # by the regularizer rather than the data, so reject the solve
    smallest = float(np.linalg.eigvalsh(gram)[0])
    if smallest < 10.0 * RIDGE:
        raise ValueError("normal directions too uniform to condition the solve")
    rhs = Y.T @ S[m]
    return np.linalg.solve(gram + RIDGE * np.eye(9), rhs)


def lighting_error(L_target, L_estimate) -> float:
    """Scale-free distance between lighting conditions."""
    a = renormalize_sh(L_target)
    b = renormalize_sh(L_estimate)
    return float(np.linalg.norm(a - b))


def lighting_instability(estimates) -> float:
    """Mean consecutive distance between renormalized per-frame estimates."""
    coeffs = [renormalize_sh(L) for L in estimates]
    if len(coeffs) <= 1:
        return 0.0
    steps = [float(np.linalg.norm(coeffs[i] - coeffs[i - 1]))
             for i in range(1, len(coeffs))]
    return float(np.mean(steps))


def warping_error(frames, flows, masks=None) -> float:
    """Mean masked MSE between each frame and its flow-warped predecessor.

    flows[i] aligns frame i-1 onto frame i's pixel grid (flows[0] unused and
    may be None); masks optionally restrict the comparison further.
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    if len(flows) != len(frames):
        raise ValueError("one flow slot per frame expected")
    errs = []
    for i in range(1, len(frames)):
        f = flows[i]
        if not isinstance(f, FlowField):
            raise TypeError("flows must be FlowField instances")
        sel = f.valid if masks is None else f.valid & np.asarray(masks[i], bool)
        if not sel.any():
            continue
        warped = warp_backward(np.asarray(frames[i - 1], dtype=np.float64), f)
        diff = warped[sel] - np.asarray(frames[i], dtype=np.float64)[sel]
        errs.append(float(np.mean(diff ** 2)))
    if not errs:
        raise ValueError("no valid pixels in any frame pair")
    return float(np.mean(errs))


def adjacent_proxy(frames) -> float:
    """Mean multi-scale L1 between adjacent frames (flicker magnitude)."""
    from .fit import perceptual_proxy

    if len(frames) < 2:
        raise ValueError("need at least two frames")
    vals = [perceptual_proxy(frames[i - 1], frames[i])
            for i in range(1, len(frames))]
    return float(np.mean(vals))


def timing_harness(render_frame, n_frames: int, warmup: int = 2) -> dict:
    """Time a render closure; warmup calls run first and are discarded."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    for _ in range(warmup):
        render_frame()
    seconds = []
    for _ in range(n_frames):
        t0 = time.perf_counter()
        render_frame()
        seconds.append(time.perf_counter() - t0)
    s = np.asarray(seconds)
    mean = float(s.mean())
    median = float(np.median(s))
    p95 = float(np.percentile(s, 95.0))
    return {
        "n_frames": n_frames,
        "warmup": warmup,
        "seconds_mean": mean,
        "seconds_median": median,
        "seconds_p95": p95,
        "fps_mean": 1.0 / mean,
        "fps_median": 1.0 / median,
        "fps_p95": 1.0 / p95,
    }


@dataclass
class MetricReport:
    """Aggregate sequence metrics plus a per-frame breakdown."""

    lighting_error: float
    lighting_instability: float
    warping_error: float
    adjacent_proxy: float
    psnr: float
    fps: float
    rows: list = field(default_factory=list)

    def __post_init__(self):
        scalars = [self.lighting_error, self.lighting_instability,
                   self.warping_error, self.adjacent_proxy, self.psnr, self.fps]
        if not all(math.isfinite(v) and v >= 0 for v in scalars):
            raise ValueError("metrics must be finite and nonnegative")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    def summary(self) -> dict:
        return {
            "lighting_error": self.lighting_error,
            "lighting_instability": self.lighting_instability,
            "warping_error": self.warping_error,
            "adjacent_proxy": self.adjacent_proxy,
            "psnr": self.psnr,
            "fps": self.fps,
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2))
        if self.rows:
            with open(out / "frames.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
                writer.writeheader()
                writer.writerows(self.rows)
