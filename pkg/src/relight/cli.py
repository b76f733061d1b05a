"""Command-line entry points for the scene/bake/fit/render/serve pipeline.

Every subcommand prints one JSON summary line on success, so shell pipelines
can consume results without scraping prose.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .fileio import FileFormatError
from .fit import FitConfig, fit
from .metrics import (MetricReport, adjacent_proxy, estimate_lighting,
                      lighting_error, lighting_instability, psnr,
                      timing_harness, unclamped_mask, warping_error)
from .protocol import ProtocolError, quantize_u8
from .render import RenderOptions, default_decoder, render, render_analytic_relight
from .service import Service
from .sh import as_sh
from .synth import (Blob, SyntheticScene, bake_scene_to_triplanes,
                    lambertian_sphere, load_bundle, load_scene, save_scene)
from .temporal import nonparametric_smooth
from .triplane import load_dual, save_dual


def _parse_sh(text: str) -> np.ndarray:
    parts = text.replace(",", " ").split()
    if len(parts) != 9:
        raise ValueError(f"--sh needs 9 numbers, got {len(parts)}")
    return as_sh([float(p) for p in parts])


def _parse_iters(text: str) -> tuple:
    parts = [int(p) for p in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError(f"--iters needs 3 stage counts, got {len(parts)}")
    return tuple(parts)


def _camera_flags(sub):
    sub.add_argument("--yaw", type=float, default=0.0)
    sub.add_argument("--pitch", type=float, default=0.0)
    sub.add_argument("--roll", type=float, default=0.0)
    sub.add_argument("--radius", type=float, default=2.7)
    sub.add_argument("--focal", type=float, default=700.0)
    sub.add_argument("--size", type=int, default=128)
    sub.add_argument("--spp", type=int, default=64)


def _camera(args):
    from .camera import Camera
    return Camera(yaw=args.yaw, pitch=args.pitch, roll=args.roll,
                  radius=args.radius, focal=args.focal, image_size=args.size)


def _write_png(path, image: np.ndarray) -> None:
    img = quantize_u8(image)
    pil = Image.fromarray(img[..., 0] if img.shape[2] == 1 else img,
                          mode="L" if img.shape[2] == 1 else "RGB")
    pil.save(path)


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def _cmd_gen_scene(args) -> int:
    if args.preset == "sphere":
        scene = lambertian_sphere()
    else:
        rng = np.random.default_rng(args.seed)
        blobs = [Blob(center=rng.uniform(-0.45, 0.45, 3),
                      radius=float(rng.uniform(0.2, 0.4)),
                      sharpness=float(rng.uniform(30.0, 60.0)),
                      albedo=rng.uniform(0.2, 0.9, 3))
                 for _ in range(int(rng.integers(2, 4)))]
        scene = SyntheticScene(blobs)
    save_scene(args.out, scene)
    _emit({"status": "ok", "out": str(args.out), "preset": args.preset,
           "blobs": len(scene.blobs)})
    return 0


def _cmd_bake(args) -> int:
    scene = load_scene(args.scene)
    light = _parse_sh(args.sh)
    dec = default_decoder()
    dual, report = bake_scene_to_triplanes(scene, args.resolution, dec,
                                           light, return_report=True)
    save_dual(dual, args.out)
    _emit({"status": "ok", "out": str(args.out), "resolution": args.resolution,
           "clamped": {k: int(v) for k, v in report.items()}})
    return 0


def _cmd_render(args) -> int:
    dual = load_dual(args.triplane)
    dec = default_decoder(dual.albedo.channels, dual.shading.channels)
    out = render(dual, dec, _camera(args), RenderOptions(samples_per_ray=args.spp))
    image = {"rgb": out.rgb, "albedo": out.albedo, "shading": out.shading}[args.channel]
    _write_png(args.out, image)
    _emit({"status": "ok", "out": str(args.out), "size": args.size,
           "channel": args.channel})
    return 0


def _cmd_relight(args) -> int:
    dual = load_dual(args.triplane)
    dec = default_decoder(dual.albedo.channels, dual.shading.channels)
    light = _parse_sh(args.sh)
    out = render_analytic_relight(dual, dec, _camera(args), light,
                                  RenderOptions(samples_per_ray=args.spp))
    image = {"rgb": out.rgb, "albedo": out.albedo, "shading": out.shading}[args.channel]
    _write_png(args.out, image)
    _emit({"status": "ok", "out": str(args.out), "sh": [float(v) for v in light]})
    return 0


def _cmd_fit(args) -> int:
    bundle = load_bundle(args.bundle)
    cfg = FitConfig(resolution=args.resolution,
                    stage_iterations=_parse_iters(args.iters),
                    learning_rate=args.lr, samples_per_ray=args.spp,
                    seed=args.seed)
    dual, report = fit(bundle, cfg)
    save_dual(dual, args.out)
    if args.report is not None:
        Path(args.report).mkdir(parents=True, exist_ok=True)
        report.save(args.report)
    _emit({"status": "ok", "out": str(args.out), "psnr": report.final_psnr,
           "stages": list(cfg.stage_iterations),
           "seconds": [round(s, 3) for s in report.stage_seconds]})
    return 0


def _cmd_smooth(args) -> int:
    frames_dir = Path(args.frames)
    paths = sorted(frames_dir.glob("*.rdtp"))
    if not paths:
        raise FileNotFoundError(f"no .rdtp frames found in {frames_dir}")
    sequence = [load_dual(p) for p in paths]
    window = min(args.window, len(sequence))
    smoothed = nonparametric_smooth(sequence, args.tau, window, patch=args.patch)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, dual in zip(paths, smoothed):
        save_dual(dual, out_dir / path.name)
    _emit({"status": "ok", "out": str(out_dir), "frames": len(smoothed),
           "tau": args.tau, "window": window})
    return 0


def _load_renders(directory) -> list:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no .png renders found in {directory}")
    return [np.asarray(Image.open(p), dtype=np.float64) / 255.0 for p in paths]


def _cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    renders = _load_renders(args.renders)
    if len(renders) != len(bundle.frames):
        raise ValueError(f"{len(renders)} renders vs {len(bundle.frames)} bundle frames")
    refs = [f.rgb for f in bundle.frames]
    if renders[0].shape != refs[0].shape:
        raise ValueError(f"render shape {renders[0].shape} does not match "
                         f"bundle frames {refs[0].shape}")
    psnr_frames = [psnr(r, ref) for r, ref in zip(renders, refs)]
    we = warping_error(renders, bundle.flows_short) if len(renders) > 1 else 0.0
    adj = adjacent_proxy(renders) if len(renders) > 1 else 0.0

    dual = load_dual(args.triplane)
    dec = default_decoder(dual.albedo.channels, dual.shading.channels)
    opts = RenderOptions(samples_per_ray=args.spp)
    fps_stats = timing_harness(
        lambda: render(dual, dec, bundle.cameras[0], opts), n_frames=3, warmup=1)

    le_frames, estimates = [], []
    if args.scene is not None:
        scene = load_scene(args.scene)
        for cam in bundle.cameras:
            out = render(dual, dec, cam, opts)
            estimate = _lighting_from_frame(scene, cam, out, opts, bundle.lighting)
            if estimate is None:
                continue
            estimates.append(estimate)
            le_frames.append(lighting_error(bundle.lighting, estimate))
    le = float(np.mean(le_frames)) if le_frames else 0.0
    li = lighting_instability(estimates) if len(estimates) > 1 else 0.0

    rows = [{"frame": i, "psnr": p} for i, p in enumerate(psnr_frames)]
    report = MetricReport(lighting_error=le, lighting_instability=li,
                          warping_error=we, adjacent_proxy=adj,
                          psnr=float(np.mean(psnr_frames)),
                          fps=fps_stats["fps_mean"], rows=rows)
    if args.out is not None:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        report.save(args.out)
    _emit({"status": "ok", **report.summary(),
           "lighting_frames": len(estimates)})
    return 0


def _lighting_from_frame(scene, cam, out, opts, target_light):
    """Per-frame lighting estimate from surface pixels, or None.

    Uses every pixel at least half covered so the normals span a wide cone;
    restricting to fully solid pixels keeps only the object's center, whose
    near-parallel normals cannot condition a 9-coefficient solve.
    """
    from .camera import generate_rays

    W = out.weights_sum
    fg = W > 0.5
    if fg.sum() < 64:
        return None
    # depth composites the background at far; undo that to get the mean hit
    _, far = opts.resolve_near_far(cam)
    depth = (out.depth - (1.0 - W) * far) / np.maximum(W, 1e-8)
    origins, dirs = generate_rays(cam)
    points = origins + dirs * depth[..., None]
    normals, valid = scene.normal(points.reshape(-1, 3))
    normals = normals.reshape(depth.shape + (3,))
    valid = valid.reshape(depth.shape)
    mask = fg & valid & unclamped_mask(target_light, normals)
    if mask.sum() < 9:
        return None
    try:
        return estimate_lighting(out.shading, normals, mask)
    except ValueError:
        return None  # normals too clustered on this view


def _cmd_serve(args) -> int:
    dual = load_dual(args.triplane)
    service = Service(dual, host=args.host, port=args.port,
                      renderer=args.renderer, size=args.size, spp=args.spp,
                      yaw=args.yaw, pitch=args.pitch, radius=args.radius,
                      lighting=_parse_sh(args.sh) if args.sh else None)

    async def _run():
        port = await service.start()
        _emit({"status": "serving", "host": args.host, "port": port,
               "renderer": args.renderer})
        try:
            await asyncio.Future()
        finally:
            await service.stop()

    asyncio.run(_run())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relight",
        description="Dual tri-plane scene pipeline: synthesize, bake, fit, "
                    "render, relight, smooth, evaluate, serve.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-scene", help="write a synthetic blob scene")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=("sphere", "blobs"), default="sphere")
    p.set_defaults(func=_cmd_gen_scene)

    p = subs.add_parser("bake", help="project a scene onto dual tri-planes")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--sh", default="1 0 0 0 0 0 0 0 0")
    p.set_defaults(func=_cmd_bake)

    p = subs.add_parser("render", help="render a tri-plane file to PNG")
    p.add_argument("--triplane", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channel", choices=("rgb", "albedo", "shading"), default="rgb")
    _camera_flags(p)
    p.set_defaults(func=_cmd_render)

    p = subs.add_parser("relight", help="render under new lighting without refitting")
    p.add_argument("--triplane", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sh", required=True)
    p.add_argument("--channel", choices=("rgb", "albedo", "shading"), default="rgb")
    _camera_flags(p)
    p.set_defaults(func=_cmd_relight)

    p = subs.add_parser("fit", help="fit dual tri-planes to a posed bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--iters", default="2000,2000,4000")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--spp", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_fit)

    p = subs.add_parser("smooth", help="deflicker a directory of tri-plane frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--patch", type=int, default=4)
    p.set_defaults(func=_cmd_smooth)

    p = subs.add_parser("eval", help="score rendered frames against a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--renders", required=True)
    p.add_argument("--triplane", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--spp", type=int, default=32)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("serve", help="stream frames over WebSocket")
    p.add_argument("--triplane", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--renderer", choices=("reference", "fast"), default="fast")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--spp", type=int, default=64)
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--radius", type=float, default=2.7)
    p.add_argument("--sh", default=None)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 1
    except (FileFormatError, ProtocolError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
