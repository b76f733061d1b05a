"""CLI behavior: argument handling, error paths, and the full file pipeline.

Commands run in-process through cli.main so exit codes and the one-line JSON
summaries are asserted directly.
"""

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from relight import cli
from relight.camera import Camera
from relight.metrics import psnr
from relight.render import RenderOptions, default_decoder, render
from relight.synth import (generate_sequence, lambertian_sphere, load_scene,
                           render_reference, save_bundle)
from relight.triplane import load_dual, save_dual

DC = np.array([1.0] + [0.0] * 8)


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def last_json(out: str) -> dict:
    return json.loads(out.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with a scene and a baked tri-plane file built via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    scene_path = root / "scene.json"
    planes_path = root / "planes.rdtp"
    assert cli.main(["gen-scene", "--out", str(scene_path)]) == 0
    assert cli.main(["bake", "--scene", str(scene_path), "--out",
                     str(planes_path), "--resolution", "48"]) == 0
    return {"root": root, "scene": scene_path, "planes": planes_path}


class TestParsing:
    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0

    def test_no_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["transmogrify"])
        assert exc.value.code == 2

    def test_bad_channel_choice_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["render", "--triplane", "x", "--out", "y",
                      "--channel", "depth"])
        assert exc.value.code == 2

    def test_serve_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["serve", "--help"])
        assert exc.value.code == 0


class TestErrorPaths:
    def test_missing_triplane_file(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "render", "--triplane",
                               tmp_path / "nope.rdtp", "--out", tmp_path / "o.png")
        assert code == 1
        assert "not found" in err

    def test_corrupt_triplane_file(self, capsys, tmp_path):
        bad = tmp_path / "bad.rdtp"
        bad.write_bytes(b"JUNK" + b"\x00" * 64)
        code, _, err = run_cli(capsys, "render", "--triplane", bad,
                               "--out", tmp_path / "o.png")
        assert code == 1
        assert "magic" in err

    def test_bad_sh_count(self, capsys, ws, tmp_path):
        code, _, err = run_cli(capsys, "relight", "--triplane", ws["planes"],
                               "--out", tmp_path / "o.png", "--sh", "1 0 0")
        assert code == 1
        assert "9" in err

    def test_bad_iters(self, capsys, ws, tmp_path):
        code, _, err = run_cli(capsys, "fit", "--bundle", tmp_path,
                               "--out", tmp_path / "o.rdtp", "--iters", "5,5")
        assert code == 1

    def test_smooth_empty_directory(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "smooth", "--frames", tmp_path,
                               "--out", tmp_path / "out", "--tau", "1.0")
        assert code == 1
        assert "no .rdtp" in err


class TestGenScene:
    def test_sphere_preset(self, capsys, tmp_path):
        out = tmp_path / "s.json"
        code, stdout, _ = run_cli(capsys, "gen-scene", "--out", out)
        assert code == 0
        summary = last_json(stdout)
        assert summary["status"] == "ok"
        assert summary["blobs"] == 1
        assert load_scene(out).blobs[0].radius == pytest.approx(0.55)

    def test_blobs_preset_is_seed_deterministic(self, capsys, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
        run_cli(capsys, "gen-scene", "--out", a, "--preset", "blobs", "--seed", "7")
        run_cli(capsys, "gen-scene", "--out", b, "--preset", "blobs", "--seed", "7")
        run_cli(capsys, "gen-scene", "--out", c, "--preset", "blobs", "--seed", "8")
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()


class TestPipeline:
    def test_bake_reports_clamp_counts(self, capsys, ws):
        code, stdout, _ = run_cli(capsys, "bake", "--scene", ws["scene"],
                                  "--out", ws["root"] / "planes2.rdtp",
                                  "--resolution", "32")
        assert code == 0
        summary = last_json(stdout)
        assert summary["resolution"] == 32
        assert all(isinstance(v, int) for v in summary["clamped"].values())

    def test_render_matches_in_process_render(self, capsys, ws):
        out_png = ws["root"] / "view.png"
        code, stdout, _ = run_cli(
            capsys, "render", "--triplane", ws["planes"], "--out", out_png,
            "--yaw", "0.3", "--pitch", "-0.15", "--size", "33", "--spp", "32")
        assert code == 0
        assert last_json(stdout)["channel"] == "rgb"
        image = np.asarray(Image.open(out_png), dtype=np.float64) / 255.0
        assert image.shape == (33, 33, 3)

        dual = load_dual(ws["planes"])
        dec = default_decoder(dual.albedo.channels, dual.shading.channels)
        cam = Camera(yaw=0.3, pitch=-0.15, radius=2.7, focal=700.0, image_size=33)
        out = render(dual, dec, cam, RenderOptions(samples_per_ray=32))
        assert psnr(image, out.rgb) >= 40.0  # only 8-bit quantization between them

        scene = load_scene(ws["scene"])
        ref = render_reference(scene, cam, DC, RenderOptions(samples_per_ray=32))
        assert psnr(image, ref.rgb) >= 30.0

    def test_shading_channel_writes_grayscale(self, capsys, ws):
        out_png = ws["root"] / "shading.png"
        code, _, _ = run_cli(capsys, "render", "--triplane", ws["planes"],
                             "--out", out_png, "--channel", "shading",
                             "--size", "17", "--spp", "8")
        assert code == 0
        with Image.open(out_png) as img:
            assert img.mode == "L"
            assert img.size == (17, 17)

    def test_relight_changes_the_image(self, capsys, ws):
        plain = ws["root"] / "plain.png"
        relit = ws["root"] / "relit.png"
        run_cli(capsys, "render", "--triplane", ws["planes"], "--out", plain,
                "--size", "17", "--spp", "8")
        code, stdout, _ = run_cli(
            capsys, "relight", "--triplane", ws["planes"], "--out", relit,
            "--sh", "0.8,0,0.45,0,0,0,0,0,0", "--size", "17", "--spp", "8")
        assert code == 0
        assert len(last_json(stdout)["sh"]) == 9
        a = np.asarray(Image.open(plain))
        b = np.asarray(Image.open(relit))
        assert a.shape == b.shape and (a != b).any()


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundles")
    scene = lambertian_sphere()
    small = [Camera(yaw=0.25 * i, pitch=0.0, radius=2.7, focal=700.0,
                    image_size=9) for i in range(3)]
    save_bundle(root / "small",
                generate_sequence(scene, small, DC, RenderOptions(samples_per_ray=4)))
    wide = [Camera(yaw=0.2 * i, pitch=0.05, radius=2.7, focal=700.0,
                   image_size=49) for i in range(3)]
    save_bundle(root / "wide",
                generate_sequence(scene, wide, DC, RenderOptions(samples_per_ray=16)))
    return root


class TestFit:
    def test_tiny_fit_writes_planes_and_report(self, capsys, bundle_dir, tmp_path):
        out = tmp_path / "fit.rdtp"
        report_dir = tmp_path / "report"
        code, stdout, _ = run_cli(
            capsys, "fit", "--bundle", bundle_dir / "small", "--out", out,
            "--resolution", "16", "--iters", "2,2,2", "--spp", "4")
        assert code == 0
        summary = last_json(stdout)
        assert summary["stages"] == [2, 2, 2]
        assert len(summary["seconds"]) == 3
        assert np.isfinite(summary["psnr"])
        dual = load_dual(out)
        assert dual.albedo.resolution == 16

        code, _, _ = run_cli(
            capsys, "fit", "--bundle", bundle_dir / "small", "--out", out,
            "--resolution", "16", "--iters", "2,2,2", "--spp", "4",
            "--report", report_dir)
        assert code == 0
        assert (report_dir / "summary.json").exists()


class TestSmooth:
    def test_round_trip_preserves_near_identity(self, capsys, ws, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        rng = np.random.default_rng(0)
        base = load_dual(ws["planes"])
        for i in range(3):
            noisy = type(base)(
                albedo=type(base.albedo)(base.albedo.planes
                                         + rng.normal(0, 0.01, base.albedo.planes.shape)),
                shading=base.shading, lighting_tag=base.lighting_tag)
            save_dual(noisy, frames / f"{i:03d}.rdtp")
        out_dir = tmp_path / "smoothed"
        code, stdout, _ = run_cli(capsys, "smooth", "--frames", frames,
                                  "--out", out_dir, "--tau", "1e-9",
                                  "--window", "3")
        assert code == 0
        assert last_json(stdout)["frames"] == 3
        for i in range(3):
            before = load_dual(frames / f"{i:03d}.rdtp")
            after = load_dual(out_dir / f"{i:03d}.rdtp")
            np.testing.assert_allclose(after.albedo.planes, before.albedo.planes,
                                       atol=1e-5)


class TestEval:
    def test_scores_rendered_frames(self, capsys, ws, bundle_dir, tmp_path):
        from relight.synth import load_bundle

        bundle = load_bundle(bundle_dir / "wide")
        dual = load_dual(ws["planes"])
        dec = default_decoder(dual.albedo.channels, dual.shading.channels)
        renders = tmp_path / "renders"
        renders.mkdir()
        for i, cam in enumerate(bundle.cameras):
            out = render(dual, dec, cam, RenderOptions(samples_per_ray=16))
            u8 = np.clip(np.rint(out.rgb * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(u8, mode="RGB").save(renders / f"{i:03d}.png")

        out_dir = tmp_path / "metrics"
        code, stdout, _ = run_cli(
            capsys, "eval", "--bundle", bundle_dir / "wide", "--renders", renders,
            "--triplane", ws["planes"], "--scene", ws["scene"],
            "--out", out_dir, "--spp", "16")
        assert code == 0
        summary = last_json(stdout)
        assert summary["status"] == "ok"
        for key in ("psnr", "warping_error", "adjacent_proxy", "fps",
                    "lighting_error", "lighting_instability"):
            assert np.isfinite(summary[key]), key
        assert summary["psnr"] > 25.0
        assert summary["fps"] > 0.0
        assert summary["lighting_frames"] >= 1
        assert summary["lighting_error"] < 0.2
        saved = json.loads((out_dir / "summary.json").read_text())
        assert saved["psnr"] == pytest.approx(summary["psnr"])
        assert (out_dir / "frames.csv").exists()

    def test_render_count_mismatch_fails(self, capsys, ws, bundle_dir, tmp_path):
        renders = tmp_path / "one"
        renders.mkdir()
        Image.fromarray(np.zeros((49, 49, 3), np.uint8), mode="RGB").save(
            renders / "000.png")
        code, _, err = run_cli(
            capsys, "eval", "--bundle", bundle_dir / "wide", "--renders", renders,
            "--triplane", ws["planes"])
        assert code == 1
        assert "renders vs" in err or "bundle frames" in err
