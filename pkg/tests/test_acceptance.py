"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line with the measured values."""

import json
import math
import time

import numpy as np
import pytest

from rfcodec.camera import CameraIntrinsics, CameraPose, Ray, quat_to_matrix
from rfcodec.cli import main
from rfcodec.codec import LOSSLESS, CodecConfig, compression_savings, decode_delta, encode_delta, encode_key, quantize_image
from rfcodec.experiment import ScenarioConfig, VEHICLES, build_scene, mean_savings, run_sweep
from rfcodec.hashgrid import GridSchedule, grid_levels
from rfcodec.metrics import psnr, ssim
from rfcodec.netsim import LinkConfig, transmit_sizes
from rfcodec.pipeline import RfBackend, rf_decode_stream, rf_encode_stream
from rfcodec.splat import COV2D_DILATION, SH_C0, Gaussian3D, GaussianCloud, covariance_from_rs, evaluate_gaussian, project_gaussian, render_splats
from rfcodec.volume import RadianceVolume, emission_loss_and_grad, render_ray

SETTINGS = dict(crfs=[18, 23, 28], presets=["veryfast", "medium", "veryslow"])


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


# 1 ---------------------------------------------------------------------------------------


def test_c01_lossless_pipeline_identity(verdict):
    details, ok = [], True
    total = 0.0
    for kind in ("volume", "splat"):
        scene = build_scene(ScenarioConfig(backend=kind, perturbations=VEHICLES, n_frames=144, resolutions=[(160, 90)]))
        frames = scene.frames(160, 90)
        # fresh, uncached twins on both sides so every frame is really rendered twice
        model, cam = scene.backend.model, scene.backend.camera
        sender, receiver = RfBackend(model, cam, scene.cfg.n_samples), RfBackend(model, cam, scene.cfg.n_samples)
        t0 = time.perf_counter()
        wire = [p.to_bytes() for p in rf_encode_stream(frames, sender, LOSSLESS)]
        decoded = rf_decode_stream(wire, receiver, LOSSLESS)
        dt = time.perf_counter() - t0
        total += dt
        bad = sum(int(np.count_nonzero(np.rint(d * 255) != np.rint(f * 255))) for d, (f, _) in zip(decoded, frames))
        ok &= bad == 0 and len(decoded) == 144
        details.append(f"{kind}: {len(decoded)} frames, {bad} differing samples, {dt:.1f}s")
    ok &= total < 60
    verdict(1, ok, "; ".join(details) + f"; total {total:.1f}s (< 60s)")


# 2 ---------------------------------------------------------------------------------------


def test_c02_homogeneous_medium(verdict):
    vol = RadianceVolume(np.broadcast_to([1.0, 0, 0], (4, 4, 4, 3)), np.ones((4, 4, 4)), (-1,) * 3, (3,) * 3)
    rgb = render_ray(vol, Ray(np.array([0.5, 0.5, 0.0]), np.array([0.0, 0, 1]), 0.0, 2.0), 1024)
    err = np.abs(rgb - [1 - math.exp(-2), 0, 0]).max()
    verdict(2, err < 1e-3, f"render {rgb[0]:.6f} vs closed form {1 - math.exp(-2):.6f}, error {err:.2e} (< 1e-3)")


# 3 ---------------------------------------------------------------------------------------


def test_c03_gradient_check(verdict):
    from rfcodec.camera import look_at

    rng = np.random.default_rng(5)
    vol = RadianceVolume(rng.uniform(0.2, 0.8, (2, 2, 2, 3)), rng.uniform(0.5, 2.0, (2, 2, 2)), (0, 0, 0), (1, 1, 1))
    intr = CameraIntrinsics.from_fov(8, 8, 50)
    c = np.full(3, 0.5)
    views = [(intr, look_at(c + off, c), rng.uniform(0, 1, (8, 8, 3))) for off in ([0.3, -0.4, -3], [3, 0.2, 0.5], [-0.5, -3, 0.3])]
    E = rng.uniform(0.1, 0.9, (8, 3))
    _, grad = emission_loss_and_grad(vol, views, 32, emission=E)
    eps, worst = 1e-4, 0.0
    for i in range(8):
        for ch in range(3):
            up, dn = E.copy(), E.copy()
            up[i, ch] += eps
            dn[i, ch] -= eps
            fd = (emission_loss_and_grad(vol, views, 32, up)[0] - emission_loss_and_grad(vol, views, 32, dn)[0]) / (2 * eps)
            worst = max(worst, abs(fd - grad[i, ch]) / abs(grad[i, ch]))
    verdict(3, worst < 1e-4, f"max relative error {worst:.2e} over 24 emission entries (< 1e-4)")


# 4 ---------------------------------------------------------------------------------------


def _oracle(gaussians, intr):
    splats = sorted((s for s in (project_gaussian(g, CameraPose(), intr) for g in gaussians) if s), key=lambda s: s.depth)
    img = np.zeros((intr.height, intr.width, 3))
    for py in range(intr.height):
        for px in range(intr.width):
            T = 1.0
            for s in splats:
                a = s.opacity * evaluate_gaussian(s.cov2d + COV2D_DILATION * np.eye(2), np.array([px + 0.5, py + 0.5]) - s.center)
                img[py, px] += T * a * s.color
                T *= 1 - a
    return np.clip(img, 0, 1)


def test_c04_splat_math(verdict):
    rng = np.random.default_rng(0)
    cov_err = 0.0
    for _ in range(200):
        q, s = rng.normal(size=4), rng.uniform(0.05, 3, 3)
        R = quat_to_matrix(q)
        brute = R @ np.diag(s) @ np.diag(s).T @ R.T
        cov_err = max(cov_err, np.abs(covariance_from_rs(q, s) - brute).max())

    def g(mu, scale=(1, 1, 1)):
        return Gaussian3D(mu, (1, 0, 0, 0), scale, 1.0, np.zeros((1, 3)))

    unit = CameraIntrinsics(20, 20, 1.0, 1.0, 10.0, 10.0)
    j_err = max(
        np.abs(project_gaussian(g((0, 0, 1)), CameraPose(), unit).cov2d - np.eye(2)).max(),
        np.abs(project_gaussian(g((0, 0, 2)), CameraPose(), unit).cov2d - np.eye(2) / 4).max(),
    )
    culled = project_gaussian(g((0, 0, -1)), CameraPose(), unit) is None

    intr = CameraIntrinsics(32, 24, 28.0, 28.0, 16.0, 12.0)
    comp_err = 0.0
    for seed in range(8):
        r = np.random.default_rng(seed)
        gs = [
            Gaussian3D(
                (r.uniform(-1, 1), r.uniform(-0.7, 0.7), r.uniform(2, 5)), tuple(r.normal(size=4)), tuple(r.uniform(0.05, 0.3, 3)),
                float(r.uniform(0.3, 1)), ((r.uniform(0, 1, 3) - 0.5) / SH_C0).reshape(1, 3),
            )
            for _ in range(int(r.integers(1, 11)))
        ]
        img = render_splats(GaussianCloud.from_gaussians(gs), CameraPose(), intr)
        comp_err = max(comp_err, np.abs(img - _oracle(gs, intr)).max())
    ok = cov_err < 1e-12 and j_err < 1e-9 and culled and comp_err < 1.2e-2
    verdict(
        4, ok,
        f"covariance error {cov_err:.1e} (< 1e-12); Jacobian examples error {j_err:.1e} (< 1e-9), z=-1 culled={culled}; "
        f"compositing vs cutoff-free oracle {comp_err:.2e} (< 1.2e-2) on 8 scenes of <= 10 Gaussians",
    )


# 5 ---------------------------------------------------------------------------------------


def test_c05_grid_schedule(verdict):
    s = GridSchedule(n_levels=16, n_min=16, n_max=512)
    levels = grid_levels(s)
    ok = abs(s.growth - 1.2599) < 1e-4 and levels[0] == 16 and levels[-1] == 512
    verdict(5, ok, f"b = {s.growth:.6f}, |b - 1.2599| = {abs(s.growth - 1.2599):.1e}; levels {levels[0]}..{levels[-1]}")


# 6 ---------------------------------------------------------------------------------------


def test_c06_codec_properties(verdict):
    rng = np.random.default_rng(2024)
    failures = 0
    for _ in range(1000):
        h, w = rng.integers(1, 41, 2)
        real = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
        ref = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
        out = decode_delta(encode_delta(real, ref, LOSSLESS), ref, LOSSLESS)
        failures += not np.array_equal(np.rint(out * 255).astype(np.uint8), real)
    mono_bad = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        yy, xx = np.mgrid[0:48, 0:64] / 64
        img = quantize_image(np.clip(0.5 + 0.3 * np.sin(r.uniform(2, 12) * xx + r.uniform(1, 9) * yy)[..., None] + r.normal(0, 0.05, (48, 64, 3)), 0, 1))
        ref = quantize_image(np.clip(img + r.normal(0, 0.04, img.shape), 0, 1))
        keys = [encode_key(img, CodecConfig(c)).size_bytes for c in (18, 23, 28)]
        deltas = [encode_delta(img, ref, CodecConfig(c)).size_bytes for c in (18, 23, 28)]
        mono_bad += not (keys[0] >= keys[1] >= keys[2] and deltas[0] >= deltas[1] >= deltas[2])
    sav = compression_savings(80000, 20000)
    ok = failures == 0 and mono_bad == 0 and sav == 80.0
    verdict(6, ok, f"lossless round trips: {failures}/1000 failures; crf monotonicity violations: {mono_bad}/20; savings(80000, 20000) = {sav!r}")


# 7 ---------------------------------------------------------------------------------------


def test_c07_metrics(verdict):
    p = psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 10.0), peak=255)
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(100):
        h, w = rng.integers(11, 33, 2)
        a, b = rng.uniform(0, 1, (h, w, 3)), rng.uniform(0, 1, (h, w, 3))
        s = ssim(a, b)
        bad += not (abs(ssim(a, a) - 1) < 1e-12 and s == ssim(b, a) and -1 <= s <= 1)
    verdict(7, abs(p - 28.13) <= 0.01 and bad == 0, f"PSNR at MSE 100 / peak 255 = {p:.4f} dB; SSIM property violations {bad}/100")


# 8 ---------------------------------------------------------------------------------------


def test_c08_scene_divergence_trend(verdict):
    lines, ok = [], True
    for kind in ("volume", "splat"):
        avg = {}
        for name, pert in (("empty", []), ("vehicles", VEHICLES)):
            res = run_sweep(ScenarioConfig(name=name, backend=kind, perturbations=pert, n_frames=24, resolutions=[(160, 90)], **SETTINGS))
            avg[name] = np.array([a["savings_mean"] for a in res.averaged()])
        dominated = bool(np.all(avg["empty"] > avg["vehicles"]))
        in_range = all(np.all((v > 0) & (v < 100)) for v in avg.values())
        twin = avg["empty"].min() > 95
        ok &= dominated and in_range and twin
        lines.append(
            f"{kind}: empty {avg['empty'].min():.2f}-{avg['empty'].max():.2f}%, vehicles {avg['vehicles'].min():.2f}-{avg['vehicles'].max():.2f}%, "
            f"strict per-frame dominance {dominated}"
        )
    bracket = {}
    for kind in ("volume", "splat"):
        for sigma in (0.5, 1.0, 2.0, 4.0):
            res = run_sweep(ScenarioConfig(name="blur", backend=kind, perturbations=[{"kind": "blur", "sigma": sigma}], n_frames=8, resolutions=[(160, 90)], **SETTINGS))
            bracket[(kind, sigma)] = mean_savings(res, "blur", (160, 90))
    inside = [k for k, v in bracket.items() if 30 <= v <= 80]
    ok &= bool(inside)
    lines.append("blur bracket (mean savings): " + ", ".join(f"{k}@{s}: {v:.1f}%" for (k, s), v in bracket.items()))
    verdict(8, ok, " | ".join(lines))


# 9 ---------------------------------------------------------------------------------------


def test_c09_resolution_trend(verdict):
    lines, ok = [], True
    for kind in ("volume", "splat"):
        cfg = ScenarioConfig(name="noise", backend=kind, perturbations=[{"kind": "noise", "stddev": 0.03}], n_frames=4, resolutions=[(160, 90), (640, 360)], **SETTINGS)
        res = run_sweep(cfg)
        lo, hi = mean_savings(res, "noise", (160, 90)), mean_savings(res, "noise", (640, 360))
        ok &= lo >= hi
        lines.append(f"{kind}: 160x90 {lo:.2f}% vs 640x360 {hi:.2f}%")
    verdict(9, ok, "; ".join(lines))


# 10 --------------------------------------------------------------------------------------


def test_c10_latency(verdict):
    link = LinkConfig(50e6, budget=0.005)
    delta, key = transmit_sizes([0, 1], [25_000, 80_000], [0.0, 10.0], link)
    ok = delta.tau == 0.004 and delta.within_budget and abs(key.tau - 0.0128) < 1e-15 and not key.within_budget
    verdict(10, ok, f"25000 B: tau = {delta.tau * 1e3:.3f} ms, within 5 ms = {delta.within_budget}; 80000 B: tau = {key.tau * 1e3:.3f} ms, within = {key.within_budget}")


# 11 --------------------------------------------------------------------------------------


def test_c11_determinism(verdict, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_frames": 4, "resolutions": [[160, 90]], "scenarios": [{"name": "empty"}, {"name": "vehicles", "perturbations": VEHICLES}], "orderings": [["empty", "vehicles"]]}))
    outs = []
    for run in ("a", "b"):
        code = main(["sweep", "--config", str(cfg), "--seed", "11", "--outdir", str(tmp_path / run)])
        outs.append((code, {p.relative_to(tmp_path / run): p.read_bytes() for p in sorted((tmp_path / run).rglob("*.csv"))}))
    (ca, fa), (cb, fb) = outs
    same = fa == fb and len(fa) > 0
    verdict(11, same and ca == cb == 0, f"{len(fa)} CSV files, byte-identical = {same}, exit codes {ca}/{cb}")
