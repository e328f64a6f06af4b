import csv
import json

import numpy as np
import pytest

from rfcodec.cli import main
from rfcodec.codec import compression_savings, quantize_image
from rfcodec.errors import DomainError
from rfcodec.experiment import (
    FULL_LADDER,
    ExperimentResult,
    ScenarioConfig,
    averaged_from_cells,
    build_scene,
    check_invariants,
    configs_from_dict,
    emit_report,
    read_csv,
    run_sweep,
)

TINY = dict(n_frames=3, resolutions=[(32, 18), (48, 27)], crfs=[18, 28], presets=["veryfast", "veryslow"])
SPRITE = {"kind": "sprite", "position": [0.5, 0.5], "size": [0.25, 0.3], "color": [1.0, 0.0, 0.0]}


def test_perfect_twin_ground_truth_equals_render():
    scene = build_scene(ScenarioConfig(**TINY))
    for k in range(3):
        gt = scene.ground_truth(k, 32, 18)
        assert np.array_equal(gt, quantize_image(scene.backend.render(scene.poses[k], 32, 18)))


def test_sprite_changes_exactly_its_pixels():
    plain = build_scene(ScenarioConfig(**TINY))
    scene = build_scene(ScenarioConfig(perturbations=[SPRITE], **TINY))
    gt, ref = scene.ground_truth(1, 32, 18), plain.ground_truth(1, 32, 18)
    diff = np.any(gt != ref, axis=-1)
    expect = np.zeros((18, 32), dtype=bool)
    expect[round(0.35 * 18) : round(0.65 * 18), round(0.375 * 32) : round(0.625 * 32)] = True
    # pixels already the sprite color would not show up as different
    expect &= np.any(ref != [1.0, 0.0, 0.0], axis=-1)
    np.testing.assert_array_equal(diff, expect)


@pytest.mark.parametrize("backend", ["volume", "splat"])
def test_scene_is_deterministic(backend):
    a = build_scene(ScenarioConfig(seed=4, backend=backend, **TINY))
    b = build_scene(ScenarioConfig(seed=4, backend=backend, **TINY))
    assert a.backend.to_bytes() == b.backend.to_bytes() and a.poses == b.poses
    c = build_scene(ScenarioConfig(seed=5, backend=backend, **TINY))
    assert c.backend.digest() != a.backend.digest()


def test_noise_is_shared_across_resolutions():
    cfg = ScenarioConfig(perturbations=[{"kind": "noise", "stddev": 0.05}], n_frames=2, resolutions=[(32, 18), (64, 36)])
    scene = build_scene(cfg)
    lo, hi = scene.ground_truth(0, 32, 18), scene.ground_truth(0, 64, 36)
    assert np.array_equal(lo, scene.ground_truth(0, 32, 18))
    clean = quantize_image(scene.backend.render(scene.poses[0], 32, 18))
    # box-averaging 4 samples halves the noise amplitude
    assert 0.015 < np.std(lo - clean) < 0.035
    assert np.std(hi - quantize_image(scene.backend.render(scene.poses[0], 64, 36))) > 0.04


def test_blur_perturbation_only_touches_the_shared_field():
    cfg = ScenarioConfig(perturbations=[{"kind": "blur", "sigma": 1.0}], **TINY)
    scene = build_scene(cfg)
    assert scene.backend.blur_sigma == 1.0 and scene.truth.blur_sigma == 0.0
    plain = build_scene(ScenarioConfig(**TINY))
    assert np.array_equal(scene.ground_truth(0, 32, 18), plain.ground_truth(0, 32, 18))


@pytest.mark.parametrize(
    "kw",
    [
        dict(resolutions=[]),
        dict(resolutions=[(0, 10)]),
        dict(backend="mesh"),
        dict(perturbations=[{"kind": "noise", "stddev": -1}]),
        dict(perturbations=[{"kind": "fog"}]),
        dict(crfs=[99]),
    ],
)
def test_config_validation(kw):
    with pytest.raises(DomainError):
        ScenarioConfig(**kw)


def test_empty_trajectory_rejected():
    with pytest.raises(DomainError):
        build_scene(ScenarioConfig(trajectory=[], **{k: v for k, v in TINY.items() if k != "n_frames"}))


def test_explicit_trajectory():
    traj = [{"q": [1, 0, 0, 0], "t": [0, 0, float(k)], "timestamp_us": 1000 * k} for k in range(2)]
    scene = build_scene(ScenarioConfig(trajectory=traj, resolutions=[(32, 18)]))
    assert len(scene.poses) == 2 and scene.poses[1].translation == (0.0, 0.0, 1.0)


@pytest.fixture(scope="module")
def sweep():
    return run_sweep(ScenarioConfig(**TINY))


def test_sweep_is_full_factorial(sweep):
    assert len(sweep.cells) == 3 * 2 * 2 * 2 and not sweep.errors
    keys = {(c["frame_id"], c["width"], c["crf"], c["preset"]) for c in sweep.cells}
    assert len(keys) == len(sweep.cells)
    assert len(sweep.quality) == 3 * 2


def test_sweep_savings_and_invariants(sweep):
    for c in sweep.cells:
        assert c["savings_pct"] == compression_savings(c["i_bytes"], c["delta_bytes"])
        assert c["savings_pct"] > 95
    for a in sweep.averaged():
        assert a["n_settings"] == 4
        assert a["savings_min"] <= a["savings_mean"] <= a["savings_max"]
    assert check_invariants(sweep) == []


def test_invariant_violations_are_reported(sweep):
    cells = [dict(c) for c in sweep.cells]
    cells[0]["savings_pct"] += 1.0
    failures = check_invariants(ExperimentResult(cells=cells))
    assert len(failures) == 1 and "drift" in failures[0]
    worse = [dict(c, scenario="b", savings_pct=99.99, i_bytes=9999, delta_bytes=1) for c in sweep.cells]
    fails = check_invariants(ExperimentResult(cells=sweep.cells + worse), orderings=[("empty", "b")])
    assert fails and all("ordering" in f for f in fails)


def test_failing_cell_is_skipped(monkeypatch):
    import rfcodec.experiment as ex

    real = ex.stream_report

    def flaky(packets, decoded, reals, baselines):
        if reals[0].shape[1] == 48:
            raise RuntimeError("boom")
        return real(packets, decoded, reals, baselines)

    monkeypatch.setattr(ex, "stream_report", flaky)
    res = run_sweep(ScenarioConfig(**TINY))
    assert len(res.errors) == 4 and all("boom" in e[-1] for e in res.errors)
    assert {c["width"] for c in res.cells} == {32}


def test_report_files_and_recomputation(sweep, tmp_path):
    paths = emit_report(sweep, tmp_path)
    names = {p.name for p in paths}
    assert {"cells.csv", "savings_averaged.csv", "rf_quality.csv", "table_means.csv", "savings_step_empty_volume.png"} <= names
    cells = read_csv(tmp_path / "cells.csv")
    assert len(cells) == 3 * 2 * 2 * 2
    with (tmp_path / "savings_averaged.csv").open() as fh:
        written = list(csv.DictReader(fh))
    recomputed = averaged_from_cells(cells)
    assert len(written) == len(recomputed)
    for w, r in zip(written, recomputed):
        assert float(w["savings_mean"]) == r["savings_mean"]
    assert (tmp_path / "tx").is_dir() and len(list((tmp_path / "tx").iterdir())) == 8
    with pytest.raises(DomainError):
        emit_report(ExperimentResult(), tmp_path / "none")


def test_config_loading(tmp_path):
    raw = {"seed": 3, "n_frames": 2, "scenarios": [{"name": "empty"}, {"name": "vehicles", "perturbations": [SPRITE]}], "orderings": [["empty", "vehicles"]]}
    configs, orderings = configs_from_dict(raw, backend="splat", full_ladder=True)
    assert [c.name for c in configs] == ["empty", "vehicles"]
    assert all(c.backend == "splat" and c.seed == 3 and c.resolutions == FULL_LADDER for c in configs)
    assert orderings == [("empty", "vehicles")]
    with pytest.raises(DomainError):
        configs_from_dict({"resolution": [[1, 1]]})


def _run_cli(tmp_path, name, *extra):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"crfs": [23], "presets": ["medium"], "scenarios": [{"name": "empty"}, {"name": "vehicles", "perturbations": [SPRITE]}], "orderings": [["empty", "vehicles"]]}))
    out = tmp_path / name
    code = main(["sweep", "--config", str(cfg), "--frames", "3", "--resolution", "32x18", "--seed", "1", "--outdir", str(out), *extra])
    return code, out


def test_cli_sweep_report_and_determinism(tmp_path):
    code_a, a = _run_cli(tmp_path, "a")
    code_b, b = _run_cli(tmp_path, "b")
    assert code_a == code_b == 0
    for f in sorted(a.rglob("*.csv")):
        assert f.read_bytes() == (b / f.relative_to(a)).read_bytes()
    assert (a / "invariants.txt").read_text() == "all invariants hold\n"
    assert main(["report", "--outdir", str(a), "--ordering", "empty,vehicles"]) == 0
    # reversed ordering is false, so the exit code flags it
    assert main(["report", "--outdir", str(a), "--ordering", "vehicles,empty"]) == 1
    assert main(["report", "--outdir", str(tmp_path / "missing")]) == 1


def test_cli_build_scene(tmp_path):
    assert main(["build-scene", "--frames", "2", "--resolution", "32x18", "--outdir", str(tmp_path), "--backend", "splat"]) == 0
    assert (tmp_path / "scene_splat.rfgs").exists()
    manifest = json.loads((tmp_path / "frames" / "vehicles" / "poses.json").read_text())
    assert len(manifest) == 2 and (tmp_path / "frames" / "vehicles" / manifest[0]["image"]).exists()
