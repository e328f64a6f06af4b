"""Seeded desk-scale experiments: scenes, perturbations, sweeps and reports.

Ground-truth frames are renders of the true scene plus controlled
perturbations, so the gap between the shared radiance field and the "real"
camera is a known quantity:

* ``sprite``: a solid rectangle pasted in image space (a vehicle the field lacks)
* ``lighting_shift``: a per-channel offset
* ``noise``: Gaussian sensor noise drawn at the finest swept resolution and
  box-averaged down, so lower resolutions see proportionally less of it
* ``blur``: low-pass filters the shared field's renders (a field that missed detail)
* ``pose_noise``: the sender transmits a jittered pose
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, CameraPose
from .codec import CodecConfig, compression_savings, quantize_image
from .errors import DomainError
from .metrics import aggregate, psnr, ssim
from .netsim import LinkConfig, transmit, transmit_sizes, write_tx_csv
from .pipeline import RfBackend, per_frame_baselines, rf_decode_stream, rf_encode_stream, stream_report
from .scene import cloud_from_volume, street_trajectory, street_volume

log = logging.getLogger(__name__)

DESK_RESOLUTIONS = [(160, 90), (320, 180), (640, 360)]
FULL_LADDER = [(300, 168), (640, 360), (960, 540), (1280, 720), (1920, 1080)]
PERTURBATION_KINDS = ("sprite", "lighting_shift", "noise", "blur", "pose_noise")

CELL_FIELDS = [
    "scenario", "backend", "frame_id", "width", "height", "crf", "preset",
    "i_bytes", "p_bytes", "delta_bytes", "packet_bytes", "savings_pct",
    "tau_s", "baseline_tau_s", "latency_s", "within_budget", "psnr_db", "ssim",
]
AVERAGED_FIELDS = ["scenario", "backend", "frame_id", "width", "height", "n_settings", "savings_mean", "savings_min", "savings_max"]


@dataclass
class ScenarioConfig:
    name: str = "empty"
    seed: int = 0
    backend: str = "volume"
    perturbations: list = field(default_factory=list)
    n_frames: int = 144
    trajectory: list | None = None
    resolutions: list = field(default_factory=lambda: list(DESK_RESOLUTIONS))
    crfs: list = field(default_factory=lambda: [18, 23, 28])
    presets: list = field(default_factory=lambda: ["veryfast", "medium", "veryslow"])
    fov_deg: float = 70.0
    n_samples: int = 64
    throughput_bps: float = 50e6
    budget_s: float = 0.005
    propagation_delay_s: float = 0.0

    def __post_init__(self):
        self.resolutions = [tuple(int(v) for v in r) for r in self.resolutions]
        if not self.resolutions or any(w <= 0 or h <= 0 for w, h in self.resolutions):
            raise DomainError("resolutions must be a non-empty list of positive (w, h)")
        if self.backend not in ("volume", "splat"):
            raise DomainError(f"unknown backend {self.backend!r}")
        for p in self.perturbations:
            kind = p.get("kind")
            if kind not in PERTURBATION_KINDS:
                raise DomainError(f"unknown perturbation kind {kind!r}")
            if kind == "noise" and p.get("stddev", 0) < 0:
                raise DomainError("noise stddev must be >= 0")
            if kind == "blur" and p.get("sigma", 0) < 0:
                raise DomainError("blur sigma must be >= 0")
        for crf in self.crfs:
            CodecConfig(crf, "medium")
        for preset in self.presets:
            CodecConfig(23, preset)

    def settings(self):
        return [CodecConfig(c, p) for c in self.crfs for p in self.presets]

    def perturbation(self, kind):
        return [p for p in self.perturbations if p["kind"] == kind]


class Scene:
    """The shared field plus the generator of 'real' frames."""

    def __init__(self, cfg: ScenarioConfig, backend: RfBackend, truth: RfBackend, poses: list):
        self.cfg = cfg
        self.backend = backend
        self.truth = truth
        self.poses = poses
        self._noise_ref = max(w for w, _ in cfg.resolutions)

    def _rng(self, frame: int, slot: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.cfg.seed, spawn_key=(frame, slot)))

    def ground_truth(self, k: int, width: int, height: int) -> np.ndarray:
        img = self.truth.render(self.poses[k], width, height).copy()
        for slot, p in enumerate(self.cfg.perturbations):
            kind = p["kind"]
            if kind == "lighting_shift":
                img = img + np.asarray(p["offset"], dtype=np.float64)
            elif kind == "sprite":
                cx, cy = p["position"]
                sw, sh = p["size"]
                x0, x1 = int(round((cx - sw / 2) * width)), int(round((cx + sw / 2) * width))
                y0, y1 = int(round((cy - sh / 2) * height)), int(round((cy + sh / 2) * height))
                img[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = np.asarray(p["color"], dtype=np.float64)
            elif kind == "noise" and p.get("stddev", 0) > 0:
                f = max(1, int(round(self._noise_ref / width)))
                n = self._rng(k, slot).normal(0.0, p["stddev"], size=(height * f, width * f, 3))
                img = img + n.reshape(height, f, width, f, 3).mean(axis=(1, 3))
        return quantize_image(np.clip(img, 0.0, 1.0))

    def frames(self, width: int, height: int) -> list:
        return [(self.ground_truth(k, width, height), pose) for k, pose in enumerate(self.poses)]

    def pose_noise(self):
        p = self.cfg.perturbation("pose_noise")
        if not p:
            return None, None
        rng = np.random.default_rng(np.random.SeedSequence(self.cfg.seed, spawn_key=(0, 1000)))
        return (p[0].get("translation", 0.0), p[0].get("rotation", 0.0)), rng


def _poses(cfg: ScenarioConfig) -> list:
    if cfg.trajectory is not None:
        return [CameraPose(tuple(e["q"]), tuple(e["t"]), int(e.get("timestamp_us", 0))) for e in cfg.trajectory]
    return street_trajectory(cfg.n_frames)


def build_scene(cfg: ScenarioConfig) -> Scene:
    poses = _poses(cfg)
    if not poses:
        raise DomainError("trajectory is empty")
    w, h = cfg.resolutions[0]
    camera = CameraIntrinsics.from_fov(w, h, cfg.fov_deg)
    vol = street_volume(cfg.seed)
    model = vol if cfg.backend == "volume" else cloud_from_volume(vol)
    blur = sum(p.get("sigma", 0.0) for p in cfg.perturbation("blur"))
    truth = RfBackend(model, camera, cfg.n_samples, 0.0, cache={})
    backend = RfBackend(model, camera, cfg.n_samples, blur, cache={}) if blur > 0 else truth
    return Scene(cfg, backend, truth, poses)


@dataclass
class ExperimentResult:
    cells: list = field(default_factory=list)
    quality: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    tx: dict = field(default_factory=dict)

    def extend(self, other: "ExperimentResult"):
        self.cells += other.cells
        self.quality += other.quality
        self.errors += other.errors
        self.tx.update(other.tx)

    def averaged(self) -> list:
        return averaged_from_cells(self.cells)


def averaged_from_cells(cells) -> list:
    """Per (scenario, backend, frame, resolution) mean savings over all settings."""
    groups = {}
    for c in cells:
        key = (c["scenario"], c["backend"], int(c["width"]), int(c["height"]), int(c["frame_id"]))
        groups.setdefault(key, []).append(float(c["savings_pct"]))
    out = []
    for (sc, be, w, h, fid), vals in sorted(groups.items()):
        out.append(
            {
                "scenario": sc, "backend": be, "frame_id": fid, "width": w, "height": h,
                "n_settings": len(vals), "savings_mean": float(np.mean(vals)),
                "savings_min": min(vals), "savings_max": max(vals),
            }
        )
    return out


def run_sweep(cfg: ScenarioConfig) -> ExperimentResult:
    """Every frame x resolution x crf x preset cell for one scenario.

    A failing cell is logged in ``errors`` and skipped; the sweep continues.
    """
    scene = build_scene(cfg)
    link = LinkConfig(cfg.throughput_bps, cfg.propagation_delay_s, cfg.budget_s)
    result = ExperimentResult()
    for width, height in cfg.resolutions:
        frames = scene.frames(width, height)
        reals = [f for f, _ in frames]
        res_label = f"{width}x{height}"
        for k, (real, pose) in enumerate(frames):
            rf = quantize_image(scene.backend.render(pose, width, height))
            result.quality.append(
                {
                    "scenario": cfg.name, "backend": cfg.backend, "resolution": res_label, "frame_id": k,
                    "psnr_db": psnr(real, rf), "ssim": ssim(real, rf),
                }
            )
        for codec_cfg in cfg.settings():
            try:
                baselines = per_frame_baselines(reals, codec_cfg)
                noise, rng = scene.pose_noise()
                enc_errors = []
                packets = rf_encode_stream(frames, scene.backend, codec_cfg, errors=enc_errors, pose_noise=noise, rng=rng)
                for fid, exc in enc_errors:
                    result.errors.append((cfg.name, res_label, codec_cfg.crf, codec_cfg.preset, fid, repr(exc)))
                decoded = rf_decode_stream(packets, scene.backend, codec_cfg)
                ids = [p.frame_id for p in packets]
                stats = stream_report(packets, decoded, [reals[i] for i in ids], [baselines[i] for i in ids])
                tx = transmit(packets, link)
                base_tx = transmit_sizes(ids, [baselines[i][0] for i in ids], [p.pose.timestamp * 1e-6 for p in packets], link)
            except Exception as exc:  # noqa: BLE001 - a broken cell must not abort the sweep
                log.exception("cell %s %s crf=%s %s failed", cfg.name, res_label, codec_cfg.crf, codec_cfg.preset)
                result.errors.append((cfg.name, res_label, codec_cfg.crf, codec_cfg.preset, None, repr(exc)))
                continue
            result.tx[(cfg.name, cfg.backend, width, height, codec_cfg.crf, codec_cfg.preset)] = tx
            for fs, rec, brec in zip(stats.frames, tx, base_tx):
                result.cells.append(
                    {
                        "scenario": cfg.name, "backend": cfg.backend, "frame_id": fs.frame_id,
                        "width": width, "height": height, "crf": codec_cfg.crf, "preset": codec_cfg.preset,
                        "i_bytes": fs.i_bytes, "p_bytes": fs.p_bytes, "delta_bytes": fs.delta_bytes,
                        "packet_bytes": fs.packet_bytes, "savings_pct": fs.savings,
                        "tau_s": rec.tau, "baseline_tau_s": brec.tau, "latency_s": rec.latency,
                        "within_budget": int(rec.within_budget), "psnr_db": fs.psnr_db, "ssim": fs.ssim,
                    }
                )
    return result


def run_experiment(configs) -> ExperimentResult:
    result = ExperimentResult()
    for cfg in configs:
        result.extend(run_sweep(cfg))
    return result


def check_invariants(result: ExperimentResult, configs=(), orderings=()) -> list[str]:
    """Human-readable descriptions of every violated invariant (empty when all hold)."""
    failures = []
    for c in result.cells:
        expect = compression_savings(int(c["i_bytes"]), int(c["delta_bytes"]))
        if float(c["savings_pct"]) != expect:
            failures.append(f"savings drift at {c['scenario']} frame {c['frame_id']}: {c['savings_pct']} != {expect}")
        if not 0.0 < float(c["savings_pct"]) < 100.0:
            failures.append(f"savings outside (0, 100) at {c['scenario']} frame {c['frame_id']}")
        if int(c["crf"]) == 0 and float(c["psnr_db"]) != math.inf:
            failures.append(f"lossless cell not exact at {c['scenario']} frame {c['frame_id']}")
    avg = averaged_from_cells(result.cells)
    for a in avg:
        if not a["savings_min"] <= a["savings_mean"] <= a["savings_max"]:
            failures.append(f"averaged savings outside per-setting range at {a}")
    by_key = {(a["scenario"], a["backend"], a["width"], a["height"], a["frame_id"]): a["savings_mean"] for a in avg}
    for better, worse in orderings:
        pairs = [(k, v) for k, v in by_key.items() if k[0] == better]
        for k, v in pairs:
            other = by_key.get((worse,) + k[1:])
            if other is not None and not v >= other:
                failures.append(f"ordering {better} >= {worse} fails at {k[1:]}: {v:.3f} < {other:.3f}")
    for cfg in configs:
        if not cfg.perturbation("noise") or len(cfg.resolutions) < 2:
            continue
        lo = min(cfg.resolutions, key=lambda r: r[0] * r[1])
        hi = max(cfg.resolutions, key=lambda r: r[0] * r[1])
        m_lo = mean_savings(result, cfg.name, lo)
        m_hi = mean_savings(result, cfg.name, hi)
        if m_lo is not None and m_hi is not None and not m_lo >= m_hi:
            failures.append(f"{cfg.name}: savings at {lo} ({m_lo:.2f}) below {hi} ({m_hi:.2f}) under noise")
    return failures


def mean_savings(result: ExperimentResult, scenario: str, resolution) -> float | None:
    vals = [
        float(c["savings_pct"]) for c in result.cells
        if c["scenario"] == scenario and (int(c["width"]), int(c["height"])) == tuple(resolution)
    ]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------------------
# files


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return v


def _write(path, fields, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})


_INT_FIELDS = {"frame_id", "width", "height", "crf", "i_bytes", "p_bytes", "delta_bytes", "packet_bytes", "within_budget", "n_settings"}


def read_csv(path) -> list[dict]:
    rows = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            out = {}
            for k, v in r.items():
                if k in _INT_FIELDS:
                    out[k] = int(v)
                elif k in ("scenario", "backend", "preset", "resolution"):
                    out[k] = v
                else:
                    out[k] = float(v)
            rows.append(out)
    return rows


def plot_savings(averaged, path, title=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3.5))
    for w, h in sorted({(a["width"], a["height"]) for a in averaged}):
        sel = sorted((a for a in averaged if (a["width"], a["height"]) == (w, h)), key=lambda a: a["frame_id"])
        ax.step([a["frame_id"] for a in sel], [a["savings_mean"] for a in sel], where="mid", label=f"{w}x{h}")
    ax.set_xlabel("frame")
    ax.set_ylabel("savings [%]")
    ax.set_ylim(0, 100)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def write_averaged_outputs(cells, outdir) -> list[Path]:
    outdir = Path(outdir)
    avg = averaged_from_cells(cells)
    paths = [outdir / "savings_averaged.csv"]
    _write(paths[0], AVERAGED_FIELDS, avg)
    for sc, be in sorted({(a["scenario"], a["backend"]) for a in avg}):
        p = outdir / f"savings_step_{sc}_{be}.png"
        plot_savings([a for a in avg if (a["scenario"], a["backend"]) == (sc, be)], p, f"{sc} / {be}")
        paths.append(p)
    return paths


def emit_report(result: ExperimentResult, outdir) -> list[Path]:
    if not result.cells:
        raise DomainError("nothing to report: the result has no cells")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / "cells.csv"]
    _write(paths[0], CELL_FIELDS, result.cells)
    paths += write_averaged_outputs(result.cells, outdir)
    if result.quality:
        report = aggregate(result.quality)
        report.write_rows_csv(outdir / "rf_quality.csv")
        report.write_groups_csv(outdir / "rf_quality_groups.csv")
        report.write_table_csv(outdir / "table_means.csv")
        paths += [outdir / "rf_quality.csv", outdir / "rf_quality_groups.csv", outdir / "table_means.csv"]
    if result.tx:
        txdir = outdir / "tx"
        txdir.mkdir(exist_ok=True)
        for (sc, be, w, h, crf, preset), recs in sorted(result.tx.items()):
            p = txdir / f"{sc}_{be}_{w}x{h}_crf{crf}_{preset}.csv"
            write_tx_csv(recs, p)
            paths.append(p)
    if result.errors:
        p = outdir / "errors.json"
        p.write_text(json.dumps([list(map(str, e)) for e in result.errors], indent=1))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# config files

VEHICLES = [
    {"kind": "sprite", "position": [0.3, 0.72], "size": [0.18, 0.14], "color": [0.75, 0.08, 0.08]},
    {"kind": "sprite", "position": [0.72, 0.68], "size": [0.14, 0.12], "color": [0.1, 0.2, 0.65]},
]
DEFAULT_SCENARIOS = {
    "seed": 0,
    "backend": "volume",
    "scenarios": [{"name": "empty"}, {"name": "vehicles", "perturbations": VEHICLES}],
    "orderings": [["empty", "vehicles"]],
}


def load_config(path, seed=None, backend=None, full_ladder=False):
    """Scenario configs and ordering checks from a JSON file.

    Top-level keys are defaults; an optional ``scenarios`` list gives per-scenario
    overrides (typically ``name`` and ``perturbations``). ``orderings`` is a list
    of [better, worse] scenario-name pairs checked frame by frame.
    """
    raw = json.loads(Path(path).read_text())
    return configs_from_dict(raw, seed=seed, backend=backend, full_ladder=full_ladder)


def configs_from_dict(raw: dict, seed=None, backend=None, full_ladder=False):
    raw = dict(raw)
    scenarios = raw.pop("scenarios", None) or [{}]
    orderings = [tuple(o) for o in raw.pop("orderings", [])]
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise DomainError(f"unknown config keys: {sorted(unknown)}")
    configs = []
    for sc in scenarios:
        merged = {**raw, **sc}
        if seed is not None:
            merged["seed"] = seed
        if backend is not None:
            merged["backend"] = backend
        if full_ladder:
            merged["resolutions"] = list(FULL_LADDER)
        configs.append(ScenarioConfig(**merged))
    return configs, orderings


def with_resolutions(cfg: ScenarioConfig, resolutions) -> ScenarioConfig:
    return replace(cfg, resolutions=list(resolutions))
