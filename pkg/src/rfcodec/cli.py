"""Command-line driver: ``rfcodec build-scene | sweep | report``.

Exit status is 0 only when every checked invariant holds.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .camera import ManifestEntry, save_pose_manifest
from .experiment import (
    DEFAULT_SCENARIOS,
    build_scene,
    check_invariants,
    configs_from_dict,
    emit_report,
    ExperimentResult,
    load_config,
    read_csv,
    run_experiment,
    write_averaged_outputs,
)

log = logging.getLogger("rfcodec")


def _resolution(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def _configs(args):
    overrides = dict(seed=args.seed, backend=args.backend, full_ladder=args.full_ladder)
    if args.config:
        configs, orderings = load_config(args.config, **overrides)
    else:
        configs, orderings = configs_from_dict(DEFAULT_SCENARIOS, **overrides)
    for cfg in configs:
        if args.frames is not None:
            cfg.n_frames = args.frames
            cfg.trajectory = None
        if args.resolution and not args.full_ladder:
            cfg.resolutions = list(args.resolution)
    return configs, orderings


def _report_failures(failures, outdir: Path) -> int:
    (outdir / "invariants.txt").write_text("".join(f + "\n" for f in failures) or "all invariants hold\n")
    for f in failures:
        print(f"invariant violated: {f}", file=sys.stderr)
    return 1 if failures else 0


def cmd_build_scene(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    configs, _ = _configs(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = set()
    for cfg in configs:
        scene = build_scene(cfg)
        model_path = outdir / f"scene_{cfg.backend}.{'rfvl' if cfg.backend == 'volume' else 'rfgs'}"
        if model_path not in written:
            model_path.write_bytes(scene.backend.model.to_bytes())
            written.add(model_path)
        w, h = cfg.resolutions[0]
        frame_dir = outdir / "frames" / cfg.name
        frame_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        intr = scene.backend.intrinsics_for(w, h)
        for k, pose in enumerate(scene.poses):
            name = f"frame_{k:04d}.png"
            plt.imsave(frame_dir / name, np.asarray(scene.ground_truth(k, w, h), dtype=np.float64))
            entries.append(ManifestEntry(intr, pose, name))
        save_pose_manifest(frame_dir / "poses.json", entries)
        print(f"{cfg.name}: {len(entries)} frames at {w}x{h} -> {frame_dir}")
    return 0


def cmd_sweep(args) -> int:
    configs, orderings = _configs(args)
    outdir = Path(args.outdir)
    result = run_experiment(configs)
    if not result.cells:
        print("sweep produced no cells", file=sys.stderr)
        return 1
    for p in emit_report(result, outdir):
        log.info("wrote %s", p)
    failures = check_invariants(result, configs, orderings)
    if result.errors:
        failures.append(f"{len(result.errors)} cell(s) or frame(s) failed; see errors.json")
    print(f"{len(result.cells)} cells written to {outdir}")
    return _report_failures(failures, outdir)


def cmd_report(args) -> int:
    outdir = Path(args.outdir)
    cells_path = Path(args.input) if args.input else outdir / "cells.csv"
    if not cells_path.exists():
        print(f"no cells file at {cells_path}", file=sys.stderr)
        return 1
    cells = read_csv(cells_path)
    outdir.mkdir(parents=True, exist_ok=True)
    for p in write_averaged_outputs(cells, outdir):
        print(f"wrote {p}")
    orderings = [tuple(o.split(",")) for o in args.ordering or []]
    return _report_failures(check_invariants(ExperimentResult(cells=cells), (), orderings), outdir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfcodec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON scenario file (defaults to empty vs vehicles)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--outdir", default="out")
        p.add_argument("--backend", choices=["volume", "splat"], default=None)
        p.add_argument("--full-ladder", action="store_true", help="sweep 300x168 up to 1920x1080")
        p.add_argument("--frames", type=int, default=None, help="override the trajectory length")
        p.add_argument("--resolution", type=_resolution, action="append", help="WxH, repeatable")

    common(sub.add_parser("build-scene", help="write the field and ground-truth frames"))
    common(sub.add_parser("sweep", help="run the crf x preset x resolution sweep"))
    rep = sub.add_parser("report", help="rebuild averaged tables and plots from cells.csv")
    rep.add_argument("--outdir", default="out")
    rep.add_argument("--input", help="cells.csv (defaults to OUTDIR/cells.csv)")
    rep.add_argument("--ordering", action="append", help="BETTER,WORSE scenario pair to check")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"build-scene": cmd_build_scene, "sweep": cmd_sweep, "report": cmd_report}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
