"""
A small sweep
=============

Run the rate factor by preset grid on two scenarios at desk resolution,
write the CSV tables and step plots, and check the invariants. The
``rfcodec sweep`` command does the same from a JSON config.
"""

import sys
from pathlib import Path

from rfcodec.experiment import check_invariants, configs_from_dict, emit_report, mean_savings, run_experiment

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "sweep"
config = {
    "seed": 0,
    "n_frames": 8,
    "resolutions": [[160, 90]],
    "scenarios": [
        {"name": "empty"},
        {"name": "noisy", "perturbations": [{"kind": "noise", "stddev": 0.03}]},
        {"name": "blurred", "perturbations": [{"kind": "blur", "sigma": 1.0}]},
    ],
    "orderings": [["empty", "noisy"], ["empty", "blurred"]],
}
configs, orderings = configs_from_dict(config)
result = run_experiment(configs)
for cfg in configs:
    print(f"{cfg.name:8s} mean savings {mean_savings(result, cfg.name, (160, 90)):.2f}%")
paths = emit_report(result, out)
print(f"wrote {len(paths)} files under {out}")
print("invariant failures:", check_invariants(result, configs, orderings) or "none")
