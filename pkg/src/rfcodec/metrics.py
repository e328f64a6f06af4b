"""Image quality metrics and grouped report tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DomainError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REPORT_FIELDS = ["scenario", "backend", "resolution", "frame_id", "psnr_db", "ssim"]


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB over all channels; ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window():
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(img, g):
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    r = SSIM_WINDOW // 2
    return out[r:-r, r:-r]


def _ssim_maps(a, b, peak):
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    g = _gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def _channels(a, b):
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DomainError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    return a, b


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _channels(a, b)
    vals = []
    for ch in range(a.shape[2]):
        lum, cs = _ssim_maps(a[..., ch], b[..., ch], peak)
        vals.append(np.mean(lum * cs))
    return float(np.mean(vals))


def ssim_components(a, b, peak: float = 1.0):
    """Channel-averaged means of the luminance and contrast-structure maps."""
    a, b = _channels(a, b)
    lums, css = [], []
    for ch in range(a.shape[2]):
        lum, cs = _ssim_maps(a[..., ch], b[..., ch], peak)
        lums.append(np.mean(lum))
        css.append(np.mean(cs))
    return float(np.mean(lums)), float(np.mean(css))


@dataclass
class MetricReport:
    rows: list
    groups: list = field(default_factory=list)

    def write_rows_csv(self, path):
        _write_csv(path, REPORT_FIELDS, self.rows)

    def write_groups_csv(self, path):
        fields = ["scenario", "backend", "resolution", "n", "psnr_mean_db", "psnr_excluded", "ssim_mean"]
        _write_csv(path, fields, self.groups)

    def write_table_csv(self, path):
        """Scenario rows, metric-by-backend columns; LPIPS columns are left blank."""
        backends = sorted({r["backend"] for r in self.rows})
        scenarios = list(dict.fromkeys(sorted(r["scenario"] for r in self.rows)))
        header = ["scenario"]
        for metric in ("psnr", "ssim", "lpips"):
            header += [f"{metric}_{b}" for b in backends]
        out = []
        for sc in scenarios:
            line = {"scenario": sc}
            for b in backends:
                sel = [r for r in self.rows if r["scenario"] == sc and r["backend"] == b]
                if not sel:
                    continue
                p, _ = _finite_mean([r["psnr_db"] for r in sel])
                line[f"psnr_{b}"] = p
                line[f"ssim_{b}"] = float(np.mean([r["ssim"] for r in sel]))
                line[f"lpips_{b}"] = ""
            out.append(line)
        _write_csv(path, header, out)


def _finite_mean(values):
    finite = [v for v in values if math.isfinite(v)]
    excluded = len(values) - len(finite)
    return (float(np.mean(finite)) if finite else math.inf), excluded


def aggregate(rows) -> MetricReport:
    """Group rows by (scenario, backend, resolution) and average.

    Infinite PSNR rows are left out of the PSNR mean and counted instead.
    """
    rows = list(rows)
    if not rows:
        raise DomainError("cannot aggregate an empty row set")
    keyed = {}
    for r in rows:
        if not -1.0 <= r["ssim"] <= 1.0:
            raise DomainError(f"SSIM {r['ssim']} outside [-1, 1]")
        keyed.setdefault((r["scenario"], r["backend"], str(r["resolution"])), []).append(r)
    groups = []
    for key in sorted(keyed):
        sel = keyed[key]
        p, excluded = _finite_mean([r["psnr_db"] for r in sel])
        groups.append(
            {
                "scenario": key[0],
                "backend": key[1],
                "resolution": key[2],
                "n": len(sel),
                "psnr_mean_db": p,
                "psnr_excluded": excluded,
                "ssim_mean": float(np.mean([r["ssim"] for r in sel])),
            }
        )
    return MetricReport(rows, groups)


def _fmt(v):
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return v


def _write_csv(path, fields, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})
