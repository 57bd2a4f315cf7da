"""Quality metrics, benchmark sweeps, and the spectral-resolution probe."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_model import GuideImage, HyperspectralCube, SensorResponse, SpectralGrid
from .errors import DataError, NumericError, UsageError
from .forward_sim import (NoiseConfig, QUIET, lc_cell_mode, simulate_capture_set,
                          simulate_full_scan)
from .lc_optics import FilterBank
from .patterns import SlmPattern
from .reconstruct import (GuidedConfig, TvConfig, reconstruct_lsq,
                          reconstruct_rank1, reconstruct_tv)


def _payload(x) -> np.ndarray:
    if isinstance(x, HyperspectralCube):
        return x.data.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def psnr(reference, estimate) -> float:
    """Peak signal-to-noise ratio in dB: 20 log10(peak / RMSE).

    Returns inf when the estimate matches the reference exactly.
    """
    ref = _payload(reference)
    est = _payload(estimate)
    if ref.shape != est.shape:
        raise DataError("psnr arguments must share a shape")
    peak = float(np.abs(ref).max())
    if peak == 0:
        raise UsageError("reference must not be all-zero")
    rmse = float(np.sqrt(np.mean((ref - est) ** 2)))
    if rmse == 0:
        return float("inf")
    return 20.0 * np.log10(peak / rmse)


def sam_map(reference: HyperspectralCube, estimate: HyperspectralCube) -> np.ndarray:
    """Per-pixel spectral angle in degrees; NaN where either spectrum is zero.

    The absolute inner product makes the angle invariant to per-pixel scaling
    of either argument.
    """
    ref = _payload(reference)
    est = _payload(estimate)
    if ref.shape != est.shape:
        raise DataError("sam_map arguments must share a shape")
    num = np.abs(np.sum(ref * est, axis=2))
    den = np.sqrt(np.sum(ref * ref, axis=2) * np.sum(est * est, axis=2))
    out = np.full(ref.shape[:2], np.nan)
    ok = den > 0
    out[ok] = np.degrees(np.arccos(np.clip(num[ok] / den[ok], -1.0, 1.0)))
    return out


def sam_median(reference: HyperspectralCube, estimate: HyperspectralCube) -> float:
    """Median angle over pixels where both spectra are nonzero."""
    angles = sam_map(reference, estimate)
    valid = angles[np.isfinite(angles)]
    if valid.size == 0:
        raise NumericError("no pixel with nonzero spectra to compare")
    return float(np.median(valid))


def sam_mean(reference: HyperspectralCube, estimate: HyperspectralCube) -> float:
    angles = sam_map(reference, estimate)
    valid = angles[np.isfinite(angles)]
    if valid.size == 0:
        raise NumericError("no pixel with nonzero spectra to compare")
    return float(np.mean(valid))


@dataclass
class EvalReport:
    """Tabular benchmark output: one dict per evaluated cell."""

    rows: list = field(default_factory=list)

    def add(self, **kwargs) -> None:
        self.rows.append(dict(kwargs))

    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def write_csv(self, path) -> None:
        cols = self.columns()
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join(repr(row[c]) if isinstance(row.get(c), float)
                                  else str(row.get(c, "")) for c in cols))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.rows, indent=1), encoding="utf-8")


def _reconstruct_single(captures, method, guide, tv_cfg, guided_cfg):
    if method == "rank1":
        return reconstruct_rank1(captures, guide, guided_cfg)
    if method == "tv":
        return reconstruct_tv(captures, tv_cfg)
    raise UsageError(f"unknown reconstruction method {method!r}")


def pattern_benchmark(cube: HyperspectralCube, bank: FilterBank,
                      patterns: Sequence[SlmPattern], method: str = "rank1",
                      guide: Optional[GuideImage] = None,
                      sensor: Optional[SensorResponse] = None,
                      noise: NoiseConfig = QUIET,
                      tv_cfg: Optional[TvConfig] = None,
                      guided_cfg: Optional[GuidedConfig] = None) -> EvalReport:
    """Single-capture reconstruction quality for every pattern in the set."""
    tv_cfg = tv_cfg or TvConfig()
    guided_cfg = guided_cfg or GuidedConfig()
    if method == "rank1" and guide is None:
        raise UsageError("rank-1 benchmarking needs a guide image")
    report = EvalReport()
    for pat in patterns:
        captures = simulate_capture_set(cube, [pat], bank, sensor, noise)
        rec = _reconstruct_single(captures, method, guide, tv_cfg, guided_cfg)
        report.add(pattern_id=pat.pattern_id,
                   family=pat.spec.family if pat.spec else "unknown",
                   method=method,
                   psnr_db=psnr(cube, rec),
                   sam_median_deg=sam_median(cube, rec))
    return report


def multiframe_sweep(cube: HyperspectralCube, bank: FilterBank,
                     selected: Sequence[SlmPattern], counts: Sequence[int],
                     guide: Optional[GuideImage] = None,
                     sensor: Optional[SensorResponse] = None,
                     noise: NoiseConfig = QUIET,
                     methods: Sequence[str] = ("rank1", "lc_lsq"),
                     guided_cfg: Optional[GuidedConfig] = None,
                     tv_cfg: Optional[TvConfig] = None,
                     baseline_draws: int = 10,
                     baseline_seed: int = 0) -> EvalReport:
    """Reconstruction quality versus capture count.

    ``selected`` is an ordered pattern sequence (greedy selection output); the
    spatially-invariant baseline draws random constant-filter index subsets and
    averages the metrics over ``baseline_draws`` draws.
    """
    counts = list(counts)
    if max(counts) > len(selected) and any(m != "lc_lsq" for m in methods):
        raise UsageError("counts exceed the number of selected patterns")
    report = EvalReport()
    for count in counts:
        for method in methods:
            if method == "lc_lsq":
                vals_p, vals_s = [], []
                for draw in range(baseline_draws):
                    rng = np.random.Generator(np.random.Philox(
                        key=np.array([baseline_seed, draw * 1000 + count],
                                     dtype=np.uint64)))
                    indices = rng.choice(256, size=count, replace=False)
                    caps = lc_cell_mode(cube, bank, sorted(int(i) for i in indices),
                                        sensor, noise)
                    rec = reconstruct_lsq(caps)
                    vals_p.append(psnr(cube, rec))
                    vals_s.append(sam_median(cube, rec))
                report.add(method=method, count=count,
                           psnr_db=float(np.mean(vals_p)),
                           sam_median_deg=float(np.mean(vals_s)),
                           draws=baseline_draws)
            else:
                caps = simulate_capture_set(cube, list(selected[:count]), bank,
                                            sensor, noise)
                if method == "rank1":
                    if guide is None:
                        raise UsageError("rank-1 sweep needs a guide image")
                    cfg = guided_cfg or GuidedConfig()
                    rec = reconstruct_rank1(caps, guide, cfg)
                elif method == "tv":
                    rec = reconstruct_tv(caps, tv_cfg or TvConfig())
                else:
                    raise UsageError(f"unknown method {method!r}")
                report.add(method=method, count=count,
                           psnr_db=psnr(cube, rec),
                           sam_median_deg=sam_median(cube, rec))
    return report


def fwhm_probe(bank: FilterBank, grid: SpectralGrid,
               line_wavelengths_nm: Sequence[float]) -> list[float]:
    """Spectral resolution at given laser lines, in nm.

    Each line becomes a delta spectrum on its nearest band; a noiseless full
    scan of that spectrum is inverted by least squares and the width of the
    reconstructed peak is read off at half maximum (linear interpolation
    between band samples).
    """
    wl = grid.wavelengths_nm
    out = []
    for line in line_wavelengths_nm:
        if line < wl[0] or line > wl[-1]:
            raise UsageError(f"line {line} nm outside the grid")
        l0 = int(np.argmin(np.abs(wl - line)))
        spectrum = np.zeros((1, 1, grid.bands), dtype=np.float32)
        spectrum[0, 0, l0] = 1.0
        cube = HyperspectralCube(grid, spectrum)
        scan = simulate_full_scan(cube, bank)
        rec = reconstruct_lsq(scan).data[0, 0].astype(np.float64)
        out.append(_fwhm_nm(wl, rec))
    return out


def _fwhm_nm(wl: np.ndarray, profile: np.ndarray) -> float:
    peak = int(np.argmax(profile))
    half = profile[peak] / 2.0
    if profile[peak] <= 0:
        raise NumericError("reconstructed line has no positive peak")

    left = None
    for i in range(peak - 1, -1, -1):
        if profile[i] < half:
            t = (half - profile[i]) / (profile[i + 1] - profile[i])
            left = wl[i] + t * (wl[i + 1] - wl[i])
            break
    right = None
    for i in range(peak + 1, profile.size):
        if profile[i] < half:
            t = (half - profile[i]) / (profile[i - 1] - profile[i])
            right = wl[i] - t * (wl[i] - wl[i - 1])
            break
    if left is None or right is None:
        raise NumericError("no half-maximum crossing on one side of the peak")
    return float(right - left)
