"""Synthesize spectrally-coded measurements from ground-truth cubes.

A measurement is the per-pixel dot product of the scene spectrum, the sensor
response, and the filter row selected by the SLM pattern at that pixel. One
exposure scale per cube maps the brightest possible constant-filter pixel to
``max_electrons``, so every pattern simulated from the same cube shares a
radiometric scale (this is what makes patterned captures interchangeable with
gathers from a full scan).

Noise is shot + read: Poisson counts drawn by CDF inversion below mean 30 and
by a rounded normal approximation above, from Philox-generated uniforms keyed
on (seed, frame index); read noise is Gaussian via the same inverse-CDF route.
Negative post-noise values clip to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .data_model import (GuideImage, HyperspectralCube, MeasurementImage,
                         SensorResponse, load_measurement, save_measurement)
from .errors import DataError, UsageError
from .lc_optics import FilterBank, load_filter_bank, save_filter_bank
from .patterns import PatternSpec, SlmPattern, generate, load_pattern, save_pattern


@dataclass(frozen=True)
class NoiseConfig:
    max_electrons: float = 1000.0
    read_noise_electrons: float = 2.0
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if self.max_electrons <= 0:
            raise UsageError("max_electrons must be positive")
        if self.read_noise_electrons < 0:
            raise UsageError("read noise must be nonnegative")

    def to_dict(self) -> dict:
        return {"max_electrons": self.max_electrons,
                "read_noise_electrons": self.read_noise_electrons,
                "seed": self.seed, "enabled": self.enabled}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(**d)


QUIET = NoiseConfig(enabled=False)


@dataclass(frozen=True)
class CaptureSet:
    measurements: list[MeasurementImage]
    patterns: list[SlmPattern]
    bank: FilterBank
    noise: NoiseConfig
    sensor: SensorResponse
    scale_electrons: float

    def __post_init__(self):
        if len(self.measurements) != len(self.patterns):
            raise DataError("measurement and pattern lists must pair up")
        if self.measurements:
            h, w = self.measurements[0].data.shape
            for m, p in zip(self.measurements, self.patterns):
                if m.data.shape != (h, w) or p.values.shape != (h, w):
                    raise DataError("all frames must share one size")

    def __len__(self) -> int:
        return len(self.measurements)


def _check_geometry(cube: HyperspectralCube, bank: FilterBank,
                    sensor: SensorResponse) -> None:
    if bank.grid != cube.grid:
        raise DataError("filter bank grid does not match the cube")
    if sensor.grid != cube.grid:
        raise DataError("sensor response grid does not match the cube")
    if sensor.channels != 1:
        raise DataError("measurement simulation needs a mono sensor response")


def exposure_scale(cube: HyperspectralCube, bank: FilterBank,
                   sensor: Optional[SensorResponse] = None,
                   max_electrons: float = 1000.0) -> float:
    """Electrons per radiance unit: brightest full-scan pixel -> max_electrons."""
    sensor = sensor or SensorResponse.flat(cube.grid)
    _check_geometry(cube, bank, sensor)
    flat = cube.data.reshape(-1, cube.bands).astype(np.float64) * sensor.response
    peak = float((flat @ bank.transmittance.T).max()) if flat.size else 0.0
    if peak <= 0.0:
        return 1.0
    return max_electrons / peak


def _apply_noise(mu: np.ndarray, noise: NoiseConfig, frame_index: int) -> np.ndarray:
    key = np.array([noise.seed % (1 << 64), frame_index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    shape = mu.shape
    u_shot = rng.random(mu.size)
    u_read = rng.random(mu.size)
    counts = _kernels.poisson_from_uniforms(np.maximum(mu.ravel(), 0.0), u_shot)
    if noise.read_noise_electrons > 0:
        counts = counts + noise.read_noise_electrons * _kernels.ndtri(u_read)
    return np.maximum(counts.reshape(shape), 0.0)


def simulate_measurement(cube: HyperspectralCube, pattern: SlmPattern,
                         bank: FilterBank, sensor: Optional[SensorResponse] = None,
                         noise: NoiseConfig = QUIET,
                         scale: Optional[float] = None,
                         frame_index: int = 0) -> MeasurementImage:
    """One noisy (or noiseless) capture under an arbitrary SLM pattern."""
    sensor = sensor or SensorResponse.flat(cube.grid)
    _check_geometry(cube, bank, sensor)
    if pattern.values.shape != (cube.height, cube.width):
        raise DataError("pattern size does not match the cube")
    if scale is None:
        scale = exposure_scale(cube, bank, sensor, noise.max_electrons)
    pidx = pattern.values.astype(np.int64)
    mu = scale * _kernels.coded_forward(cube.data.astype(np.float64),
                                        bank.transmittance, pidx, sensor.response)
    out = _apply_noise(mu, noise, frame_index) if noise.enabled else np.maximum(mu, 0.0)
    pid = pattern.pattern_id or (pattern.spec.describe() if pattern.spec else "")
    return MeasurementImage(out, pattern_id=pid)


def _constant_patterns(indices: Sequence[int], width: int, height: int) -> list[SlmPattern]:
    pats = []
    for r in indices:
        p = generate(PatternSpec("constant", level=int(r)), width, height)
        pats.append(p)
    return pats


def lc_cell_mode(cube: HyperspectralCube, bank: FilterBank, indices: Sequence[int],
                 sensor: Optional[SensorResponse] = None,
                 noise: NoiseConfig = QUIET) -> CaptureSet:
    """Spatially-invariant baseline: one constant-filter frame per index.

    Frame noise streams are keyed by the filter index itself, so requesting all
    256 indices reproduces a full scan frame-for-frame.
    """
    if len(indices) == 0:
        raise UsageError("need at least one filter index")
    if any(not 0 <= int(r) <= 255 for r in indices):
        raise UsageError("filter indices must be 8-bit")
    sensor = sensor or SensorResponse.flat(cube.grid)
    scale = exposure_scale(cube, bank, sensor, noise.max_electrons)
    pats = _constant_patterns(indices, cube.width, cube.height)
    frames = [simulate_measurement(cube, p, bank, sensor, noise, scale=scale,
                                   frame_index=int(r))
              for p, r in zip(pats, indices)]
    return CaptureSet(frames, pats, bank, noise, sensor, scale)


def simulate_full_scan(cube: HyperspectralCube, bank: FilterBank,
                       sensor: Optional[SensorResponse] = None,
                       noise: NoiseConfig = QUIET) -> CaptureSet:
    """All 256 constant patterns, shared exposure scale."""
    return lc_cell_mode(cube, bank, range(256), sensor, noise)


def simulate_capture_set(cube: HyperspectralCube, patterns: Sequence[SlmPattern],
                         bank: FilterBank, sensor: Optional[SensorResponse] = None,
                         noise: NoiseConfig = QUIET) -> CaptureSet:
    """Simulate a list of arbitrary patterns under one shared exposure scale."""
    sensor = sensor or SensorResponse.flat(cube.grid)
    scale = exposure_scale(cube, bank, sensor, noise.max_electrons)
    frames = [simulate_measurement(cube, p, bank, sensor, noise, scale=scale,
                                   frame_index=k)
              for k, p in enumerate(patterns)]
    return CaptureSet(frames, list(patterns), bank, noise, sensor, scale)


def simulate_patterned_from_fullscan(full: CaptureSet, pattern: SlmPattern) -> MeasurementImage:
    """Gather the ideal patterned capture out of a 256-frame full scan."""
    if len(full) != 256:
        raise DataError("full scan must contain 256 frames")
    for k, p in enumerate(full.patterns):
        if p.values.min() != k or p.values.max() != k:
            raise DataError("full scan frames must be constant patterns 0..255 in order")
    h, w = full.measurements[0].data.shape
    if pattern.values.shape != (h, w):
        raise DataError("pattern size does not match the scan frames")
    stack = np.stack([m.data for m in full.measurements])
    out = np.take_along_axis(stack, pattern.values.astype(np.int64)[None, :, :],
                             axis=0)[0]
    return MeasurementImage(out, pattern_id=pattern.pattern_id)


def simulate_guide(cube: HyperspectralCube,
                   rgb_response: Optional[SensorResponse] = None) -> GuideImage:
    """Project the cube through the guide camera's RGB response.

    Output is normalized to unit peak; the grayscale used by the guided
    solvers is the per-pixel channel mean (``GuideImage.grayscale``).
    """
    rgb = rgb_response or SensorResponse.rgb_gaussian(cube.grid)
    if rgb.grid != cube.grid:
        raise DataError("guide response grid does not match the cube")
    if rgb.channels != 3:
        raise DataError("guide response needs 3 channels")
    img = np.einsum("hwl,lc->hwc", cube.data.astype(np.float64), rgb.response)
    peak = img.max()
    if peak > 0:
        img = img / peak
    return GuideImage(img)


# ---------------------------------------------------------------------------
# Capture-set persistence: one directory per set
# ---------------------------------------------------------------------------

def save_capture_set(captures: CaptureSet, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    frame_files, pattern_files, ids = [], [], []
    for k, (m, p) in enumerate(zip(captures.measurements, captures.patterns)):
        mf, pf = f"frame_{k:03d}.hsi", f"pattern_{k:03d}.pgm"
        save_measurement(m, d / mf)
        save_pattern(p, d / pf)
        frame_files.append(mf)
        pattern_files.append(pf)
        ids.append(m.pattern_id)
    save_filter_bank(captures.bank, d / "bank.csv")
    manifest = {
        "version": 1,
        "kind": "capture_set",
        "frames": frame_files,
        "patterns": pattern_files,
        "pattern_ids": ids,
        "noise": captures.noise.to_dict(),
        "scale_electrons": captures.scale_electrons,
        "sensor_response": [float(v) for v in captures.sensor.response],
        "bank": "bank.csv",
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def load_capture_set(directory) -> CaptureSet:
    d = Path(directory)
    mf = d / "manifest.json"
    if not mf.exists():
        raise DataError(f"{directory}: missing manifest.json")
    manifest = json.loads(mf.read_text(encoding="utf-8"))
    if manifest.get("kind") != "capture_set":
        raise DataError(f"{directory}: not a capture set")
    bank = load_filter_bank(d / manifest["bank"])
    frames = [load_measurement(d / f) for f in manifest["frames"]]
    pats = [load_pattern(d / f) for f in manifest["patterns"]]
    pats = [SlmPattern(p.values, pattern_id=pid)
            for p, pid in zip(pats, manifest["pattern_ids"])]
    sensor = SensorResponse(bank.grid, np.asarray(manifest["sensor_response"]))
    return CaptureSet(frames, pats, bank, NoiseConfig.from_dict(manifest["noise"]),
                      sensor, float(manifest["scale_electrons"]))
