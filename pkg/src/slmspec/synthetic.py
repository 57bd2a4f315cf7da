"""Committed synthetic scenes and device models for tests, benchmarks, demos.

Scene spectra are smooth mixtures of broad Gaussians: the filter bank realized
by a bounded retardance range cannot resolve arbitrarily fine spectral detail
(it is sinusoidal in wavenumber with a limited frequency span), and natural
reflectances are smooth at comparable scales, so these are the honest inputs
for round-trip experiments.
"""

from __future__ import annotations

import numpy as np

from .data_model import GuideImage, HyperspectralCube, SpectralGrid
from .lc_optics import FilterBank, RetardanceCurve, build_filter_bank, design_gamma_curve
from .reconstruct import SuperpixelMap, slic_superpixels

# Drive range and retardance span of the modeled device: retardance falls
# quadratically from 3000 nm at 0 V to 800 nm at 4.2 V.
V_MAX = 4.2
RETARDANCE_HIGH_NM = 3000.0
RETARDANCE_LOW_NM = 800.0


def reference_retardance_curve(samples: int = 421) -> RetardanceCurve:
    v = np.linspace(0.0, V_MAX, samples)
    ret = RETARDANCE_HIGH_NM + (RETARDANCE_LOW_NM - RETARDANCE_HIGH_NM) * (v / V_MAX) ** 2
    return RetardanceCurve(v, ret)


def reference_bank(grid: SpectralGrid, extra_retardance_nm: float = 0.0) -> FilterBank:
    """Linearized-gamma filter bank of the modeled device on a given grid."""
    curve = reference_retardance_curve()
    gamma = design_gamma_curve(curve, 0.0, V_MAX)
    return build_filter_bank(gamma, curve, grid, extra_retardance_nm)


def working_grid(bands: int = 31) -> SpectralGrid:
    """Default working band set, uniform in wavenumber over 420-940 nm."""
    return SpectralGrid.uniform_wavenumber(420.0, 940.0, bands)


def gaussian_spectra(grid: SpectralGrid, centers_nm, widths_nm,
                     floor: float = 0.05) -> np.ndarray:
    wl = grid.wavelengths_nm
    return np.stack([np.exp(-0.5 * ((wl - c) / w) ** 2) + floor
                     for c, w in zip(centers_nm, widths_nm)])


_PROTO_CENTERS = (470.0, 540.0, 610.0, 700.0, 790.0, 860.0)
_PROTO_WIDTHS = (55.0, 70.0, 60.0, 90.0, 75.0, 85.0)


def prototype_spectra(grid: SpectralGrid) -> np.ndarray:
    """Six smooth reference spectra used across the committed scenes."""
    return gaussian_spectra(grid, _PROTO_CENTERS, _PROTO_WIDTHS)


def smooth_cube(grid: SpectralGrid, width: int = 64, height: int = 64,
                seed: int = 0) -> HyperspectralCube:
    """Spatially smooth mixtures of three broad spectra."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / max(width, height)
    protos = prototype_spectra(grid)[:3]
    phase = rng.uniform(0, np.pi, size=3)
    weights = np.stack([
        0.3 + 0.7 * yy,
        0.2 + 0.8 * xx,
        0.5 + 0.5 * np.sin(3 * yy + 2 * xx + phase[2]) ** 2,
    ])
    data = np.einsum("shw,sl->hwl", weights, protos) + 0.05
    return HyperspectralCube(grid, data.astype(np.float32))


def piecewise_cube(grid: SpectralGrid, width: int = 64, height: int = 64,
                   blocks: int = 4, seed: int = 0) -> HyperspectralCube:
    """Flat rectangular regions, one smooth spectrum and brightness each."""
    rng = np.random.default_rng(seed)
    protos = prototype_spectra(grid)
    choice = rng.integers(0, len(protos), size=(blocks, blocks))
    amp = rng.uniform(0.4, 1.0, size=(blocks, blocks))
    data = np.zeros((height, width, grid.bands))
    bh = height // blocks
    bw = width // blocks
    for by in range(blocks):
        for bx in range(blocks):
            y1 = (by + 1) * bh if by < blocks - 1 else height
            x1 = (bx + 1) * bw if bx < blocks - 1 else width
            data[by * bh:y1, bx * bw:x1, :] = amp[by, bx] * protos[choice[by, bx]]
    return HyperspectralCube(grid, data.astype(np.float32))


def two_region_cube(grid: SpectralGrid, width: int = 32,
                    height: int = 32) -> HyperspectralCube:
    """Left/right halves with distinct spectra; the minimal TV-friendly scene."""
    protos = prototype_spectra(grid)
    data = np.zeros((height, width, grid.bands))
    data[:, :width // 2, :] = 0.9 * protos[0]
    data[:, width // 2:, :] = 0.55 * protos[2]
    return HyperspectralCube(grid, data.astype(np.float32))


def rank1_scene(grid: SpectralGrid, width: int = 48, height: int = 48,
                segments: int = 6
                ) -> tuple[HyperspectralCube, GuideImage, SuperpixelMap, np.ndarray]:
    """A scene that satisfies the rank-1-per-superpixel model exactly.

    A blobby guide is segmented with SLIC into chunky regions (each wide
    enough to see the full filter tile); every segment gets one prototype
    spectrum scaled by the guide. Returns (cube, guide, segmentation,
    per-segment spectra).
    """
    yy, xx = np.mgrid[0:height, 0:width] / max(width, height)
    gimg = (0.35 + 0.5 * np.exp(-((xx - 0.3) ** 2 + (yy - 0.35) ** 2) / 0.05)
            + 0.45 * np.exp(-((xx - 0.75) ** 2 + (yy - 0.7) ** 2) / 0.04))
    guide = GuideImage(gimg)
    seg = slic_superpixels(guide, segments)
    protos = prototype_spectra(grid)
    spectra = protos[np.arange(seg.segment_count) % len(protos)]
    gn = gimg / gimg.max()
    data = gn[:, :, None] * spectra[seg.labels]
    return (HyperspectralCube(grid, data.astype(np.float32)), guide, seg, spectra)


def material_scene(grid: SpectralGrid, width: int = 60, height: int = 60
                   ) -> tuple[HyperspectralCube, np.ndarray, tuple]:
    """Three-material mosaic scene with a known label map.

    Vertical thirds of distinct materials under mild brightness variation.
    Returns (cube, labels, material names); spectra are the first three
    prototypes.
    """
    names = ("leaf", "plastic", "board")
    protos = prototype_spectra(grid)[:3]
    labels = np.zeros((height, width), dtype=np.uint8)
    third = width // 3
    labels[:, third:2 * third] = 1
    labels[:, 2 * third:] = 2
    yy = np.mgrid[0:height, 0:width][0] / height
    brightness = 0.6 + 0.4 * yy
    data = brightness[:, :, None] * protos[labels]
    return HyperspectralCube(grid, data.astype(np.float32)), labels, names
