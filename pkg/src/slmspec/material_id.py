"""Single-shot material discrimination.

Pick a few filter indices whose measurements separate the library materials
after brightness normalization, tile them like a color filter array, capture
one image, demosaic per filter phase, and classify each pixel by its nearest
library signature on the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from json import dumps
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_model import HyperspectralCube, MeasurementImage, SensorResponse
from .errors import DataError, NumericError, UsageError
from .forward_sim import NoiseConfig, QUIET, simulate_measurement, exposure_scale
from .lc_optics import FilterBank
from .patterns import SlmPattern

UNKNOWN_LABEL = 255


@dataclass(frozen=True)
class MaterialLibrary:
    """Expected measurement trace across all 256 filter indices, per material."""

    names: tuple
    traces: np.ndarray  # (n_materials, 256)

    def __post_init__(self):
        t = np.ascontiguousarray(self.traces, dtype=np.float64)
        object.__setattr__(self, "traces", t)
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise DataError("need at least two materials")
        if t.shape != (len(self.names), 256):
            raise DataError("traces must be (n_materials, 256)")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise DataError("traces must be finite and nonnegative")

    @classmethod
    def from_spectra(cls, names: Sequence[str], spectra: np.ndarray,
                     bank: FilterBank,
                     sensor: Optional[SensorResponse] = None) -> "MaterialLibrary":
        sensor_resp = sensor.response if sensor else np.ones(bank.grid.bands)
        spectra = np.asarray(spectra, dtype=np.float64)
        traces = spectra @ (bank.transmittance * sensor_resp).T
        return cls(tuple(names), traces)


def simplex_project(values: np.ndarray) -> np.ndarray:
    """Normalize nonnegative vectors to unit sum (brightness invariance).

    Works on a single vector or an array of vectors along the last axis.
    """
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0):
        raise UsageError("simplex projection needs nonnegative values")
    s = v.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise UsageError("cannot project an all-zero vector onto the simplex")
    return v / s


def select_discriminative_filters(library: MaterialLibrary, k: int,
                                  candidates: Optional[Sequence[int]] = None,
                                  chunk: int = 100_000) -> list[int]:
    """Exhaustive search for the k indices that best separate the materials.

    Separation of a subset is the minimum pairwise Euclidean distance between
    the materials' simplex-projected k-vectors; ties break lexicographically.
    Subsets where some material measures zero at every chosen index are
    skipped (no simplex image).
    """
    cand = np.asarray(sorted(candidates) if candidates is not None else range(256),
                      dtype=np.int64)
    if k < 1 or k > cand.size:
        raise UsageError("k must be between 1 and the candidate count")
    n_mat = library.traces.shape[0]
    pairs = list(combinations(range(n_mat), 2))

    best_score = -1.0
    best_combo: Optional[tuple] = None
    combo_iter = combinations(range(cand.size), k)
    while True:
        block = []
        for _ in range(chunk):
            nxt = next(combo_iter, None)
            if nxt is None:
                break
            block.append(nxt)
        if not block:
            break
        idx = cand[np.asarray(block, dtype=np.int64)]  # (B, k)
        vals = library.traces[:, idx]  # (M, B, k)
        sums = vals.sum(axis=2)
        valid = np.all(sums > 0, axis=0)  # (B,)
        if not np.any(valid):
            continue
        norm = vals / np.where(sums[:, :, None] > 0, sums[:, :, None], 1.0)
        score = np.full(idx.shape[0], np.inf)
        for a, b in pairs:
            d = np.linalg.norm(norm[a] - norm[b], axis=1)
            score = np.minimum(score, d)
        score[~valid] = -np.inf
        j = int(np.argmax(score))
        if score[j] > best_score:
            best_score = float(score[j])
            best_combo = tuple(int(v) for v in idx[j])
    if best_combo is None or best_score <= 0.0:
        raise NumericError("library is degenerate: no filter subset separates "
                           "the materials")
    return list(best_combo)


_MOSAIC_CELLS = {
    2: ((0, 1), (1, 0)),
    3: ((0, 1), (2, 0)),
    4: ((0, 1), (2, 3)),
}


def mosaic_pattern(indices: Sequence[int], width: int, height: int) -> SlmPattern:
    """Tile k chosen indices over 2x2 cells (the k=3 cell reuses slot 0)."""
    k = len(indices)
    if k not in _MOSAIC_CELLS:
        raise UsageError("mosaic supports 2, 3, or 4 filter indices")
    cell = np.asarray(_MOSAIC_CELLS[k])
    lut = np.asarray(indices, dtype=np.uint8)
    yy, xx = np.mgrid[0:height, 0:width]
    return SlmPattern(lut[cell[yy % 2, xx % 2]], pattern_id=f"mosaic{k}")


def tile_and_capture(cube: HyperspectralCube, bank: FilterBank,
                     indices: Sequence[int],
                     sensor: Optional[SensorResponse] = None,
                     noise: NoiseConfig = QUIET) -> MeasurementImage:
    """Single capture under the mosaic of the chosen filter indices."""
    pattern = mosaic_pattern(indices, cube.width, cube.height)
    sensor = sensor or SensorResponse.flat(cube.grid)
    scale = exposure_scale(cube, bank, sensor, noise.max_electrons)
    return simulate_measurement(cube, pattern, bank, sensor, noise, scale=scale)


_BILINEAR = np.array([[0.25, 0.5, 0.25],
                      [0.5, 1.0, 0.5],
                      [0.25, 0.5, 0.25]])


def _interp_phase(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Bilinear fill of a sparsely sampled plane (zeros outside the mask)."""
    h, w = values.shape
    num = np.zeros((h + 2, w + 2))
    den = np.zeros((h + 2, w + 2))
    src = np.where(mask, values, 0.0)
    m = mask.astype(np.float64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            wgt = _BILINEAR[dy + 1, dx + 1]
            num[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx] += wgt * src
            den[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx] += wgt * m
    num = num[1:h + 1, 1:w + 1]
    den = den[1:h + 1, 1:w + 1]
    out = np.zeros((h, w))
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def demosaic_features(measurement: MeasurementImage,
                      indices: Sequence[int]) -> np.ndarray:
    """Per-pixel k-vector of interpolated intensities, one per filter phase."""
    pattern = mosaic_pattern(indices, measurement.width, measurement.height)
    k = len(indices)
    feats = np.zeros((measurement.height, measurement.width, k))
    for slot, idx in enumerate(indices):
        mask = pattern.values == np.uint8(idx)
        feats[:, :, slot] = _interp_phase(measurement.data, mask)
    return feats


def classification_metric(features: np.ndarray, library: MaterialLibrary,
                          indices: Sequence[int], first: int = 0,
                          second: int = 1) -> np.ndarray:
    """Signed 1-D separation between two materials (debug view of classify).

    Positive values are closer to ``second``, negative closer to ``first``.
    """
    refs = simplex_project(library.traces[:, list(indices)])
    s = features.sum(axis=-1, keepdims=True)
    norm = np.divide(features, s, out=np.zeros_like(features), where=s > 0)
    d_first = np.linalg.norm(norm - refs[first], axis=-1)
    d_second = np.linalg.norm(norm - refs[second], axis=-1)
    return d_first - d_second


def demosaic_classify(measurement: MeasurementImage, indices: Sequence[int],
                      library: MaterialLibrary) -> np.ndarray:
    """Label each pixel with its nearest material on the simplex.

    Pixels whose demosaiced k-vector is all zero get the reserved
    ``UNKNOWN_LABEL``.
    """
    if library.traces.shape[0] > UNKNOWN_LABEL:
        raise UsageError("too many materials for 8-bit labels")
    feats = demosaic_features(measurement, indices)
    refs = simplex_project(library.traces[:, list(indices)])  # (M, k)
    s = feats.sum(axis=-1, keepdims=True)
    norm = np.divide(feats, s, out=np.zeros_like(feats), where=s > 0)
    d = np.linalg.norm(norm[:, :, None, :] - refs[None, None, :, :], axis=-1)
    labels = np.argmin(d, axis=-1).astype(np.uint8)
    labels[s[:, :, 0] <= 0] = UNKNOWN_LABEL
    return labels


def save_library_csv(library: MaterialLibrary, path) -> None:
    lines = ["index," + ",".join(library.names)]
    for r in range(256):
        lines.append(f"{r}," + ",".join(repr(float(v)) for v in library.traces[:, r]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_library_csv(path) -> MaterialLibrary:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or not lines[0].startswith("index,"):
        raise DataError(f"{path}: expected header 'index,<material names>'")
    names = lines[0].split(",")[1:]
    traces = np.zeros((len(names), 256))
    count = 0
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != len(names) + 1:
            raise DataError(f"{path}: row with wrong column count")
        traces[:, int(parts[0])] = [float(p) for p in parts[1:]]
        count += 1
    if count != 256:
        raise DataError(f"{path}: expected 256 rows, found {count}")
    return MaterialLibrary(tuple(names), traces)


def save_label_map(labels: np.ndarray, library: MaterialLibrary, path) -> None:
    from .data_model import write_pgm
    write_pgm(labels.astype(np.uint8), path)
    legend = {str(i): name for i, name in enumerate(library.names)}
    legend[str(UNKNOWN_LABEL)] = "unknown"
    Path(path).with_suffix(".json").write_text(dumps(legend, indent=1),
                                               encoding="utf-8")
