"""SLM pattern families, the 92-pattern capture set, and pattern selection.

Pattern values are 8-bit filter indices. Families trade local filter diversity
against spatial smoothness (phase gradient):

- ``constant``: one index everywhere, zero gradient.
- ``oned_*``: ramps ``(scale*x) mod 255`` repeated in 3-pixel stripes, each
  stripe's phase advanced by ceil(255/stripe_height) so a full index cycle
  completes across one stripe period. Stripe seams are flagged as metadata.
- ``twod_*``: 16x16 tiles containing all 256 indices, periodic or mirrored,
  with the steep (16 per pixel) axis horizontal or vertical.
- ``random3x3``: seeded uniform indices repeated over 3x3 blocks (counter-based
  Philox generator, reproducible across platforms).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import data_model
from .errors import DataError, UsageError

FAMILIES = (
    "constant",
    "oned_h",
    "oned_v",
    "oned_h_scale2",
    "oned_h_scale4",
    "twod_h_periodic",
    "twod_h_mirror",
    "twod_v_periodic",
    "twod_v_mirror",
    "random3x3",
)

TILE = 16
RAMP_MOD = 255  # the 1D families follow the (scale*x) mod 255 convention


@dataclass(frozen=True)
class PatternSpec:
    family: str
    shift: tuple[int, int] = (0, 0)
    seed: Optional[int] = None
    stripe_height: int = 3
    level: int = 0  # constant family only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UsageError(f"unknown pattern family {self.family!r}")
        if (self.seed is not None) != (self.family == "random3x3"):
            raise UsageError("seed is required for random3x3 and forbidden otherwise")
        if self.stripe_height < 1:
            raise UsageError("stripe height must be >= 1")
        if self.family == "constant" and not (0 <= self.level <= 255):
            raise UsageError("constant level must be an 8-bit value")

    def describe(self) -> str:
        if self.family == "constant":
            return f"constant(level={self.level})"
        if self.family == "random3x3":
            return f"random3x3(seed={self.seed})"
        return f"{self.family}(dx={self.shift[0]},dy={self.shift[1]})"


@dataclass(frozen=True)
class SlmPattern:
    values: np.ndarray  # (height, width) uint8
    spec: Optional[PatternSpec] = None
    pattern_id: str = ""
    boundary_rows: tuple = ()  # stripe-seam rows (1D horizontal families)
    boundary_cols: tuple = ()  # stripe-seam columns (1D vertical family)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values)
        if v.ndim != 2 or v.dtype != np.uint8:
            raise DataError("pattern values must be a 2-D uint8 array")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PhaseGradientMap:
    """Forward-difference index gradients plus the physical conversion factors."""

    grad_x: np.ndarray
    grad_y: np.ndarray
    lambda_ref_nm: float
    c0_nm_per_index: float

    def physical(self) -> tuple[np.ndarray, np.ndarray]:
        """Phase gradient in radians per pixel at the reference wavelength."""
        k = 2.0 * np.pi * self.c0_nm_per_index / self.lambda_ref_nm
        return k * self.grad_x, k * self.grad_y


def _stagger_step(stripe_height: int) -> int:
    return -(-RAMP_MOD // stripe_height)  # ceil(255 / stripe_height)


def _ramp_pattern(width, height, scale, dx, stripe_height, vertical):
    step = _stagger_step(stripe_height)
    if vertical:
        along = np.arange(height, dtype=np.int64)[:, None]
        stripe = np.arange(width, dtype=np.int64)[None, :] // stripe_height
    else:
        along = np.arange(width, dtype=np.int64)[None, :]
        stripe = np.arange(height, dtype=np.int64)[:, None] // stripe_height
    vals = (scale * along + step * stripe + dx) % RAMP_MOD
    return np.broadcast_to(vals, (height, width)).astype(np.uint8)


def _tile_coord(n, shift, mirror):
    idx = np.arange(n, dtype=np.int64) + shift
    if mirror:
        t = idx % (2 * TILE)
        return np.where(t < TILE, t, 2 * TILE - 1 - t)
    return idx % TILE


def _twod_pattern(width, height, dx, dy, horizontal, mirror):
    u = _tile_coord(width, dx, mirror)[None, :]
    v = _tile_coord(height, dy, mirror)[:, None]
    if horizontal:
        vals = TILE * u + v  # steep axis along x
    else:
        vals = TILE * v + u  # steep axis along y
    return np.broadcast_to(vals, (height, width)).astype(np.uint8)


def _random_pattern(width, height, seed, block=3):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed % (1 << 64))))
    nby = -(-height // block)
    nbx = -(-width // block)
    blocks = rng.integers(0, 256, size=(nby, nbx), dtype=np.uint8)
    return np.repeat(np.repeat(blocks, block, axis=0), block, axis=1)[:height, :width]


def generate(spec: PatternSpec, width: int, height: int) -> SlmPattern:
    """Deterministic pattern synthesis; pure function of (spec, width, height)."""
    fam = spec.family
    min_size = {"constant": 1, "random3x3": 3}.get(
        fam, TILE if fam.startswith("twod") else spec.stripe_height)
    if width < min_size or height < min_size:
        raise UsageError(f"frame {width}x{height} smaller than one {fam} tile")

    dx, dy = spec.shift
    rows: tuple = ()
    cols: tuple = ()
    if fam == "constant":
        vals = np.full((height, width), spec.level, dtype=np.uint8)
    elif fam in ("oned_h", "oned_h_scale2", "oned_h_scale4"):
        scale = {"oned_h": 1, "oned_h_scale2": 2, "oned_h_scale4": 4}[fam]
        vals = _ramp_pattern(width, height, scale, dx, spec.stripe_height, False)
        rows = tuple(range(spec.stripe_height, height, spec.stripe_height))
    elif fam == "oned_v":
        vals = _ramp_pattern(width, height, 1, dy, spec.stripe_height, True)
        cols = tuple(range(spec.stripe_height, width, spec.stripe_height))
    elif fam.startswith("twod"):
        vals = _twod_pattern(width, height, dx, dy,
                             horizontal="_h_" in fam, mirror=fam.endswith("mirror"))
    else:  # random3x3
        vals = _random_pattern(width, height, spec.seed)
    return SlmPattern(vals, spec=spec, pattern_id=spec.describe(),
                      boundary_rows=rows, boundary_cols=cols)


# Table-1 enumeration: family order, shift schedules, and counts.
_SHIFTS_2D = ((0, 0), (4, 0), (8, 0), (12, 0), (0, 8), (4, 8), (8, 8), (12, 8))
TABLE1_COUNTS = {
    "oned_h": 16, "oned_v": 16, "oned_h_scale2": 8, "oned_h_scale4": 4,
    "twod_v_periodic": 8, "twod_v_mirror": 8,
    "twod_h_periodic": 8, "twod_h_mirror": 8,
    "random3x3": 16,
}


def enumerate_92(width: int, height: int, master_seed: int = 0) -> list[SlmPattern]:
    """The full spatially-varying capture set: 92 patterns, Table-1 counts."""
    specs: list[PatternSpec] = []
    specs += [PatternSpec("oned_h", shift=(16 * k, 0)) for k in range(16)]
    specs += [PatternSpec("oned_v", shift=(0, 16 * k)) for k in range(16)]
    specs += [PatternSpec("oned_h_scale2", shift=(32 * k, 0)) for k in range(8)]
    specs += [PatternSpec("oned_h_scale4", shift=(64 * k, 0)) for k in range(4)]
    for fam in ("twod_v_periodic", "twod_v_mirror", "twod_h_periodic", "twod_h_mirror"):
        specs += [PatternSpec(fam, shift=s) for s in _SHIFTS_2D]
    specs += [PatternSpec("random3x3", seed=master_seed * 100003 + k) for k in range(16)]

    out = []
    for i, spec in enumerate(specs):
        pat = generate(spec, width, height)
        out.append(dataclasses.replace(pat, pattern_id=f"{i:03d}_{spec.family}"))
    return out


def family_histogram(patterns: Sequence[SlmPattern]) -> dict[str, int]:
    hist: dict[str, int] = {}
    for p in patterns:
        fam = p.spec.family if p.spec is not None else "unknown"
        hist[fam] = hist.get(fam, 0) + 1
    return hist


def phase_gradient(pattern: SlmPattern, c0_nm_per_index: float,
                   lambda_ref_nm: float) -> PhaseGradientMap:
    """Forward differences of the index image; last row/column one-sided."""
    p = pattern.values.astype(np.int64)
    gx = np.empty(p.shape, dtype=np.float64)
    gy = np.empty(p.shape, dtype=np.float64)
    gx[:, :-1] = p[:, 1:] - p[:, :-1]
    gx[:, -1] = gx[:, -2] if p.shape[1] > 1 else 0.0
    gy[:-1, :] = p[1:, :] - p[:-1, :]
    gy[-1, :] = gy[-2, :] if p.shape[0] > 1 else 0.0
    return PhaseGradientMap(gx, gy, lambda_ref_nm=float(lambda_ref_nm),
                            c0_nm_per_index=float(c0_nm_per_index))


def greedy_select(candidates: Sequence[SlmPattern], count: int,
                  first: Optional[str] = None) -> list[str]:
    """Order patterns to maximize newly covered (pixel, filter-index) pairs.

    Coverage of a selection is the set of distinct (pixel, 8-bit index) pairs
    it exposes. Each step adds the candidate with the largest gain; ties break
    toward the earliest candidate in the list (their ids ascend in enumeration
    order). When ``first`` is omitted every pattern covers one pair per pixel,
    so the seed falls to the earliest candidate.
    """
    if not candidates:
        raise UsageError("empty candidate list")
    if count > len(candidates):
        raise UsageError("cannot select more patterns than candidates")
    ids = [p.pattern_id for p in candidates]
    if len(set(ids)) != len(ids):
        raise UsageError("candidate pattern ids must be unique")
    shape = candidates[0].values.shape
    if any(p.values.shape != shape for p in candidates):
        raise UsageError("candidates must share one frame size")

    npix = shape[0] * shape[1]
    flat = [p.values.reshape(npix).astype(np.int64) for p in candidates]
    covered = np.zeros((npix, 256), dtype=bool)
    pix = np.arange(npix)

    remaining = list(range(len(candidates)))
    selected: list[int] = []

    if first is not None:
        if first not in ids:
            raise UsageError(f"unknown first pattern id {first!r}")
        start = ids.index(first)
        covered[pix, flat[start]] = True
        selected.append(start)
        remaining.remove(start)

    while len(selected) < count:
        best_idx = -1
        best_gain = -1
        for idx in remaining:
            gain = int(np.count_nonzero(~covered[pix, flat[idx]]))
            if gain > best_gain:
                best_gain = gain
                best_idx = idx
        covered[pix, flat[best_idx]] = True
        selected.append(best_idx)
        remaining.remove(best_idx)
    return [ids[i] for i in selected]


def load_pattern(path) -> SlmPattern:
    """Read a binary PGM (P5, maxval 255) pattern."""
    return SlmPattern(data_model.read_pgm(path))


def save_pattern(pattern: SlmPattern, path) -> None:
    data_model.write_pgm(pattern.values, path)
