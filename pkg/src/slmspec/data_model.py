"""Core containers and bit-exact file IO.

One inspection-friendly format per role:

- Hyperspectral cubes, measurements, and guide images share a binary container:
  a compact UTF-8 JSON header, a zero pad up to the next 16-byte boundary (at
  least one byte, so the header is NUL-terminated), then raw little-endian
  float32 samples in band-sequential order.
- SLM patterns are binary PGM (P5), maxval 255 (see :mod:`slmspec.patterns`).
- Spectra travel as two-column CSV with a ``wavelength_nm,value`` header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

UNIFORM_LAMBDA = "uniform-in-lambda"
UNIFORM_WAVENUMBER = "uniform-in-wavenumber"
_SAMPLING_MODES = (UNIFORM_LAMBDA, UNIFORM_WAVENUMBER)


@dataclass(frozen=True)
class SpectralGrid:
    """Ordered band centers in nm plus how they were laid out."""

    wavelengths_nm: np.ndarray
    sampling_mode: str = UNIFORM_LAMBDA

    def __post_init__(self):
        wl = np.asarray(self.wavelengths_nm, dtype=np.float64)
        object.__setattr__(self, "wavelengths_nm", wl)
        if wl.ndim != 1 or wl.size < 2:
            raise DataError("spectral grid needs at least 2 bands")
        if not np.all(np.isfinite(wl)) or np.any(wl <= 0):
            raise DataError("wavelengths must be finite and positive")
        if np.any(np.diff(wl) <= 0):
            raise DataError("wavelengths must be strictly increasing")
        if self.sampling_mode not in _SAMPLING_MODES:
            raise DataError(f"unknown sampling mode {self.sampling_mode!r}")

    @classmethod
    def uniform(cls, lo_nm: float, hi_nm: float, bands: int) -> "SpectralGrid":
        return cls(np.linspace(lo_nm, hi_nm, bands), UNIFORM_LAMBDA)

    @classmethod
    def uniform_wavenumber(cls, lo_nm: float, hi_nm: float, bands: int) -> "SpectralGrid":
        """Bands spaced uniformly in 1/lambda between lo_nm and hi_nm."""
        sigma = np.linspace(1.0 / lo_nm, 1.0 / hi_nm, bands)
        return cls(1.0 / sigma, UNIFORM_WAVENUMBER)

    @property
    def bands(self) -> int:
        return int(self.wavelengths_nm.size)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Reciprocal wavelengths, 1/nm, in grid order."""
        return 1.0 / self.wavelengths_nm

    def __eq__(self, other):
        if not isinstance(other, SpectralGrid):
            return NotImplemented
        return (self.sampling_mode == other.sampling_mode
                and np.array_equal(self.wavelengths_nm, other.wavelengths_nm))

    def __hash__(self):
        return hash((self.sampling_mode, self.wavelengths_nm.tobytes()))


@dataclass(frozen=True)
class HyperspectralCube:
    """Nonnegative radiance per (y, x, band), float32, arbitrary linear units."""

    grid: SpectralGrid
    data: np.ndarray  # (height, width, bands) float32

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 3:
            raise DataError("cube data must be (height, width, bands)")
        if arr.shape[2] != self.grid.bands:
            raise DataError("cube band count does not match its grid")
        if not np.all(np.isfinite(arr)):
            raise DataError("cube contains non-finite samples")
        if np.any(arr < 0):
            raise DataError("cube contains negative radiance")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class MeasurementImage:
    """One scalar image captured under a single SLM pattern."""

    data: np.ndarray  # (height, width) float64, electrons or normalized
    pattern_id: str = ""

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 2:
            raise DataError("measurement data must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise DataError("measurement contains non-finite samples")
        if np.any(arr < 0):
            raise DataError("measurement contains negative intensities")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GuideImage:
    """Registered guide-camera image, 1 or 3 channels."""

    data: np.ndarray  # (height, width) or (height, width, 3)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] not in (1, 3)):
            raise DataError("guide image must have 1 or 3 channels")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DataError("guide image must be finite and nonnegative")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    def grayscale(self) -> np.ndarray:
        """Per-pixel channel mean, the scalar guide used by the rank-1 solver."""
        if self.data.ndim == 2:
            return self.data
        return self.data.mean(axis=2)


@dataclass(frozen=True)
class SensorResponse:
    """Spectral sensitivity on a grid, max-normalized to 1 per channel."""

    grid: SpectralGrid
    response: np.ndarray  # (bands,) or (bands, 3)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.response, dtype=np.float64)
        if arr.ndim not in (1, 2) or arr.shape[0] != self.grid.bands:
            raise DataError("response length must match the grid")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DataError("response must be finite and nonnegative")
        peaks = arr.max(axis=0)
        if np.any(peaks <= 0):
            raise DataError("response channel with no sensitivity")
        object.__setattr__(self, "response", arr / peaks)

    @property
    def channels(self) -> int:
        return 1 if self.response.ndim == 1 else self.response.shape[1]

    @classmethod
    def flat(cls, grid: SpectralGrid) -> "SensorResponse":
        return cls(grid, np.ones(grid.bands))

    @classmethod
    def rgb_gaussian(cls, grid: SpectralGrid,
                     centers_nm=(640.0, 550.0, 460.0),
                     sigma_nm: float = 35.0) -> "SensorResponse":
        """Three Gaussian bumps (R, G, B channel order) truncated to the grid."""
        wl = grid.wavelengths_nm[:, None]
        centers = np.asarray(centers_nm, dtype=np.float64)[None, :]
        resp = np.exp(-0.5 * ((wl - centers) / sigma_nm) ** 2)
        return cls(grid, resp)


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------

_ALIGN = 16


def _pack_container(header: dict, planes: np.ndarray) -> bytes:
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    pad = _ALIGN - (len(head) % _ALIGN)  # always >= 1 so the header is NUL-terminated
    payload = np.ascontiguousarray(planes, dtype="<f4").tobytes()
    return head + b"\x00" * pad + payload


def _unpack_container(blob: bytes, path) -> tuple[dict, np.ndarray]:
    end = blob.find(b"\x00")
    if end < 0:
        raise DataError(f"{path}: missing header terminator")
    try:
        header = json.loads(blob[:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed header: {exc}") from exc
    for key in ("width", "height", "bands", "wavelengths_nm", "dtype", "layout", "endianness"):
        if key not in header:
            raise DataError(f"{path}: header missing {key!r}")
    if header["dtype"] != "f32" or header["layout"] != "band-sequential" \
            or header["endianness"] != "little":
        raise DataError(f"{path}: unsupported payload description")
    w, h, nb = int(header["width"]), int(header["height"]), int(header["bands"])
    if len(header["wavelengths_nm"]) != nb:
        raise DataError(f"{path}: wavelength list does not match band count")
    offset = (end // _ALIGN + 1) * _ALIGN
    expected = w * h * nb * 4
    if len(blob) - offset != expected:
        raise DataError(f"{path}: payload size mismatch "
                        f"(expected {expected} bytes, found {len(blob) - offset})")
    planes = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(nb, h, w)
    return header, planes


def save_cube(cube: HyperspectralCube, path) -> None:
    header = {
        "width": cube.width,
        "height": cube.height,
        "bands": cube.bands,
        "wavelengths_nm": [float(v) for v in cube.grid.wavelengths_nm],
        "dtype": "f32",
        "layout": "band-sequential",
        "endianness": "little",
        "sampling_mode": cube.grid.sampling_mode,
        "kind": "cube",
    }
    planes = np.transpose(cube.data, (2, 0, 1))
    Path(path).write_bytes(_pack_container(header, planes))


def load_cube(path) -> HyperspectralCube:
    header, planes = _unpack_container(Path(path).read_bytes(), path)
    wl = np.asarray(header["wavelengths_nm"], dtype=np.float64)
    if np.any(wl <= 0) or np.any(np.diff(wl) <= 0):
        raise DataError(f"{path}: non-monotone or non-positive wavelength list")
    grid = SpectralGrid(wl, header.get("sampling_mode", UNIFORM_LAMBDA))
    return HyperspectralCube(grid, np.transpose(planes, (1, 2, 0)))


def save_measurement(meas: MeasurementImage, path) -> None:
    header = {
        "width": meas.width,
        "height": meas.height,
        "bands": 1,
        "wavelengths_nm": [0.0],
        "dtype": "f32",
        "layout": "band-sequential",
        "endianness": "little",
        "kind": "measurement",
        "pattern_id": meas.pattern_id,
    }
    Path(path).write_bytes(_pack_container(header, meas.data[None, :, :]))


def load_measurement(path) -> MeasurementImage:
    header, planes = _unpack_container(Path(path).read_bytes(), path)
    if header["bands"] != 1:
        raise DataError(f"{path}: measurement container must have one band")
    return MeasurementImage(planes[0].astype(np.float64),
                            pattern_id=str(header.get("pattern_id", "")))


def save_guide(guide: GuideImage, path) -> None:
    header = {
        "width": guide.width,
        "height": guide.height,
        "bands": guide.channels,
        "wavelengths_nm": [0.0] * guide.channels,
        "dtype": "f32",
        "layout": "band-sequential",
        "endianness": "little",
        "kind": "guide",
    }
    data = guide.data if guide.data.ndim == 3 else guide.data[:, :, None]
    Path(path).write_bytes(_pack_container(header, np.transpose(data, (2, 0, 1))))


def load_guide(path) -> GuideImage:
    header, planes = _unpack_container(Path(path).read_bytes(), path)
    data = np.transpose(planes, (1, 2, 0)).astype(np.float64)
    if header["bands"] == 1:
        data = data[:, :, 0]
    return GuideImage(data)


# ---------------------------------------------------------------------------
# Spectral resampling
# ---------------------------------------------------------------------------

def spectral_resample(cube: HyperspectralCube, target: SpectralGrid) -> HyperspectralCube:
    """Per-pixel piecewise-linear interpolation onto a new grid.

    Bands requested outside the source coverage are an error: extrapolating
    radiance would invent data.
    """
    src = cube.grid.wavelengths_nm
    tgt = target.wavelengths_nm
    if tgt[0] < src[0] or tgt[-1] > src[-1]:
        raise DataError(
            f"target range [{tgt[0]:.6g}, {tgt[-1]:.6g}] exceeds source coverage "
            f"[{src[0]:.6g}, {src[-1]:.6g}]")
    hi = np.searchsorted(src, tgt, side="left")
    hi = np.clip(hi, 1, src.size - 1)
    lo = hi - 1
    w = (tgt - src[lo]) / (src[hi] - src[lo])
    data = cube.data.astype(np.float64)
    out = data[:, :, lo] * (1.0 - w) + data[:, :, hi] * w
    return HyperspectralCube(target, out.astype(np.float32))


# ---------------------------------------------------------------------------
# PGM (P5, maxval 255) raw helpers
# ---------------------------------------------------------------------------

def write_pgm(values: np.ndarray, path) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError("PGM payload must be a 2-D uint8 array")
    head = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(head + arr.tobytes())


def _pgm_tokens(blob: bytes):
    """Yield header tokens, skipping PGM comments."""
    i = 0
    n = len(blob)
    while i < n:
        ch = blob[i:i + 1]
        if ch in b" \t\r\n":
            i += 1
        elif ch == b"#":
            while i < n and blob[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and blob[j:j + 1] not in b" \t\r\n":
                j += 1
            yield blob[i:j], j
            i = j


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens = []
    after = 0
    for tok, end in _pgm_tokens(blob):
        tokens.append(tok)
        after = end
        if len(tokens) == 4:
            break
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}, 8-bit patterns require 255")
    payload = blob[after + 1:]  # single whitespace byte after maxval
    if len(payload) != width * height:
        raise DataError(f"{path}: truncated PGM payload "
                        f"(expected {width * height} bytes, found {len(payload)})")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


# ---------------------------------------------------------------------------
# Spectrum CSV
# ---------------------------------------------------------------------------

def save_spectrum_csv(grid: SpectralGrid, values: np.ndarray, path) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.bands,):
        raise DataError("spectrum length must match the grid")
    lines = ["wavelength_nm,value"]
    for wl, v in zip(grid.wavelengths_nm, values):
        lines.append(f"{float(wl)!r},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_spectrum_csv(path) -> tuple[SpectralGrid, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0].strip() != "wavelength_nm,value":
        raise DataError(f"{path}: expected header 'wavelength_nm,value'")
    wl, vals = [], []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}: malformed row {ln!r}")
        wl.append(float(parts[0]))
        vals.append(float(parts[1]))
    return SpectralGrid(np.asarray(wl)), np.asarray(vals)
