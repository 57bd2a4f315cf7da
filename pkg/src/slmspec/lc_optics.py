"""Liquid-crystal cell transmittance, retardance estimation, gamma design.

A cell between crossed polarizers at 45 degrees to its fast axis transmits
``(1 - cos(2*pi*R/lambda))/2`` where ``R`` is the voltage-dependent retardance
in nm. Everything else here exists to realize, estimate, or linearize that
curve: brute-force retardance fits against measured spectra, design of the
8-bit-index-to-voltage gamma curve that makes retardance affine in the index,
and tabulation of the resulting 256-filter bank.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import SpectralGrid
from .errors import DataError, NumericError, UsageError


def lc_transmittance(retardance_nm, lambda_nm):
    """Closed-form crossed-polarizer transmittance, elementwise in [0, 1]."""
    ret = np.asarray(retardance_nm, dtype=np.float64)
    lam = np.asarray(lambda_nm, dtype=np.float64)
    if not (np.all(np.isfinite(ret)) and np.all(np.isfinite(lam))):
        raise UsageError("retardance and wavelength must be finite")
    if np.any(lam <= 0):
        raise UsageError("wavelength must be positive")
    if np.any(ret < 0):
        raise UsageError("retardance must be nonnegative")
    out = 0.5 * (1.0 - np.cos(2.0 * np.pi * ret / lam))
    if out.ndim == 0:
        return float(out)
    return out


def jones_transmittance(retardance_nm, lambda_nm):
    """Same quantity via explicit 2-vector propagation through the stack.

    Input polarizer at +45 deg -> retarder (phase delay on the slow axis) ->
    crossed analyzer at -45 deg; intensity is the squared magnitude of the
    output Jones vector. Agrees with :func:`lc_transmittance` to 1e-12.
    """
    ret = np.asarray(retardance_nm, dtype=np.float64)
    lam = np.asarray(lambda_nm, dtype=np.float64)
    if not (np.all(np.isfinite(ret)) and np.all(np.isfinite(lam))):
        raise UsageError("retardance and wavelength must be finite")
    if np.any(lam <= 0):
        raise UsageError("wavelength must be positive")
    phi = 2.0 * np.pi * ret / lam
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    v_fast = np.full_like(phi, inv_sqrt2, dtype=np.complex128)
    v_slow = inv_sqrt2 * np.exp(1j * phi)
    # analyzer axis (1, -1)/sqrt(2): project and re-embed
    amp = (v_fast - v_slow) * inv_sqrt2
    out_fast = amp * inv_sqrt2
    out_slow = -amp * inv_sqrt2
    intensity = (out_fast * out_fast.conj() + out_slow * out_slow.conj()).real
    if intensity.ndim == 0:
        return float(intensity)
    return intensity


@dataclass(frozen=True)
class RetardanceCurve:
    """Measured retardance (nm) versus control value (volts or 8-bit index)."""

    control: np.ndarray
    retardance_nm: np.ndarray
    control_kind: str = "volts"  # or "index"

    def __post_init__(self):
        ctrl = np.asarray(self.control, dtype=np.float64)
        ret = np.asarray(self.retardance_nm, dtype=np.float64)
        object.__setattr__(self, "control", ctrl)
        object.__setattr__(self, "retardance_nm", ret)
        if ctrl.ndim != 1 or ctrl.size != ret.size or ctrl.size < 2:
            raise DataError("control and retardance must be 1-D of equal length >= 2")
        if np.any(np.diff(ctrl) <= 0):
            raise DataError("control values must be strictly increasing")
        if not np.all(np.isfinite(ret)) or np.any(ret <= 0):
            raise DataError("retardance must be finite and positive")
        if self.control_kind not in ("volts", "index"):
            raise DataError(f"unknown control kind {self.control_kind!r}")

    def interp(self, control_value):
        """Piecewise-linear retardance at a control value inside the range."""
        v = np.asarray(control_value, dtype=np.float64)
        if np.any(v < self.control[0]) or np.any(v > self.control[-1]):
            raise UsageError("control value outside the measured curve")
        return np.interp(v, self.control, self.retardance_nm)


@dataclass(frozen=True)
class GammaCurve:
    """Map from 8-bit index to drive voltage, designed so retardance is affine."""

    mapping: np.ndarray  # 256 voltages
    v_min: float
    v_max: float
    c0_nm_per_index: float

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.float64)
        object.__setattr__(self, "mapping", m)
        if m.shape != (256,):
            raise DataError("gamma mapping must have exactly 256 entries")
        if not np.all(np.isfinite(m)):
            raise DataError("gamma mapping must be finite")
        if m[0] != self.v_min or m[255] != self.v_max:
            raise DataError("gamma endpoints must equal v_min and v_max")


@dataclass(frozen=True)
class FilterBank:
    """256 x N_lambda transmittance table, one spectral filter per 8-bit index."""

    grid: SpectralGrid
    transmittance: np.ndarray  # (256, bands)
    extra_retardance_nm: float = 0.0
    retardance_nm: np.ndarray | None = field(default=None)  # per-index, when known

    def __post_init__(self):
        t = np.ascontiguousarray(self.transmittance, dtype=np.float64)
        object.__setattr__(self, "transmittance", t)
        if t.shape != (256, self.grid.bands):
            raise DataError("filter bank must be 256 x bands")
        if not np.all(np.isfinite(t)) or np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
            raise DataError("transmittance entries must lie in [0, 1]")
        if self.retardance_nm is not None:
            r = np.asarray(self.retardance_nm, dtype=np.float64)
            if r.shape != (256,):
                raise DataError("per-index retardance must have 256 entries")
            object.__setattr__(self, "retardance_nm", r)


def _scale_offset_residuals(models: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares residual of y against a*model+b, per model row."""
    n = y.size
    ybar = y.mean()
    syy = float(np.sum((y - ybar) ** 2))
    mbar = models.mean(axis=1)
    smm = np.einsum("cl,cl->c", models, models) - n * mbar * mbar
    smy = models @ y - n * mbar * ybar
    safe = smm > 1e-12 * max(1.0, float(np.max(smm)))
    resid = np.full(models.shape[0], syy)
    resid[safe] = syy - smy[safe] ** 2 / smm[safe]
    return np.maximum(resid, 0.0)


def fit_retardance_from_spectrum(spectrum: np.ndarray, grid: SpectralGrid,
                                 search_min_nm: float, search_max_nm: float,
                                 step_nm: float = 1.0) -> float:
    """Brute-force retardance search against the closed-form filter shape.

    The measured spectrum is matched per candidate up to a least-squares scale
    and offset, which absorbs the source spectrum and optics losses absent from
    the ideal model. Ties break toward the smaller retardance.
    """
    y = np.asarray(spectrum, dtype=np.float64)
    if y.shape != (grid.bands,):
        raise UsageError("spectrum length must match the grid")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise DataError("spectrum must be finite and nonnegative")
    if not np.any(y > 0):
        raise DataError("all-zero spectrum carries no retardance information")
    if search_min_nm <= 0 or search_max_nm < search_min_nm or step_nm <= 0:
        raise UsageError("search range must be positive and ordered")
    candidates = np.arange(search_min_nm, search_max_nm + 0.5 * step_nm, step_nm)
    if candidates.size == 0:
        raise UsageError("empty retardance search grid")
    sigma = grid.wavenumbers
    models = 0.5 * (1.0 - np.cos(2.0 * np.pi * candidates[:, None] * sigma[None, :]))
    resid = _scale_offset_residuals(models, y)
    return float(candidates[int(np.argmin(resid))])


def _smooth_preserving_ends(values: np.ndarray, radius: int = 2) -> np.ndarray:
    """Moving average with symmetric windows that shrink near the ends.

    The first and last samples pass through unchanged so that designed gamma
    curves keep their measured endpoint retardances exactly.
    """
    n = values.size
    out = np.empty_like(values)
    for i in range(n):
        r = min(radius, i, n - 1 - i)
        out[i] = values[i - r:i + r + 1].mean()
    return out


def design_gamma_curve(curve: RetardanceCurve, v_min: float, v_max: float) -> GammaCurve:
    """Choose 256 voltages so retardance becomes affine in the 8-bit index.

    Retardance targets are placed uniformly between the curve values at v_min
    and v_max; each target is inverted through the (smoothed) measured curve.
    The endpoints are pinned to v_min and v_max.
    """
    if curve.control_kind != "volts":
        raise UsageError("gamma design needs a curve tagged in volts")
    if not (curve.control[0] <= v_min < v_max <= curve.control[-1]):
        raise UsageError("curve does not cover the requested voltage range")

    inner = curve.control[(curve.control > v_min) & (curve.control < v_max)]
    volts = np.concatenate(([v_min], inner, [v_max]))
    ret = np.interp(volts, curve.control, curve.retardance_nm)
    ret = _smooth_preserving_ends(ret)

    diffs = np.diff(ret)
    if np.all(diffs > 0):
        v_sorted, r_sorted = volts, ret
    elif np.all(diffs < 0):
        v_sorted, r_sorted = volts[::-1], ret[::-1]
    else:
        raise NumericError("retardance is not strictly monotone over the "
                           "requested range after smoothing")

    targets = np.linspace(ret[0], ret[-1], 256)
    mapping = np.interp(targets, r_sorted, v_sorted)
    mapping[0] = v_min
    mapping[255] = v_max
    c0 = (targets[-1] - targets[0]) / 255.0
    return GammaCurve(mapping, v_min=v_min, v_max=v_max, c0_nm_per_index=float(c0))


def build_filter_bank(gamma: GammaCurve, curve: RetardanceCurve, grid: SpectralGrid,
                      extra_retardance_nm: float = 0.0) -> FilterBank:
    """Tabulate the 256 realized filters on a wavelength grid.

    Row r is the closed-form transmittance at retardance(gamma(r)) plus any
    additional fixed retardance placed in the optical path.
    """
    ret = curve.interp(gamma.mapping)
    total = ret + extra_retardance_nm
    if np.any(total < 0):
        raise UsageError("negative total retardance")
    rows = lc_transmittance(total[:, None], grid.wavelengths_nm[None, :])
    return FilterBank(grid, rows, extra_retardance_nm=float(extra_retardance_nm),
                      retardance_nm=ret)


# ---------------------------------------------------------------------------
# CSV serialization (plus JSON sidecars for grid/metadata)
# ---------------------------------------------------------------------------

def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def save_filter_bank(bank: FilterBank, path) -> None:
    cols = ",".join(f"band{i}" for i in range(bank.grid.bands))
    lines = [f"index,{cols}"]
    for r in range(256):
        row = ",".join(repr(float(v)) for v in bank.transmittance[r])
        lines.append(f"{r},{row}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "wavelengths_nm": [float(v) for v in bank.grid.wavelengths_nm],
        "sampling_mode": bank.grid.sampling_mode,
        "extra_retardance_nm": bank.extra_retardance_nm,
        "retardance_nm": None if bank.retardance_nm is None
        else [float(v) for v in bank.retardance_nm],
    }
    _sidecar(path).write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_filter_bank(path) -> FilterBank:
    side = _sidecar(path)
    if not side.exists():
        raise DataError(f"{path}: missing grid sidecar {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    grid = SpectralGrid(np.asarray(meta["wavelengths_nm"]),
                        meta.get("sampling_mode", "uniform-in-lambda"))
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or not lines[0].startswith("index,"):
        raise DataError(f"{path}: expected filter bank CSV header")
    rows = np.zeros((256, grid.bands))
    seen = 0
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != grid.bands + 1:
            raise DataError(f"{path}: row with wrong column count")
        idx = int(parts[0])
        rows[idx] = [float(p) for p in parts[1:]]
        seen += 1
    if seen != 256:
        raise DataError(f"{path}: expected 256 rows, found {seen}")
    ret = meta.get("retardance_nm")
    return FilterBank(grid, rows,
                      extra_retardance_nm=float(meta.get("extra_retardance_nm", 0.0)),
                      retardance_nm=None if ret is None else np.asarray(ret))


def save_retardance_curve(curve: RetardanceCurve, path) -> None:
    lines = [f"{curve.control_kind},retardance_nm"]
    for c, r in zip(curve.control, curve.retardance_nm):
        lines.append(f"{float(c)!r},{float(r)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_retardance_curve(path) -> RetardanceCurve:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) != 2 or header[0] not in ("volts", "index") \
            or header[1] != "retardance_nm":
        raise DataError(f"{path}: expected header '<volts|index>,retardance_nm'")
    ctrl, ret = [], []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        a, b = ln.split(",")
        ctrl.append(float(a))
        ret.append(float(b))
    return RetardanceCurve(np.asarray(ctrl), np.asarray(ret), control_kind=header[0])


def save_gamma_curve(gamma: GammaCurve, path) -> None:
    lines = ["index,volts"]
    for i, v in enumerate(gamma.mapping):
        lines.append(f"{i},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {"c0_nm_per_index": gamma.c0_nm_per_index,
            "v_min": gamma.v_min, "v_max": gamma.v_max}
    _sidecar(path).write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_gamma_curve(path) -> GammaCurve:
    side = _sidecar(path)
    if not side.exists():
        raise DataError(f"{path}: missing gamma sidecar {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != "index,volts":
        raise DataError(f"{path}: expected header 'index,volts'")
    mapping = np.zeros(256)
    for ln in lines[1:]:
        if not ln.strip():
            continue
        i, v = ln.split(",")
        mapping[int(i)] = float(v)
    return GammaCurve(mapping, v_min=float(meta["v_min"]), v_max=float(meta["v_max"]),
                      c0_nm_per_index=float(meta["c0_nm_per_index"]))
