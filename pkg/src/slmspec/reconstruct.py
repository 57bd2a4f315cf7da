"""Hyperspectral recovery from capture sets.

Three solvers, in increasing use of priors:

- per-pixel ridge least squares over constant-filter frames (the "nominal
  ground truth" route when all 256 frames are present);
- gradient-descent inversion with an isotropic 2-D total-variation prior and a
  1-D spectral smoothness prior, optimized with adaptive moments (zero init,
  fixed iteration budget);
- rank-1 guided recovery: SLIC superpixels on the guide image, one ridge-
  regressed spectrum per segment, cube assembled as guide x spectrum.

All solvers undo the capture scale and sensor response so outputs are in the
source cube's radiance units. The TV solver internally optimizes a normalized
variable (measurements scaled to unit peak, cube scaled to order one) so the
fixed learning rate behaves the same at any exposure level; regularizer
weights apply in those normalized units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .data_model import GuideImage, HyperspectralCube
from .errors import DataError, NumericError, UsageError
from .forward_sim import CaptureSet


def default_eta_tv(max_electrons: float = 1000.0) -> float:
    """TV weight from the estimated maximum light level: 100/sqrt(tau_max)."""
    if max_electrons <= 0:
        raise UsageError("max_electrons must be positive")
    return 100.0 / np.sqrt(max_electrons)


DEFAULT_ETA_SPECTRAL = 0.5


@dataclass(frozen=True)
class TvConfig:
    eta_tv: float = default_eta_tv(1000.0)
    eta_spectral: float = DEFAULT_ETA_SPECTRAL
    iterations: int = 200
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    tv_epsilon: float = 1e-3  # Charbonnier smoothing of the TV magnitude

    def __post_init__(self):
        if min(self.eta_tv, self.eta_spectral, self.learning_rate,
               self.beta1, self.beta2, self.tv_epsilon) <= 0:
            raise UsageError("TV config values must be positive")
        if self.iterations < 1:
            raise UsageError("need at least one iteration")


@dataclass(frozen=True)
class GuidedConfig:
    q_superpixels: int = 32
    ridge_eta: Optional[float] = None  # None -> capture-count schedule
    guided_filter_radius: int = 8
    guided_filter_eps: float = 1e-4
    postfilter: bool = False
    compactness: float = 0.1

    def __post_init__(self):
        if self.q_superpixels < 1:
            raise UsageError("need at least one superpixel")
        if self.ridge_eta is not None and self.ridge_eta <= 0:
            raise UsageError("ridge_eta must be positive")


@dataclass(frozen=True)
class SuperpixelMap:
    labels: np.ndarray  # (height, width) int32 in [0, segment_count)
    segment_count: int
    compactness: float

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int32)
        object.__setattr__(self, "labels", lab)
        if lab.ndim != 2:
            raise DataError("labels must be 2-D")
        if lab.min() < 0 or lab.max() >= self.segment_count:
            raise DataError("labels must cover [0, segment_count)")


def rank1_eta(n_captures: int) -> float:
    """Ridge weight schedule: 1e-5 for one capture down to 1e-6 for 256."""
    if n_captures < 1:
        raise UsageError("need at least one capture")
    t = (min(n_captures, 256) - 1) / 255.0
    return 1e-5 + t * (1e-6 - 1e-5)


def suggested_superpixel_count(q_base: int, n_captures: int) -> int:
    """More captures support smaller (hence more) superpixels."""
    return max(1, int(round(q_base * np.sqrt(n_captures))))


# ---------------------------------------------------------------------------
# Per-pixel least squares over constant-filter frames
# ---------------------------------------------------------------------------

def _constant_indices(captures: CaptureSet) -> np.ndarray:
    idx = []
    for p in captures.patterns:
        lo, hi = int(p.values.min()), int(p.values.max())
        if lo != hi:
            raise UsageError("least-squares recovery needs constant patterns")
        idx.append(lo)
    return np.asarray(idx, dtype=np.int64)


def reconstruct_lsq(captures: CaptureSet, ridge_rel: float = 1e-8) -> HyperspectralCube:
    """Per-pixel spectrum recovery by inverting the constant-filter rows.

    Solves the normal equations with a small relative ridge for conditioning;
    the recovered cube is rescaled into the source radiance units.
    """
    if len(captures) == 0:
        raise UsageError("empty capture set")
    rows = _constant_indices(captures)
    bank = captures.bank
    nb = bank.grid.bands
    a = captures.scale_electrons * bank.transmittance[rows] * captures.sensor.response
    y = np.stack([m.data.reshape(-1) for m in captures.measurements])  # (K, HW)
    ata = a.T @ a
    ridge = ridge_rel * np.trace(ata) / nb
    spectra = np.linalg.solve(ata + ridge * np.eye(nb), a.T @ y)  # (L, HW)
    h, w = captures.measurements[0].data.shape
    data = np.maximum(spectra.T.reshape(h, w, nb), 0.0)
    return HyperspectralCube(bank.grid, data.astype(np.float32))


def reconstruct_lsq_fullscan(captures: CaptureSet) -> HyperspectralCube:
    """The nominal-ground-truth route: all 256 constant frames required."""
    if len(captures) != 256:
        raise UsageError("full-scan recovery needs 256 frames")
    return reconstruct_lsq(captures)


# ---------------------------------------------------------------------------
# TV-regularized inversion
# ---------------------------------------------------------------------------

class TvProblem:
    """Objective and analytic gradient for the TV-regularized inverse problem.

    Measurements are divided by their set-wide peak and the cube is expressed
    in units of ``unit_radiance`` so the fixed learning rate is exposure-
    independent. The optimizer variable U lives in the eigenbasis of the
    capture-averaged normal matrix (spectra are Z = U @ basis): there the
    data-term curvature is diagonal, which is exactly what per-coordinate
    adaptive-moment scaling can equalize. A global scale on the basis puts the
    dominant-mode optimum at ~0.5 so it sits within the fixed-step budget.
    The objective itself (data terms, TV, spectral smoothness) is evaluated
    on Z and is independent of this parametrization.
    """

    def __init__(self, captures: CaptureSet, cfg: TvConfig):
        if len(captures) == 0:
            raise UsageError("empty capture set")
        self.cfg = cfg
        bank = captures.bank
        sensor = captures.sensor.response
        h, w = captures.measurements[0].data.shape
        nb = bank.grid.bands
        self.shape = (h, w, nb)
        self.grid = bank.grid

        ynorm = max(float(max(m.data.max() for m in captures.measurements)), 1e-300)
        phys = bank.transmittance * sensor  # (256, L)
        row_mass = float(np.mean(phys.sum(axis=1)))
        self.unit_radiance = ynorm / (captures.scale_electrons * max(row_mass, 1e-300))
        gain = captures.scale_electrons * self.unit_radiance / ynorm

        const_rows, const_ys = [], []
        map_patterns, map_ys = [], []
        npix = h * w
        normal = np.zeros((nb, nb))
        ynorm2 = 0.0
        for meas, pat in zip(captures.measurements, captures.patterns):
            yk = meas.data.reshape(-1) / ynorm
            ynorm2 += float(np.mean(yk * yk))
            lo, hi = int(pat.values.min()), int(pat.values.max())
            if lo == hi:
                const_rows.append(lo)
                const_ys.append(yk)
                row = gain * phys[lo]
                normal += np.outer(row, row)
            else:
                pidx = pat.values.reshape(-1).astype(np.int64)
                map_patterns.append(pidx)
                map_ys.append(yk)
                hist = np.bincount(pidx, minlength=256) / npix
                rows = gain * phys
                normal += rows.T @ (hist[:, None] * rows)

        # The dominant-mode optimum magnitude is ~ (per-pixel measurement norm)
        # / sqrt(top curvature); scale the basis so that lands at 0.5, within
        # reach of the fixed-step budget.
        evals, evecs = np.linalg.eigh(normal)
        top_curv = float(evals[-1])
        y_rms = float(np.sqrt(ynorm2))
        if y_rms > 0 and top_curv > 0:
            scale = 2.0 * y_rms / np.sqrt(top_curv)
        else:
            scale = 1.0
        self.basis = scale * evecs.T  # (L, L): Z = U @ basis

        self.map_phis = [gain * phys[pidx] @ self.basis.T for pidx in map_patterns]
        self.map_ys = map_ys
        if const_rows:
            self.const_a = gain * phys[np.asarray(const_rows)] @ self.basis.T
            self.const_y = np.stack(const_ys, axis=1)  # (HW, Kc)
        else:
            self.const_a = None
            self.const_y = None

    def spectra(self, u: np.ndarray) -> np.ndarray:
        """Normalized per-pixel spectra Z for an optimizer iterate U."""
        return u @ self.basis

    def objective_and_gradient(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        h, w, nb = self.shape
        obj = 0.0
        grad = np.zeros_like(u)

        if self.const_a is not None:
            resid = u @ self.const_a.T - self.const_y
            obj += float(np.sum(resid * resid))
            grad += 2.0 * (resid @ self.const_a)
        for phi, yk in zip(self.map_phis, self.map_ys):
            resid = np.einsum("pl,pl->p", u, phi) - yk
            obj += float(np.sum(resid * resid))
            grad += 2.0 * resid[:, None] * phi

        z3 = self.spectra(u).reshape(h, w, nb)
        gz = np.zeros_like(z3)

        eps = self.cfg.tv_epsilon
        dx = np.zeros_like(z3)
        dy = np.zeros_like(z3)
        dx[:, :-1, :] = z3[:, 1:, :] - z3[:, :-1, :]
        dy[:-1, :, :] = z3[1:, :, :] - z3[:-1, :, :]
        mag = np.sqrt(dx * dx + dy * dy + eps * eps)
        obj += self.cfg.eta_tv * float(np.sum(mag - eps))
        gx = dx / mag
        gy = dy / mag
        tvg = -gx - gy
        tvg[:, 1:, :] += gx[:, :-1, :]
        tvg[1:, :, :] += gy[:-1, :, :]
        gz += self.cfg.eta_tv * tvg

        dl = z3[:, :, 1:] - z3[:, :, :-1]
        obj += self.cfg.eta_spectral * float(np.sum(dl * dl))
        gz[:, :, :-1] -= 2.0 * self.cfg.eta_spectral * dl
        gz[:, :, 1:] += 2.0 * self.cfg.eta_spectral * dl

        grad += gz.reshape(h * w, nb) @ self.basis.T
        return obj, grad


def reconstruct_tv(captures: CaptureSet, cfg: TvConfig = TvConfig(),
                   info: Optional[dict] = None) -> HyperspectralCube:
    """Adaptive-moment gradient descent on the TV objective from a zero start.

    Runs exactly ``cfg.iterations`` steps; raises NumericError (with the
    iterate index) if the objective stops being finite. When ``info`` is given
    it receives the objective trace and normalization constants.
    """
    prob = TvProblem(captures, cfg)
    h, w, nb = prob.shape
    u = np.zeros((h * w, nb))
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    trace = []
    lr, b1, b2 = cfg.learning_rate, cfg.beta1, cfg.beta2
    for t in range(1, cfg.iterations + 1):
        obj, grad = prob.objective_and_gradient(u)
        if not np.isfinite(obj):
            raise NumericError(f"TV objective became non-finite at iteration {t - 1}")
        trace.append(obj)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        u = u - lr * mhat / (np.sqrt(vhat) + 1e-8)
    final_obj, _ = prob.objective_and_gradient(u)
    if not np.isfinite(final_obj):
        raise NumericError(f"TV objective became non-finite at iteration {cfg.iterations}")
    trace.append(final_obj)
    if info is not None:
        info["objective_trace"] = trace
        info["unit_radiance"] = prob.unit_radiance
    data = np.maximum(prob.unit_radiance * prob.spectra(u).reshape(h, w, nb), 0.0)
    return HyperspectralCube(prob.grid, data.astype(np.float32))


# ---------------------------------------------------------------------------
# SLIC superpixels
# ---------------------------------------------------------------------------

def _seed_grid(height: int, width: int, q: int) -> tuple[int, int]:
    """Pick a (rows, cols) center layout whose product is closest to q."""
    best = None
    for ny in range(1, q + 1):
        nx = max(1, round(q / ny))
        if ny * nx > height * width:
            continue
        score = (abs(ny * nx - q), abs(width / nx - height / ny), ny)
        if best is None or score < best[0]:
            best = (score, ny, nx)
    return best[1], best[2]


def _enforce_connectivity(labels: np.ndarray, min_size: int) -> tuple[np.ndarray, int]:
    """Relabel 4-connected components; absorb small ones into a neighbor."""
    h, w = labels.shape
    out = np.full((h, w), -1, dtype=np.int32)
    next_id = 0
    stack: list[tuple[int, int]] = []
    for sy in range(h):
        for sx in range(w):
            if out[sy, sx] >= 0:
                continue
            lab = labels[sy, sx]
            comp = [(sy, sx)]
            out[sy, sx] = -2  # visiting
            stack.append((sy, sx))
            adjacent = -1
            while stack:
                y, x = stack.pop()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if not (0 <= ny < h and 0 <= nx < w):
                        continue
                    if out[ny, nx] == -1 and labels[ny, nx] == lab:
                        out[ny, nx] = -2
                        comp.append((ny, nx))
                        stack.append((ny, nx))
                    elif out[ny, nx] >= 0 and adjacent < 0:
                        adjacent = out[ny, nx]
            if len(comp) < min_size and adjacent >= 0:
                new = adjacent
            else:
                new = next_id
                next_id += 1
            for y, x in comp:
                out[y, x] = new
    return out, next_id


def slic_superpixels(guide: GuideImage, q: int, compactness: float = 0.1,
                     iterations: int = 10) -> SuperpixelMap:
    """Deterministic SLIC: grid-seeded centers, fixed iteration count.

    Features are guide intensities normalized to unit peak; the spatial term
    is weighted by (compactness / S)^2 with S the expected segment spacing.
    Connectivity is enforced afterwards, so the realized segment count can
    differ from q by a few segments.
    """
    if q < 1:
        raise UsageError("need at least one superpixel")
    h, w = guide.height, guide.width
    if q > h * w:
        raise UsageError("more superpixels than pixels")

    feats = guide.data if guide.data.ndim == 3 else guide.data[:, :, None]
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    peak = feats.max()
    if peak > 0:
        feats = feats / peak

    ny, nx = _seed_grid(h, w, q)
    cy = ((np.arange(ny) + 0.5) * h / ny)
    cx = ((np.arange(nx) + 0.5) * w / nx)
    centers_y = np.repeat(cy, nx)
    centers_x = np.tile(cx, ny)
    npix_per = np.sqrt(h * w / (ny * nx))
    spatial_weight = (compactness / npix_per) ** 2
    window = int(np.ceil(2.0 * max(h / ny, w / nx)))

    ccol = np.empty((ny * nx, feats.shape[2]))
    iy = np.clip(centers_y.astype(np.int64), 0, h - 1)
    ix = np.clip(centers_x.astype(np.int64), 0, w - 1)
    ccol[:] = feats[iy, ix, :]

    labels = np.empty((h, w), dtype=np.int64)
    dists = np.empty((h, w), dtype=np.float64)
    for _ in range(max(1, iterations)):
        _kernels.slic_assign(feats, centers_y, centers_x, ccol,
                             spatial_weight, window, labels, dists)
        flat = labels.reshape(-1)
        counts = np.bincount(flat, minlength=ny * nx).astype(np.float64)
        ys, xs = np.indices((h, w))
        sum_y = np.bincount(flat, weights=ys.reshape(-1), minlength=ny * nx)
        sum_x = np.bincount(flat, weights=xs.reshape(-1), minlength=ny * nx)
        nonzero = counts > 0
        centers_y = np.where(nonzero, sum_y / np.maximum(counts, 1), centers_y)
        centers_x = np.where(nonzero, sum_x / np.maximum(counts, 1), centers_x)
        for c in range(feats.shape[2]):
            sc = np.bincount(flat, weights=feats[:, :, c].reshape(-1), minlength=ny * nx)
            ccol[:, c] = np.where(nonzero, sc / np.maximum(counts, 1), ccol[:, c])

    min_size = max(1, (h * w) // (ny * nx) // 4)
    merged, count = _enforce_connectivity(labels.astype(np.int32), min_size)
    return SuperpixelMap(merged, count, compactness)


# ---------------------------------------------------------------------------
# Rank-1 guided reconstruction
# ---------------------------------------------------------------------------

def rank1_spectra(captures: CaptureSet, guide: GuideImage,
                  segments: SuperpixelMap, eta: float
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form ridge solve for one spectrum per superpixel.

    Returns (spectra (Q, L), normal matrices (Q, L, L), right-hand sides
    (Q, L)); spectra satisfy (ata + eta*I) s = rhs. Working units: normalized
    measurements and unit-peak guide, with the conversion folded into the
    filter matrix so spectra come out in source radiance units.
    """
    if len(captures) == 0:
        raise UsageError("empty capture set")
    h, w = captures.measurements[0].data.shape
    if guide.data.shape[:2] != (h, w) or segments.labels.shape != (h, w):
        raise DataError("guide and segmentation must match the measurement frame")

    nb = captures.bank.grid.bands
    nq = segments.segment_count
    g = guide.grayscale()
    gmax = float(g.max())
    ynorm = max(float(max(m.data.max() for m in captures.measurements)), 1e-300)
    if gmax <= 0:
        return np.zeros((nq, nb)), np.zeros((nq, nb, nb)), np.zeros((nq, nb))
    gn = (g / gmax).reshape(-1)
    basis = (captures.scale_electrons / ynorm) \
        * captures.bank.transmittance * captures.sensor.response  # (256, L)

    lab = segments.labels.reshape(-1).astype(np.int64)
    nkeys = nq * 256
    w_g2 = np.zeros(nkeys)
    w_gy = np.zeros(nkeys)
    for meas, pat in zip(captures.measurements, captures.patterns):
        key = lab * 256 + pat.values.reshape(-1).astype(np.int64)
        w_g2 += np.bincount(key, weights=gn * gn, minlength=nkeys)
        w_gy += np.bincount(key, weights=gn * (meas.data.reshape(-1) / ynorm),
                            minlength=nkeys)
    w_g2 = w_g2.reshape(nq, 256)
    w_gy = w_gy.reshape(nq, 256)

    spectra = np.zeros((nq, nb))
    atas = np.zeros((nq, nb, nb))
    rhss = np.zeros((nq, nb))
    eye = np.eye(nb)
    for qi in range(nq):
        used = w_g2[qi] > 0
        rows = basis[used]
        ata = rows.T @ (w_g2[qi, used][:, None] * rows)
        rhs = rows.T @ w_gy[qi, used]
        atas[qi] = ata
        rhss[qi] = rhs
        spectra[qi] = np.linalg.solve(ata + eta * eye, rhs)
    return spectra, atas, rhss


def reconstruct_rank1(captures: CaptureSet, guide: GuideImage,
                      cfg: GuidedConfig = GuidedConfig(),
                      segments: Optional[SuperpixelMap] = None,
                      info: Optional[dict] = None) -> HyperspectralCube:
    """Superpixel rank-1 recovery: cube(pixel) = guide(pixel) * segment spectrum."""
    if segments is None:
        segments = slic_superpixels(guide, cfg.q_superpixels, cfg.compactness)
    eta = cfg.ridge_eta if cfg.ridge_eta is not None else rank1_eta(len(captures))
    spectra, _, _ = rank1_spectra(captures, guide, segments, eta)
    g = guide.grayscale()
    gmax = float(g.max())
    gn = g / gmax if gmax > 0 else g
    data = gn[:, :, None] * spectra[segments.labels]
    cube = HyperspectralCube(captures.bank.grid,
                             np.maximum(data, 0.0).astype(np.float32))
    if info is not None:
        info["segment_count"] = segments.segment_count
        info["ridge_eta"] = eta
    if cfg.postfilter:
        cube = guided_filter(cube, guide, cfg.guided_filter_radius,
                             cfg.guided_filter_eps)
    return cube


# ---------------------------------------------------------------------------
# Guided filter (box-window, grayscale guide)
# ---------------------------------------------------------------------------

def _box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over (2r+1)^2 windows clipped at the borders."""
    h, w = a.shape[:2]
    c = np.cumsum(np.cumsum(a, axis=0, dtype=np.float64), axis=1)
    pad = np.zeros((h + 1, w + 1) + a.shape[2:], dtype=np.float64)
    pad[1:, 1:] = c
    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return (pad[np.ix_(y1, x1)] - pad[np.ix_(y0, x1)]
            - pad[np.ix_(y1, x0)] + pad[np.ix_(y0, x0)])


def guided_filter(cube: HyperspectralCube, guide, radius: int = 8,
                  eps: float = 1e-4) -> HyperspectralCube:
    """Edge-preserving smoothing of each band, steered by the guide image.

    The guide is normalized to unit peak internally so eps is scale-free.
    """
    i_img = guide.grayscale() if isinstance(guide, GuideImage) else np.asarray(guide, dtype=np.float64)
    h, w = cube.height, cube.width
    if i_img.shape != (h, w):
        raise DataError("guide size does not match the cube")
    if radius < 1 or 2 * radius + 1 > min(h, w):
        raise UsageError("filter radius must fit inside the frame")
    peak = i_img.max()
    if peak > 0:
        i_img = i_img / peak

    p = cube.data.astype(np.float64)
    n = _box_sum(np.ones((h, w)), radius)
    mean_i = _box_sum(i_img, radius) / n
    mean_p = _box_sum(p, radius) / n[:, :, None]
    corr_ip = _box_sum(i_img[:, :, None] * p, radius) / n[:, :, None]
    var_i = _box_sum(i_img * i_img, radius) / n - mean_i * mean_i
    cov_ip = corr_ip - mean_i[:, :, None] * mean_p
    a = cov_ip / (var_i[:, :, None] + eps)
    b = mean_p - a * mean_i[:, :, None]
    mean_a = _box_sum(a, radius) / n[:, :, None]
    mean_b = _box_sum(b, radius) / n[:, :, None]
    out = mean_a * i_img[:, :, None] + mean_b
    return HyperspectralCube(cube.grid, np.maximum(out, 0.0).astype(np.float32))
