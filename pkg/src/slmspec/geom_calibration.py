"""Geometric calibration math: cubic polynomial maps with RANSAC, mapping
inversion, single-capture drift refinement, and homography fitting.

Everything operates on already-extracted correspondences; line/grid detection
in images is upstream of this module. Synthetic scan generators plant known
maps so fits can be verified against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, NumericError, UsageError

# Full bivariate monomial basis of total degree <= 3.
N_COEFFS = 10


def _basis(xn: np.ndarray, yn: np.ndarray) -> np.ndarray:
    one = np.ones_like(xn)
    return np.stack([one, xn, yn, xn * xn, xn * yn, yn * yn,
                     xn ** 3, xn * xn * yn, xn * yn * yn, yn ** 3], axis=-1)


@dataclass(frozen=True)
class PolynomialMap2D:
    """(x, y) -> scalar, bivariate polynomial of total degree <= 3.

    Inputs are affinely pre-normalized to [-1, 1] for conditioning; the
    normalization is part of the map.
    """

    coeffs: np.ndarray  # (10,)
    x_center: float
    x_half: float
    y_center: float
    y_half: float

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", c)
        if c.shape != (N_COEFFS,):
            raise DataError("cubic map needs exactly 10 coefficients")
        if not np.all(np.isfinite(c)):
            raise DataError("coefficients must be finite")
        if self.x_half <= 0 or self.y_half <= 0:
            raise DataError("normalization half-widths must be positive")

    def _norm(self, x, y):
        return ((np.asarray(x, dtype=np.float64) - self.x_center) / self.x_half,
                (np.asarray(y, dtype=np.float64) - self.y_center) / self.y_half)

    def __call__(self, x, y):
        xn, yn = self._norm(x, y)
        return _basis(xn, yn) @ self.coeffs

    def d_dy(self, x, y):
        """Analytic partial derivative along y (for root solving)."""
        xn, yn = self._norm(x, y)
        c = self.coeffs
        val = (c[2] + c[4] * xn + 2 * c[5] * yn
               + c[7] * xn * xn + 2 * c[8] * xn * yn + 3 * c[9] * yn * yn)
        return val / self.y_half

    @classmethod
    def fit(cls, points: np.ndarray, targets: np.ndarray,
            norm: Optional[tuple] = None) -> "PolynomialMap2D":
        """Least-squares fit of targets over (x, y) sample points."""
        pts = np.asarray(points, dtype=np.float64)
        t = np.asarray(targets, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] != t.size:
            raise UsageError("points must be (N, 2) matching targets")
        if pts.shape[0] < N_COEFFS:
            raise UsageError(f"need at least {N_COEFFS} correspondences")
        if norm is None:
            xc = 0.5 * (pts[:, 0].min() + pts[:, 0].max())
            yc = 0.5 * (pts[:, 1].min() + pts[:, 1].max())
            xh = max(0.5 * (pts[:, 0].max() - pts[:, 0].min()), 1e-9)
            yh = max(0.5 * (pts[:, 1].max() - pts[:, 1].min()), 1e-9)
            norm = (xc, xh, yc, yh)
        xc, xh, yc, yh = norm
        a = _basis((pts[:, 0] - xc) / xh, (pts[:, 1] - yc) / yh)
        coeffs, _, rank, _ = np.linalg.lstsq(a, t, rcond=None)
        if rank < N_COEFFS:
            raise NumericError("degenerate correspondence configuration")
        return cls(coeffs, x_center=xc, x_half=xh, y_center=yc, y_half=yh)


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, normalized so the bottom-right entry is 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise DataError("homography must be 3x3")
        if abs(m[2, 2]) < 1e-300:
            raise DataError("homography must have nonzero corner")
        m = m / m[2, 2]
        object.__setattr__(self, "matrix", m)
        s = np.linalg.svd(m, compute_uv=False)
        if s[-1] <= 0 or s[0] / s[-1] > 1e12:
            raise NumericError("homography is singular or near-singular")

    @property
    def condition_number(self) -> float:
        s = np.linalg.svd(self.matrix, compute_uv=False)
        return float(s[0] / s[-1])

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        ph = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
        q = ph @ self.matrix.T
        return q[:, :2] / q[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class ScanObservation:
    """Correspondences from a row or column sweep.

    ``points`` are sensor pixels, ``targets`` the lit SLM row/column index.
    ``true_inliers`` is simulation metadata (which points were not corrupted).
    """

    points: np.ndarray  # (N, 2)
    targets: np.ndarray  # (N,)
    axis: str  # "row" or "col"
    true_inliers: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        t = np.asarray(self.targets, dtype=np.float64)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "targets", t)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] != t.size:
            raise DataError("points must be (N, 2) matching targets")
        if self.axis not in ("row", "col"):
            raise DataError("axis must be 'row' or 'col'")

    def __len__(self) -> int:
        return len(self.targets)


def scan_line_positions(slm_extent: int, stagger: int) -> np.ndarray:
    """SLM row/column indices lit during a sweep staggered by ``stagger``."""
    if stagger < 1:
        raise UsageError("stagger must be >= 1")
    return np.arange(0, slm_extent, stagger, dtype=np.float64)


def _solve_y_on_line(true_map: PolynomialMap2D, x: float, target: float,
                     y_lo: float, y_hi: float) -> Optional[float]:
    """Find y with map(x, y) = target by bracketing + bisection."""
    ys = np.linspace(y_lo, y_hi, 65)
    vals = true_map(np.full(ys.shape, x), ys) - target
    sign = np.sign(vals)
    idx = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
    if idx.size == 0:
        return None
    a, b = ys[idx[0]], ys[idx[0] + 1]
    fa = true_map(x, a) - target
    for _ in range(80):
        m = 0.5 * (a + b)
        fm = true_map(x, m) - target
        if fa * fm <= 0:
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def simulate_scan(true_map: PolynomialMap2D, slm_extent: int,
                  sensor_size: tuple, stagger: int = 33,
                  samples_per_line: int = 40, noise_px: float = 0.0,
                  outlier_fraction: float = 0.0, seed: int = 0,
                  axis: str = "row") -> ScanObservation:
    """Synthetic line sweep: lines every ``stagger`` SLM rows/columns.

    Detection noise perturbs the sensor coordinate transverse to the line;
    outliers replace the target with a uniformly random line index. The
    noiseless points satisfy the planted map exactly.
    """
    if stagger < 1:
        raise UsageError("stagger must be >= 1")
    height, width = sensor_size
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed % (1 << 64))))
    lines = scan_line_positions(slm_extent, stagger)
    xs = np.linspace(2.0, width - 3.0, samples_per_line)
    pts, tgt = [], []
    for line in lines:
        for x in xs:
            y = _solve_y_on_line(true_map, float(x), float(line), 0.0, height - 1.0)
            if y is None:
                continue
            pts.append((x, y))
            tgt.append(line)
    pts = np.asarray(pts)
    tgt = np.asarray(tgt)
    n = len(tgt)
    if n < N_COEFFS:
        raise NumericError("planted map yields too few visible line samples")
    if noise_px > 0:
        pts = pts + rng.normal(0.0, noise_px, size=pts.shape)
    inliers = np.ones(n, dtype=bool)
    if outlier_fraction > 0:
        bad = rng.random(n) < outlier_fraction
        inliers = ~bad
        tgt = tgt.copy()
        tgt[bad] = rng.uniform(0, slm_extent, size=int(bad.sum()))
    return ScanObservation(pts, tgt, axis=axis, true_inliers=inliers)


RANSAC_MIN_SAMPLE = 12  # slightly over the 10 coefficients, for stability


def fit_polynomial_ransac(obs: ScanObservation, threshold_px: float = 0.5,
                          max_iters: int = 500, seed: int = 0
                          ) -> tuple[PolynomialMap2D, np.ndarray]:
    """Robust cubic fit; returns the refit-on-inliers map and the inlier mask.

    Deterministic for a fixed seed. The returned model's consensus is at least
    as large as every sampled candidate's.
    """
    n = len(obs)
    if n < RANSAC_MIN_SAMPLE:
        raise UsageError(f"need at least {RANSAC_MIN_SAMPLE} correspondences")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed % (1 << 64))))
    norm = None
    best_count = -1
    best_mask = None
    for _ in range(max_iters):
        pick = rng.choice(n, size=RANSAC_MIN_SAMPLE, replace=False)
        try:
            model = PolynomialMap2D.fit(obs.points[pick], obs.targets[pick], norm)
        except NumericError:
            continue
        resid = np.abs(model(obs.points[:, 0], obs.points[:, 1]) - obs.targets)
        mask = resid < threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < RANSAC_MIN_SAMPLE:
        raise NumericError("RANSAC found no consensus above the minimal sample")
    refit = PolynomialMap2D.fit(obs.points[best_mask], obs.targets[best_mask])
    resid = np.abs(refit(obs.points[:, 0], obs.points[:, 1]) - obs.targets)
    refit_mask = resid < threshold_px
    if int(refit_mask.sum()) >= best_count:
        return refit, refit_mask
    return refit, best_mask


def invert_mapping(fwd_x: PolynomialMap2D, fwd_y: PolynomialMap2D,
                   domain: tuple, samples: int = 40,
                   max_error_px: float = 1.0
                   ) -> tuple[PolynomialMap2D, PolynomialMap2D, float]:
    """Fit reverse cubic maps through dense forward correspondences.

    ``domain`` is (x0, y0, x1, y1) on the forward maps' input side. Raises
    NumericError when the forward pair folds (round-trip error beyond
    ``max_error_px``); otherwise returns (inv_x, inv_y, max_roundtrip_error).
    """
    x0, y0, x1, y1 = domain
    gx, gy = np.meshgrid(np.linspace(x0, x1, samples),
                         np.linspace(y0, y1, samples))
    gx = gx.reshape(-1)
    gy = gy.reshape(-1)
    fx = fwd_x(gx, gy)
    fy = fwd_y(gx, gy)
    fwd_pts = np.stack([fx, fy], axis=1)
    inv_x = PolynomialMap2D.fit(fwd_pts, gx)
    inv_y = PolynomialMap2D.fit(fwd_pts, gy)
    rx = inv_x(fx, fy) - gx
    ry = inv_y(fx, fy) - gy
    err = float(np.max(np.hypot(rx, ry)))
    if err > max_error_px:
        raise NumericError(f"forward mapping is not invertible on the domain "
                           f"(round-trip error {err:.3g} px)")
    return inv_x, inv_y, err


def refine_with_grid(map_x: PolynomialMap2D, map_y: PolynomialMap2D,
                     sensor_points: np.ndarray, slm_points: np.ndarray,
                     samples: int = 25
                     ) -> tuple[PolynomialMap2D, PolynomialMap2D, float]:
    """Affine drift correction from one grid capture.

    Fits the affine transform taking current predictions to the known SLM grid
    coordinates, composes it with the current maps (still cubic), and reports
    the post-correction residual so callers can flag drifts beyond affine.
    """
    sp = np.asarray(sensor_points, dtype=np.float64)
    gp = np.asarray(slm_points, dtype=np.float64)
    if sp.ndim != 2 or sp.shape[1] != 2 or sp.shape != gp.shape:
        raise UsageError("sensor and SLM points must both be (N, 2)")
    if sp.shape[0] < 6:
        raise UsageError("need at least 6 grid intersections")
    pred = np.stack([map_x(sp[:, 0], sp[:, 1]), map_y(sp[:, 0], sp[:, 1])], axis=1)
    design = np.concatenate([pred, np.ones((len(pred), 1))], axis=1)
    sol, _, rank, _ = np.linalg.lstsq(design, gp, rcond=None)
    if rank < 3:
        raise NumericError("degenerate grid configuration")
    corrected = design @ sol
    resid = float(np.max(np.hypot(*(corrected - gp).T)))

    # Re-fit the composed (affine o cubic) maps; exact since the composition
    # stays within total degree 3.
    xs = np.linspace(sp[:, 0].min(), sp[:, 0].max(), samples)
    ys = np.linspace(sp[:, 1].min(), sp[:, 1].max(), samples)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.reshape(-1)
    gy = gy.reshape(-1)
    px = map_x(gx, gy)
    py = map_y(gx, gy)
    cx = sol[0, 0] * px + sol[1, 0] * py + sol[2, 0]
    cy = sol[0, 1] * px + sol[1, 1] * py + sol[2, 1]
    pts = np.stack([gx, gy], axis=1)
    return (PolynomialMap2D.fit(pts, cx), PolynomialMap2D.fit(pts, cy), resid)


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d <= 0:
        raise NumericError("degenerate point set (all points coincide)")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    ph = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    return (ph @ t.T)[:, :2], t


def fit_homography(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Direct linear transform with Hartley normalization."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise UsageError("correspondences must be matching (N, 2) arrays")
    if src.shape[0] < 4:
        raise UsageError("need at least 4 correspondences")
    sn, ts = _hartley_normalize(src)
    dn, td = _hartley_normalize(dst)
    n = len(sn)
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2] = np.column_stack([x, y, np.ones(n), np.zeros((n, 3)),
                               -u * x, -u * y, -u])
    a[1::2] = np.column_stack([np.zeros((n, 3)), x, y, np.ones(n),
                               -v * x, -v * y, -v])
    _, sv, vt = np.linalg.svd(a)
    if n > 4 and sv[7] < 1e-12 * sv[0]:
        raise NumericError("degenerate correspondence configuration")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    return Homography(h)


def reprojection_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    proj = h.apply(np.asarray(src, dtype=np.float64))
    return np.hypot(*(proj - np.asarray(dst, dtype=np.float64)).T)
