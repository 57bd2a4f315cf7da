"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

Every kernel exists twice: ``<name>_numpy`` (vectorized numpy, always present)
and ``<name>_jit`` (numba ``@njit``, present when numba imports). The public
alias ``<name>`` points at the jitted version unless numba is missing or the
environment variable ``SLMSPEC_NO_NUMBA`` is set to a truthy value.

The two paths are written to perform the same elementwise arithmetic in the
same order wherever integer decisions depend on it (the Poisson sampler, SLIC
tie-breaking), so that results do not depend on which backend is active.
``benchmarks/bench_kernels.py`` times one against the other.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("SLMSPEC_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


USE_NUMBA = NUMBA_AVAILABLE and not _numba_disabled()

# Poisson means below this use exact CDF inversion; above, a rounded normal
# approximation. Pinned so outputs are reproducible across platforms.
POISSON_INVERSION_CUTOFF = 30.0
_POISSON_KMAX = 400


# ---------------------------------------------------------------------------
# Inverse normal CDF (Acklam's rational approximation + one Halley step).
# Shared constant tables; both paths evaluate identical Horner forms.
# ---------------------------------------------------------------------------

_NDTRI_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
            1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_NDTRI_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
            6.680131188771972e+01, -1.328068155288572e+01)
_NDTRI_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
            -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_NDTRI_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
            3.754408661907416e+00)
_NDTRI_PLOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _ndtri_scalar(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    a0, a1, a2, a3, a4, a5 = _NDTRI_A
    b0, b1, b2, b3, b4 = _NDTRI_B
    c0, c1, c2, c3, c4, c5 = _NDTRI_C
    d0, d1, d2, d3 = _NDTRI_D
    if p < _NDTRI_PLOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / \
            ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    elif p <= 1.0 - _NDTRI_PLOW:
        q = p - 0.5
        r = q * q
        x = (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q / \
            (((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / \
            ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    # One Halley refinement: brings the ~1e-9 approximation to near machine eps.
    e = 0.5 * math.erfc(-x / _SQRT2) - p
    u = e * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# numpy lacks a vectorized erfc outside scipy; the Halley refinement goes
# through math.erfc elementwise via np.vectorize.
_erfc_vec = np.vectorize(math.erfc, otypes=[np.float64])


def _ndtri_numpy_refined(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    a0, a1, a2, a3, a4, a5 = _NDTRI_A
    b0, b1, b2, b3, b4 = _NDTRI_B
    c0, c1, c2, c3, c4, c5 = _NDTRI_C
    d0, d1, d2, d3 = _NDTRI_D

    out = np.empty_like(p)
    lo = p < _NDTRI_PLOW
    hi = p > 1.0 - _NDTRI_PLOW
    mid = ~(lo | hi)

    if np.any(lo):
        q = np.sqrt(-2.0 * np.log(p[lo]))
        out[lo] = (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / \
                  ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        out[mid] = (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q / \
                   (((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0)
    if np.any(hi):
        q = np.sqrt(-2.0 * np.log(1.0 - p[hi]))
        out[hi] = -(((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / \
                   ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)

    e = 0.5 * _erfc_vec(-out / _SQRT2) - p
    u = e * _SQRT_2PI * np.exp(0.5 * out * out)
    return out - u / (1.0 + 0.5 * out * u)


def ndtri(p: np.ndarray) -> np.ndarray:
    """Inverse standard-normal CDF, fully specified by this module."""
    p = np.asarray(p, dtype=np.float64)
    zero = p <= 0.0
    one = p >= 1.0
    inner = np.clip(p, 1e-300, 1.0 - 1e-16)
    out = _ndtri_numpy_refined(inner)
    out[zero] = -np.inf
    out[one] = np.inf
    return out


# ---------------------------------------------------------------------------
# Spectrally coded projection: per-pixel dot of cube spectrum with the filter
# row that the SLM pattern selects there.
# ---------------------------------------------------------------------------

def _coded_forward_loop(data, bank, pidx, weight, out):
    height, width, nb = data.shape
    for y in range(height):
        for x in range(width):
            row = pidx[y, x]
            acc = 0.0
            for l in range(nb):
                acc += data[y, x, l] * bank[row, l] * weight[l]
            out[y, x] = acc
    return out


def coded_forward_numpy(data: np.ndarray, bank: np.ndarray, pidx: np.ndarray,
                        weight: np.ndarray) -> np.ndarray:
    gathered = bank[pidx] * weight
    return np.einsum("hwl,hwl->hw", data, gathered)


def _coded_adjoint_loop(resid, bank, pidx, weight, out):
    height, width, nb = out.shape
    for y in range(height):
        for x in range(width):
            row = pidx[y, x]
            r = resid[y, x]
            for l in range(nb):
                out[y, x, l] += r * bank[row, l] * weight[l]
    return out


def coded_adjoint_numpy(resid: np.ndarray, bank: np.ndarray, pidx: np.ndarray,
                        weight: np.ndarray, out: np.ndarray) -> np.ndarray:
    out += resid[:, :, None] * (bank[pidx] * weight)
    return out


# ---------------------------------------------------------------------------
# Poisson sampling from pre-drawn uniforms (reproducible across platforms).
# ---------------------------------------------------------------------------

def _poisson_loop(mu, u, out):
    n = mu.shape[0]
    for i in range(n):
        m = mu[i]
        if m <= 0.0:
            out[i] = 0.0
        elif m < POISSON_INVERSION_CUTOFF:
            p = math.exp(-m)
            cdf = p
            k = 0
            ui = u[i]
            while ui > cdf and k < _POISSON_KMAX:
                k += 1
                p *= m / k
                cdf += p
            out[i] = float(k)
        else:
            z = _ndtri_scalar(u[i])
            k = math.floor(m + math.sqrt(m) * z + 0.5)
            out[i] = k if k > 0.0 else 0.0
    return out


def poisson_from_uniforms_numpy(mu: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson counts via CDF inversion (mean < cutoff) or rounded normal."""
    mu = np.asarray(mu, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(mu)

    small = (mu > 0.0) & (mu < POISSON_INVERSION_CUTOFF)
    if np.any(small):
        m = mu[small]
        us = u[small]
        p = np.exp(-m)
        cdf = p.copy()
        k = np.zeros_like(m)
        pending = us > cdf
        step = 0
        while np.any(pending) and step < _POISSON_KMAX:
            step += 1
            p = p * (m / step)
            cdf = cdf + p
            k[pending] = step
            pending = us > cdf
        out[small] = k

    big = mu >= POISSON_INVERSION_CUTOFF
    if np.any(big):
        m = mu[big]
        z = ndtri(u[big])
        k = np.floor(m + np.sqrt(m) * z + 0.5)
        out[big] = np.maximum(k, 0.0)
    return out


# ---------------------------------------------------------------------------
# SLIC assignment step: windowed nearest-center search. Ties go to the lowest
# center index (strict < update, centers scanned in order) in both paths.
# ---------------------------------------------------------------------------

def _slic_assign_loop(features, cy, cx, ccol, spatial_weight, window, labels, dists):
    height, width, nch = features.shape
    nq = cy.shape[0]
    labels[:] = -1
    dists[:] = np.inf
    for q in range(nq):
        y0 = int(cy[q] - window)
        y1 = int(cy[q] + window) + 1
        x0 = int(cx[q] - window)
        x1 = int(cx[q] + window) + 1
        if y0 < 0:
            y0 = 0
        if x0 < 0:
            x0 = 0
        if y1 > height:
            y1 = height
        if x1 > width:
            x1 = width
        for y in range(y0, y1):
            dy = y - cy[q]
            for x in range(x0, x1):
                dx = x - cx[q]
                d = spatial_weight * (dy * dy + dx * dx)
                for c in range(nch):
                    dc = features[y, x, c] - ccol[q, c]
                    d += dc * dc
                if d < dists[y, x]:
                    dists[y, x] = d
                    labels[y, x] = q
    return labels


def slic_assign_numpy(features, cy, cx, ccol, spatial_weight, window, labels, dists):
    height, width, _ = features.shape
    labels[:] = -1
    dists[:] = np.inf
    ys = np.arange(height, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    for q in range(cy.shape[0]):
        y0 = max(0, int(cy[q] - window))
        y1 = min(height, int(cy[q] + window) + 1)
        x0 = max(0, int(cx[q] - window))
        x1 = min(width, int(cx[q] + window) + 1)
        dy = ys[y0:y1] - cy[q]
        dx = xs[x0:x1] - cx[q]
        d = spatial_weight * (dy[:, None] ** 2 + dx[None, :] ** 2)
        diff = features[y0:y1, x0:x1, :] - ccol[q]
        d = d + np.einsum("hwc,hwc->hw", diff, diff)
        win_d = dists[y0:y1, x0:x1]
        better = d < win_d
        win_d[better] = d[better]
        lab = labels[y0:y1, x0:x1]
        lab[better] = q
    return labels


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:
    _ndtri_scalar = njit(cache=True)(_ndtri_scalar)
    coded_forward_jit_core = njit(cache=True)(_coded_forward_loop)
    coded_adjoint_jit_core = njit(cache=True)(_coded_adjoint_loop)
    poisson_jit_core = njit(cache=True)(_poisson_loop)
    slic_assign_jit_core = njit(cache=True)(_slic_assign_loop)

    def coded_forward_jit(data, bank, pidx, weight):
        out = np.empty(data.shape[:2], dtype=np.float64)
        return coded_forward_jit_core(data, bank, pidx, weight, out)

    def coded_adjoint_jit(resid, bank, pidx, weight, out):
        return coded_adjoint_jit_core(resid, bank, pidx, weight, out)

    def poisson_from_uniforms_jit(mu, u):
        out = np.empty(mu.shape[0], dtype=np.float64)
        return poisson_jit_core(mu, u, out)

    slic_assign_jit = slic_assign_jit_core
else:
    coded_forward_jit = None
    coded_adjoint_jit = None
    poisson_from_uniforms_jit = None
    slic_assign_jit = None


def _select(jit_fn, numpy_fn):
    return jit_fn if (USE_NUMBA and jit_fn is not None) else numpy_fn


coded_forward = _select(coded_forward_jit, coded_forward_numpy)
coded_adjoint = _select(coded_adjoint_jit, coded_adjoint_numpy)
poisson_from_uniforms = _select(poisson_from_uniforms_jit, poisson_from_uniforms_numpy)
slic_assign = _select(slic_assign_jit, slic_assign_numpy)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
