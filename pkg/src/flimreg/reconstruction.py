"""Hypercube to per-wavelength intensity/lifetime planes.

Pipeline pieces: spectral moving-mean smoothing, per-pixel exponential decay
fitting, photon-noise filtering at the sqrt-of-mean-concentration threshold,
and joint percentile normalisation across a tile group.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .datamodel import KIND_INTENSITY, KIND_LIFETIME, Hypercube, ScalarPlane
from .errors import (
    BandOutOfRange,
    DimensionMismatch,
    EmptyGroup,
    EmptyPlane,
    InsufficientSignal,
    WindowTooLarge,
)

# Below ~25 photons a two-parameter exponential fit is meaningless.
MIN_TOTAL_COUNTS = 25.0
LM_MAX_ITER = 100
LM_REL_TOL = 1e-6

# Lower bound of the normalised intensity range; keeps foreground nonzero.
NORM_EPS = 1e-3

# 95% critical values of F(1, d) for d = 1..30; beyond, a 1/d asymptote.
# Used to decide whether the decay offset term earns its keep.
_F95_TABLE = (
    161.45, 18.51, 10.13, 7.71, 6.61, 5.99, 5.59, 5.32, 5.12, 4.96,
    4.84, 4.75, 4.67, 4.60, 4.54, 4.49, 4.45, 4.41, 4.38, 4.35,
    4.32, 4.30, 4.28, 4.26, 4.24, 4.23, 4.21, 4.20, 4.18, 4.17,
)


def _f95(dof: int) -> float:
    if dof <= 0:
        return np.inf
    if dof <= 30:
        return _F95_TABLE[dof - 1]
    return 3.8415 + 9.8 / dof


@dataclass(frozen=True)
class DecayFit:
    """Result of fitting a*exp(-t/tau) + b to one decay curve."""

    tau_ns: float
    amplitude: float
    offset: float
    residual_rms: float
    converged: bool


@dataclass(frozen=True)
class FilterReport:
    """Photon-noise filter statistics: threshold = sqrt(n_hat)."""

    n_hat: float
    threshold: float
    pixels_zeroed: int


def spectral_smooth(cube: Hypercube, window: int = 8) -> Hypercube:
    """Moving spectral mean over `window` bands.

    Band s averages spectral indices [s - window//2, s + (window+1)//2 - 1],
    clamped to the valid range (the window shrinks at the spectral edges).
    """
    if window < 1 or window > cube.spectral_bins:
        raise WindowTooLarge(
            f"window {window} outside [1, {cube.spectral_bins}]")
    counts = cube.counts.astype(np.float64)
    csum = np.concatenate(
        [np.zeros_like(counts[:, :, :1, :]), np.cumsum(counts, axis=2)],
        axis=2)
    s = np.arange(cube.spectral_bins)
    lo = np.maximum(s - window // 2, 0)
    hi = np.minimum(s + (window + 1) // 2 - 1, cube.spectral_bins - 1)
    sums = csum[:, :, hi + 1, :] - csum[:, :, lo, :]
    lengths = (hi - lo + 1).astype(np.float64)
    smoothed = (sums / lengths[None, None, :, None]).astype(np.float32)
    return Hypercube(cube.width, cube.height, cube.spectral_bins,
                     cube.time_bins, cube.wavelength_start_nm,
                     cube.wavelength_step_nm, cube.time_bin_ps, smoothed)


def _time_axis_ns(time_bins: int, time_bin_ps: float) -> np.ndarray:
    return np.arange(time_bins, dtype=np.float64) * (time_bin_ps * 1e-3)


def fit_lifetime(decay: np.ndarray, time_bin_ps: float) -> DecayFit:
    """Least-squares mono-exponential fit of one decay; tau in ns.

    Raises InsufficientSignal when total counts fall below the floor.
    Non-convergence is not an error; it is flagged on the result.
    """
    y = np.ascontiguousarray(decay, dtype=np.float64)
    if y.ndim != 1 or len(y) < 4:
        raise DimensionMismatch("decay must be a 1-D series of length >= 4")
    t = _time_axis_ns(len(y), time_bin_ps)
    amp, tau, off, rms, converged, ok = kernels.fit_decay(
        y, t, MIN_TOTAL_COUNTS, _f95(len(y) - 3), LM_MAX_ITER, LM_REL_TOL)
    if not ok:
        raise InsufficientSignal(
            f"total counts {float(y.sum()):g} below {MIN_TOTAL_COUNTS:g}")
    return DecayFit(tau_ns=float(tau), amplitude=float(amp),
                    offset=float(off), residual_rms=float(rms),
                    converged=bool(converged))


def reconstruct_planes(cube: Hypercube, band: int,
                       workers: int | None = None
                       ) -> tuple[ScalarPlane, ScalarPlane]:
    """Intensity (sum over time) and lifetime (fitted tau) planes at `band`.

    Pixels without enough signal get lifetime 0.  Per-pixel fits are
    independent, so results do not depend on the worker count.
    """
    if band < 0 or band >= cube.spectral_bins:
        raise BandOutOfRange(
            f"band {band} outside [0, {cube.spectral_bins})")
    block = np.ascontiguousarray(
        cube.counts[:, :, band, :], dtype=np.float64)
    intensity = block.sum(axis=2).T  # -> (height, width)
    t = _time_axis_ns(cube.time_bins, cube.time_bin_ps)
    if workers is not None and kernels.BACKEND == "numba":
        import numba
        old = numba.get_num_threads()
        numba.set_num_threads(min(max(1, workers), numba.config.NUMBA_NUM_THREADS))
        try:
            lifetime = kernels.fit_plane(
                block, t, MIN_TOTAL_COUNTS, _f95(cube.time_bins - 3),
                LM_MAX_ITER, LM_REL_TOL)
        finally:
            numba.set_num_threads(old)
    else:
        lifetime = kernels.fit_plane(
            block, t, MIN_TOTAL_COUNTS, _f95(cube.time_bins - 3),
            LM_MAX_ITER, LM_REL_TOL)
    wl = cube.wavelength_of(band)
    return (
        ScalarPlane(KIND_INTENSITY, intensity.astype(np.float32),
                    wavelength_nm=wl),
        ScalarPlane(KIND_LIFETIME, lifetime.astype(np.float32),
                    wavelength_nm=wl),
    )


def photon_noise_filter(intensity: ScalarPlane, lifetime: ScalarPlane
                        ) -> tuple[ScalarPlane, ScalarPlane, FilterReport]:
    """Zero both planes wherever intensity <= sqrt(mean nonzero intensity).

    The intensity value gates both planes; n_hat is the mean over the
    nonzero intensity pixels of the plane under filtration.
    """
    if intensity.values.shape != lifetime.values.shape:
        raise DimensionMismatch("intensity and lifetime dims differ")
    if intensity.kind != KIND_INTENSITY:
        raise DimensionMismatch("first plane must be intensity_counts")
    iv = intensity.values.astype(np.float64)
    nonzero = iv > 0
    if not nonzero.any():
        raise EmptyPlane("no nonzero intensity pixels")
    n_hat = float(iv[nonzero].mean())
    threshold = float(np.sqrt(n_hat))
    keep = iv > threshold
    zeroed = int(np.count_nonzero(~keep & nonzero))
    fi = np.where(keep, intensity.values, np.float32(0.0)).astype(np.float32)
    fl = np.where(keep, lifetime.values, np.float32(0.0)).astype(np.float32)
    report = FilterReport(n_hat=n_hat, threshold=threshold,
                          pixels_zeroed=zeroed)
    return (
        ScalarPlane(intensity.kind, fi, wavelength_nm=intensity.wavelength_nm),
        ScalarPlane(lifetime.kind, fl, wavelength_nm=lifetime.wavelength_nm),
        report,
    )


def normalize_group(planes: list[ScalarPlane]) -> list[ScalarPlane]:
    """Jointly normalise a group of intensity planes to [NORM_EPS, 1].

    Bounds are the 1st/99th percentiles over all nonzero pixels of the whole
    group; zeros stay zero.  Applied per microarray and wavelength.
    """
    if not planes:
        raise EmptyGroup("empty plane group")
    shape = planes[0].values.shape
    wl = planes[0].wavelength_nm
    for p in planes:
        if p.values.shape != shape:
            raise DimensionMismatch("group planes must share dims")
        if p.wavelength_nm != wl:
            raise DimensionMismatch("group planes must share wavelength")
    pooled = np.concatenate(
        [p.values[p.values > 0].astype(np.float64) for p in planes])
    if pooled.size == 0:
        raise EmptyGroup("no nonzero pixels in group")
    lo, hi = np.percentile(pooled, (1.0, 99.0))
    out = []
    for p in planes:
        v = p.values.astype(np.float64)
        mask = v > 0
        if hi - lo < 1e-30:
            scaled = np.ones_like(v)
        else:
            scaled = NORM_EPS + (1.0 - NORM_EPS) * (v - lo) / (hi - lo)
            scaled = np.clip(scaled, NORM_EPS, 1.0)
        result = np.where(mask, scaled, 0.0).astype(np.float32)
        out.append(ScalarPlane(p.kind, result, wavelength_nm=p.wavelength_nm))
    return out
