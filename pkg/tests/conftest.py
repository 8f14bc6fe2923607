"""Shared fixtures and synthetic-data generators for the test suite."""

import numpy as np
import pytest

from flimreg.datamodel import (
    KIND_INTENSITY,
    KIND_LIFETIME,
    Hypercube,
    RgbImage,
    ScalarPlane,
)


def smooth_texture(n: int, seed: int, sigma: float = 6.0) -> np.ndarray:
    """Gaussian-blurred uniform noise in [0, 1], n x n."""
    rng = np.random.default_rng(seed)
    img = rng.random((n, n))
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.rfftfreq(n)[None, :]
    gy = np.exp(-2.0 * (np.pi * sigma * fy) ** 2)
    gx = np.exp(-2.0 * (np.pi * sigma * fx) ** 2)
    img = np.fft.irfft2(np.fft.rfft2(img) * gy * gx, s=(n, n))
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return img


def texture_rgb(n: int, seed: int, sigma: float = 6.0) -> RgbImage:
    """Three independently textured channels, full 8-bit range."""
    chans = [np.clip(np.rint(smooth_texture(n, seed + k, sigma) * 255), 0, 255)
             for k in range(3)]
    return RgbImage(np.stack(chans, axis=2).astype(np.uint8))


def synthetic_decay(tau_ns: float, amplitude: float, offset: float,
                    time_bins: int, time_bin_ps: float) -> np.ndarray:
    """Closed-form noiseless decay samples; the oracle for fit tests."""
    t = np.arange(time_bins) * (time_bin_ps * 1e-3)
    return amplitude * np.exp(-t / tau_ns) + offset


def constant_decay_cube(width: int, height: int, spectral_bins: int,
                        time_bins: int, tau_ns: float = 2.0,
                        amplitude: float = 1000.0,
                        time_bin_ps: float = 50.0) -> Hypercube:
    """Every pixel and band holds the same synthetic decay."""
    decay = synthetic_decay(tau_ns, amplitude, 0.0, time_bins, time_bin_ps)
    counts = np.broadcast_to(
        decay, (width, height, spectral_bins, time_bins)).astype(np.float32)
    return Hypercube(width, height, spectral_bins, time_bins,
                     500.0, 25.0, time_bin_ps, counts.copy())


def dlt_homography(src_pts: np.ndarray, dst_pts: np.ndarray) -> np.ndarray:
    """Direct linear transform from 4 point pairs (independent oracle)."""
    rows = []
    for (xs, ys), (xd, yd) in zip(src_pts, dst_pts):
        rows.append([xs, ys, 1, 0, 0, 0, -xd * xs, -xd * ys, -xd])
        rows.append([0, 0, 0, xs, ys, 1, -yd * xs, -yd * ys, -yd])
    _, _, vt = np.linalg.svd(np.array(rows, dtype=np.float64))
    h = vt[-1].reshape(3, 3)
    return h / h[2, 2]


def random_corner_homography(n: int, seed: int,
                             max_disp: float = 16.0) -> np.ndarray:
    """Pixel-frame homography displacing the corners of an n x n image."""
    rng = np.random.default_rng(seed)
    corners = np.array([[0.0, 0.0], [n - 1.0, 0.0],
                        [n - 1.0, n - 1.0], [0.0, n - 1.0]])
    disp = rng.uniform(-max_disp, max_disp, (4, 2))
    return dlt_homography(corners, corners + disp)


def gray_plane(values: np.ndarray, kind: str = KIND_INTENSITY) -> ScalarPlane:
    return ScalarPlane(kind, np.asarray(values, dtype=np.float32))


def lifetime_plane(values: np.ndarray,
                   wavelength_nm: float | None = None) -> ScalarPlane:
    return ScalarPlane(KIND_LIFETIME, np.asarray(values, dtype=np.float32),
                       wavelength_nm=wavelength_nm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
