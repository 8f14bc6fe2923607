"""Image preprocessing and rendering.

Grayscale conversion, histogram equalisation, Otsu binarisation, the
background-masking pipeline for bright-field histology, lifetime colormap
rendering with optional intensity weighting, and bilinear resampling.
"""

from dataclasses import dataclass

import numpy as np

from .datamodel import KIND_INTENSITY, BinaryMask, RgbImage, ScalarPlane
from .errors import DegenerateHistogram, DimensionMismatch, MissingIntensity

# Classic 4-segment jet: exact RGB anchors at these normalized positions.
# Pinned here so renders are bit-reproducible across tools.
JET_POSITIONS = np.array([0.0, 0.125, 0.375, 0.625, 0.875, 1.0])
JET_ANCHORS = np.array([
    [0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
])


@dataclass(frozen=True)
class LifetimeRenderSpec:
    """Display window and colormap for lifetime renders."""

    range_min_ns: float = 1.0
    range_max_ns: float = 3.0
    colormap: str = "jet"
    weighting: str = "none"

    def __post_init__(self):
        if self.range_min_ns >= self.range_max_ns:
            raise ValueError("range_min_ns must be < range_max_ns")
        if self.colormap not in ("jet", "gray"):
            raise ValueError(f"unknown colormap {self.colormap!r}")
        if self.weighting not in ("none", "intensity"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


def to_grayscale(img: RgbImage) -> ScalarPlane:
    """Rec.601 luma: 0.299 R + 0.587 G + 0.114 B, rounded to [0, 255]."""
    p = img.pixels.astype(np.float64)
    luma = 0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]
    return ScalarPlane(KIND_INTENSITY, np.rint(luma).astype(np.float32))


def hist_equalize(plane: ScalarPlane) -> ScalarPlane:
    """256-bin CDF remapping; rank-monotone, output within [0, 255]."""
    v = np.clip(np.rint(plane.values.astype(np.float64)), 0, 255).astype(np.int64)
    hist = np.bincount(v.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = v.size
    if hist.max() == n:
        # single-level histogram: remapping is degenerate, keep the input
        return ScalarPlane(plane.kind, plane.values.copy(),
                           wavelength_nm=plane.wavelength_nm)
    lut = np.floor(cdf * 255.0 / n).astype(np.float32)
    return ScalarPlane(plane.kind, lut[v], wavelength_nm=plane.wavelength_nm)


def otsu_threshold(plane: ScalarPlane) -> tuple[int, BinaryMask]:
    """Threshold maximising between-class variance over all 256 candidates.

    Ties break toward the lowest threshold; the mask is true where
    value > threshold.  A constant image has no separable classes.
    """
    v = np.clip(np.rint(plane.values.astype(np.float64)), 0, 255).astype(np.int64)
    hist = np.bincount(v.ravel(), minlength=256).astype(np.float64)
    n = float(v.size)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("constant image has no Otsu threshold")
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)                 # pixels with value <= t
    m0 = np.cumsum(hist * levels)        # first moment of class 0
    total_mean = m0[-1]
    w1 = n - w0
    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.zeros(256)
    mu1 = np.zeros(256)
    mu0[valid] = m0[valid] / w0[valid]
    mu1[valid] = (total_mean - m0[valid]) / w1[valid]
    sigma_b = np.zeros(256)
    sigma_b[valid] = w0[valid] * w1[valid] * (mu0[valid] - mu1[valid]) ** 2
    threshold = int(np.argmax(sigma_b))  # argmax returns the first maximum
    mask = BinaryMask(plane.values > threshold)
    return threshold, mask


def mask_background(histology: RgbImage) -> tuple[RgbImage, BinaryMask]:
    """Turn a bright slide background black, preserving tissue colours.

    grayscale -> invert -> equalize -> Otsu -> pixel-wise multiply with the
    original image.
    """
    gray = to_grayscale(histology)
    inverted = ScalarPlane(gray.kind, 255.0 - gray.values)
    equalized = hist_equalize(inverted)
    _, mask = otsu_threshold(equalized)
    out = histology.pixels.copy()
    out[~mask.bits] = 0
    return RgbImage(out), mask


def _apply_colormap(p: np.ndarray, colormap: str) -> np.ndarray:
    """Map normalized positions [0, 1] -> float RGB in [0, 1]."""
    if colormap == "gray":
        return np.repeat(p[:, :, None], 3, axis=2)
    out = np.empty(p.shape + (3,), dtype=np.float64)
    for ch in range(3):
        out[:, :, ch] = np.interp(p, JET_POSITIONS, JET_ANCHORS[:, ch])
    return out


def render_lifetime(lifetime: ScalarPlane,
                    intensity: ScalarPlane | None = None,
                    spec: LifetimeRenderSpec = LifetimeRenderSpec()) -> RgbImage:
    """Colormap render of a lifetime plane.

    Lifetimes clip to [range_min, range_max]; zero-lifetime (background)
    pixels render black.  weighting="intensity" multiplies RGB by the
    intensity plane, which must be normalized to [0, 1].
    """
    tau = lifetime.values.astype(np.float64)
    weight = None
    if spec.weighting == "intensity":
        if intensity is None:
            raise MissingIntensity("intensity weighting requires a plane")
        if intensity.values.shape != tau.shape:
            raise DimensionMismatch("intensity dims differ from lifetime")
        weight = np.clip(intensity.values.astype(np.float64), 0.0, 1.0)
    elif intensity is not None and intensity.values.shape != tau.shape:
        raise DimensionMismatch("intensity dims differ from lifetime")

    p = (np.clip(tau, spec.range_min_ns, spec.range_max_ns) - spec.range_min_ns)
    p /= (spec.range_max_ns - spec.range_min_ns)
    rgb = _apply_colormap(p, spec.colormap)
    rgb[tau <= 0] = 0.0
    if weight is not None:
        rgb *= weight[:, :, None]
    return RgbImage(np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8))


def _resize_array(values: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resample with edge-clamped sampling at pixel centers."""
    src_h, src_w = values.shape[:2]
    if (src_w, src_h) == (w, h):
        return values.copy()
    sx = (np.arange(w, dtype=np.float64) + 0.5) * (src_w / w) - 0.5
    sy = (np.arange(h, dtype=np.float64) + 0.5) * (src_h / h) - 0.5
    sx = np.clip(sx, 0.0, src_w - 1.0)
    sy = np.clip(sy, 0.0, src_h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = (sx - x0)[None, :]
    fy = (sy - y0)[:, None]
    v = values.astype(np.float64)
    if v.ndim == 2:
        v = v[:, :, None]
        squeeze = True
    else:
        squeeze = False
    top = v[y0][:, x0] + fx[:, :, None] * (v[y0][:, x1] - v[y0][:, x0])
    bot = v[y1][:, x0] + fx[:, :, None] * (v[y1][:, x1] - v[y1][:, x0])
    out = top + fy[:, :, None] * (bot - top)
    return out[:, :, 0] if squeeze else out


def resize(img, w: int, h: int):
    """Bilinear resize of an RgbImage or ScalarPlane; identity dims are bit-exact."""
    if w <= 0 or h <= 0:
        raise DimensionMismatch("target dims must be positive")
    if isinstance(img, RgbImage):
        out = _resize_array(img.pixels, w, h)
        return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    if isinstance(img, ScalarPlane):
        out = _resize_array(img.values, w, h)
        return ScalarPlane(img.kind, out.astype(np.float32),
                           wavelength_nm=img.wavelength_nm)
    raise TypeError(f"cannot resize {type(img).__name__}")
