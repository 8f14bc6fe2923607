"""False-histology translation stage.

The translator is pluggable: a classical baseline (per-channel histogram
matching onto a reference histology image) lets the pipeline run end-to-end
with no ML dependency, and an external-import mode picks up pre-generated
images (one PNG per tile id) from a directory.
"""

import os
from dataclasses import dataclass

import numpy as np

from .datamodel import RgbImage, ScalarPlane, load_rgb
from .errors import (
    DimensionMismatch,
    EmptyForeground,
    MissingExternalImage,
    MissingFile,
    ValidationError,
)

MODE_BASELINE = "baseline_palette"
MODE_EXTERNAL = "external_import"


@dataclass(frozen=True)
class TranslatorConfig:
    """mode + reference path (baseline: reference image; external: directory)."""

    mode: str
    reference: str

    def __post_init__(self):
        if self.mode not in (MODE_BASELINE, MODE_EXTERNAL):
            raise ValidationError(f"unknown translator mode {self.mode!r}",
                                  field="mode")


def parse_translator_spec(spec: str) -> TranslatorConfig:
    """Parse 'baseline:<ref.png>' / 'external:<dir>' CLI and job strings."""
    kind, sep, ref = spec.partition(":")
    if not sep or not ref:
        raise ValidationError(
            f"translator spec must be baseline:<ref> or external:<dir>, "
            f"got {spec!r}", field="translator")
    if kind == "baseline":
        return TranslatorConfig(MODE_BASELINE, ref)
    if kind == "external":
        return TranslatorConfig(MODE_EXTERNAL, ref)
    raise ValidationError(f"unknown translator kind {kind!r}",
                          field="translator")


def _match_channel(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Quantile-map src values onto ref's empirical distribution."""
    s_values, s_idx, s_counts = np.unique(src, return_inverse=True,
                                          return_counts=True)
    r_values, r_counts = np.unique(ref, return_counts=True)
    s_quantiles = np.cumsum(s_counts).astype(np.float64)
    s_quantiles /= s_quantiles[-1]
    r_quantiles = np.cumsum(r_counts).astype(np.float64)
    r_quantiles /= r_quantiles[-1]
    matched = np.interp(s_quantiles, r_quantiles, r_values.astype(np.float64))
    return matched[s_idx]


def translate(flim_render: RgbImage, cfg: TranslatorConfig,
              tile_id: str) -> RgbImage:
    """Produce a false-histology image for one tile.

    Baseline mode histogram-matches the render's foreground onto the
    reference histology's foreground per channel (background stays black);
    external mode loads `<dir>/<tile_id>.png` and validates dimensions.
    """
    if cfg.mode == MODE_EXTERNAL:
        path = os.path.join(cfg.reference, f"{tile_id}.png")
        if not os.path.isfile(path):
            raise MissingExternalImage(
                f"no external false-histology image for tile {tile_id!r} "
                f"at {path}")
        img = load_rgb(path)
        if (img.width, img.height) != (flim_render.width, flim_render.height):
            raise DimensionMismatch(
                f"external image is {img.width}x{img.height}, "
                f"tile render is {flim_render.width}x{flim_render.height}")
        return img

    if not os.path.isfile(cfg.reference):
        raise MissingFile(f"reference histology not found: {cfg.reference}")
    ref = load_rgb(cfg.reference)
    src = flim_render.pixels
    fg = src.any(axis=2)
    ref_fg = ref.pixels.any(axis=2)
    if not fg.any():
        raise EmptyForeground("render has no foreground pixels")
    if not ref_fg.any():
        raise EmptyForeground("reference has no foreground pixels")
    out = np.zeros_like(src)
    for ch in range(3):
        matched = _match_channel(src[:, :, ch][fg].astype(np.float64),
                                 ref.pixels[:, :, ch][ref_fg].astype(np.float64))
        out[:, :, ch][fg] = np.clip(np.rint(matched), 0, 255).astype(np.uint8)
    return RgbImage(out)


def apply_intensity_mask(false_histology: RgbImage,
                         intensity: ScalarPlane) -> RgbImage:
    """Black out pixels where the intensity plane holds 0."""
    if intensity.values.shape != false_histology.pixels.shape[:2]:
        raise DimensionMismatch("intensity dims differ from image")
    out = false_histology.pixels.copy()
    out[intensity.values == 0] = 0
    return RgbImage(out)
