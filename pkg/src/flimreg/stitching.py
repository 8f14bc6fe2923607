"""Whole-slide mosaics from registered tiles, plus per-cell spectral probing.

Placement composition maps a tile's regression frame into WSI pixels.
Overlaps average foreground contributions only: a tile contributing
background 0 at a pixel never dilutes the mean.  Accumulation runs in
tile-id order, so permuting the placement list cannot change the mosaic.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .datamodel import KIND_LIFETIME, RgbImage, ScalarPlane
from .errors import (
    CanvasTooSmall,
    DimensionMismatch,
    InvalidWindow,
    KindMismatch,
    PointNotCovered,
)
from .imaging import LifetimeRenderSpec, render_lifetime
from .registration import (
    Homography,
    norm_from_pixel_matrix,
    pixel_from_norm_matrix,
)

DEFAULT_BAND_RANGE_NM = (500.0, 680.0)


@dataclass(frozen=True)
class PatchRect:
    """Axis-aligned rectangle in WSI pixel coordinates (top-left anchored)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise DimensionMismatch("patch rect must have positive size")

    def contains(self, px: float, py: float) -> bool:
        return (self.x <= px < self.x + self.w
                and self.y <= py < self.y + self.h)

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_json(cls, d: dict) -> "PatchRect":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


@dataclass(frozen=True)
class TilePlacement:
    """Registered tile: patch rect + homography (moving -> target, normalized)."""

    tile_id: str
    patch: PatchRect
    homography: Homography
    regression_dim: int = 256

    def to_json(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "patch": self.patch.to_json(),
            "homography": [float(v) for v in self.homography.h.ravel()],
            "regression_dim": self.regression_dim,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TilePlacement":
        return cls(
            tile_id=str(d["tile_id"]),
            patch=PatchRect.from_json(d["patch"]),
            homography=Homography(
                np.array(d["homography"], dtype=np.float64).reshape(3, 3)),
            regression_dim=int(d.get("regression_dim", 256)),
        )


def compose_placement(p: TilePlacement) -> np.ndarray:
    """Pixel-frame transform: regression-frame tile pixel -> WSI pixel.

    Composition, right-to-left: tile pixel -> normalized tile frame ->
    (homography) -> normalized patch frame -> patch pixels -> + patch origin.
    """
    d = p.regression_dim
    to_patch = pixel_from_norm_matrix(p.patch.w, p.patch.h)
    translate = np.array([
        [1.0, 0.0, float(p.patch.x)],
        [0.0, 1.0, float(p.patch.y)],
        [0.0, 0.0, 1.0],
    ])
    mat = translate @ to_patch @ p.homography.h @ norm_from_pixel_matrix(d, d)
    return mat / mat[2, 2]


def _tile_to_wsi(p: TilePlacement, tile_w: int, tile_h: int) -> np.ndarray:
    """Like compose_placement but for a tile image at its native resolution."""
    to_patch = pixel_from_norm_matrix(p.patch.w, p.patch.h)
    translate = np.array([
        [1.0, 0.0, float(p.patch.x)],
        [0.0, 1.0, float(p.patch.y)],
        [0.0, 0.0, 1.0],
    ])
    mat = translate @ to_patch @ p.homography.h @ norm_from_pixel_matrix(
        tile_w, tile_h)
    return mat / mat[2, 2]


def _projected_bbox(mat: np.ndarray, tile_w: int, tile_h: int,
                    canvas_w: int, canvas_h: int):
    corners = np.array([
        [-0.5, -0.5, 1.0],
        [tile_w - 0.5, -0.5, 1.0],
        [tile_w - 0.5, tile_h - 0.5, 1.0],
        [-0.5, tile_h - 0.5, 1.0],
    ]).T
    proj = mat @ corners
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = proj[:2] / proj[2]
    if not np.all(np.isfinite(xy)):
        return 0, 0, canvas_w, canvas_h
    x0 = max(int(np.floor(xy[0].min())) - 1, 0)
    y0 = max(int(np.floor(xy[1].min())) - 1, 0)
    x1 = min(int(np.ceil(xy[0].max())) + 2, canvas_w)
    y1 = min(int(np.ceil(xy[1].max())) + 2, canvas_h)
    return x0, y0, x1, y1


def _accumulate(placements, arrays: dict, canvas_dims: tuple[int, int],
                channels: int):
    """Sum/count accumulation of warped tiles; returns (sum, count) planes."""
    canvas_w, canvas_h = canvas_dims
    if canvas_w <= 0 or canvas_h <= 0:
        raise CanvasTooSmall("canvas dims must be positive")
    acc = np.zeros((canvas_h, canvas_w, channels), dtype=np.float64)
    cnt = np.zeros((canvas_h, canvas_w), dtype=np.int32)
    for p in sorted(placements, key=lambda q: q.tile_id):
        arr = arrays[p.tile_id]
        tile_h, tile_w = arr.shape[:2]
        if (p.patch.x + p.patch.w > canvas_w
                or p.patch.y + p.patch.h > canvas_h):
            raise CanvasTooSmall(
                f"patch for tile {p.tile_id} exceeds canvas bounds")
        fwd = _tile_to_wsi(p, tile_w, tile_h)
        inv = np.linalg.inv(fwd)
        inv /= inv[2, 2]
        x0, y0, x1, y1 = _projected_bbox(fwd, tile_w, tile_h,
                                         canvas_w, canvas_h)
        if x1 <= x0 or y1 <= y0:
            continue
        # pull matrix for the bbox sub-canvas: offset the output origin
        offset = np.array([
            [1.0, 0.0, float(x0)],
            [0.0, 1.0, float(y0)],
            [0.0, 0.0, 1.0],
        ])
        pull = inv @ offset
        warped = kernels.warp_pull(
            np.ascontiguousarray(arr.reshape(tile_h, tile_w, channels)
                                 .astype(np.float64)),
            pull, y1 - y0, x1 - x0)
        fg = warped.any(axis=2)
        acc[y0:y1, x0:x1][fg] += warped[fg]
        cnt[y0:y1, x0:x1][fg] += 1
    return acc, cnt


def stitch_scalar(placements: list[TilePlacement],
                  tile_planes: dict[str, ScalarPlane],
                  canvas_dims: tuple[int, int]
                  ) -> tuple[ScalarPlane, np.ndarray]:
    """Average scalar tiles into a whole-slide plane; returns (plane, coverage)."""
    kinds = {tile_planes[p.tile_id].kind for p in placements}
    if len(kinds) > 1:
        raise KindMismatch(f"mixed plane kinds: {sorted(kinds)}")
    arrays = {p.tile_id: tile_planes[p.tile_id].values
              for p in placements}
    acc, cnt = _accumulate(placements, arrays, canvas_dims, 1)
    out = np.zeros_like(acc[:, :, 0])
    covered = cnt > 0
    out[covered] = acc[:, :, 0][covered] / cnt[covered]
    kind = kinds.pop() if kinds else KIND_LIFETIME
    wl = next((tile_planes[p.tile_id].wavelength_nm for p in placements), None)
    return (ScalarPlane(kind, out.astype(np.float32), wavelength_nm=wl),
            cnt)


def stitch(placements: list[TilePlacement], tile_images: dict,
           canvas_dims: tuple[int, int],
           background: RgbImage | None = None,
           render_spec: LifetimeRenderSpec = LifetimeRenderSpec(),
           intensity_planes: dict[str, ScalarPlane] | None = None
           ) -> tuple[RgbImage, np.ndarray]:
    """Composite registered tiles into a mosaic; returns (image, coverage).

    Scalar tiles are averaged first and rendered afterwards (optionally
    weighted by similarly stitched intensity planes); RGB tiles average per
    channel.  Uncovered pixels show the background image, or black.
    """
    if not placements:
        raise CanvasTooSmall("no placements to stitch")
    canvas_w, canvas_h = canvas_dims
    if background is not None and (background.width != canvas_w
                                   or background.height != canvas_h):
        raise DimensionMismatch("background dims differ from canvas")

    kinds = {type(tile_images[p.tile_id]) for p in placements}
    if len(kinds) != 1:
        raise KindMismatch("tile images must be uniformly scalar or RGB")
    kind = kinds.pop()

    if kind is ScalarPlane:
        plane, cnt = stitch_scalar(placements, tile_images, canvas_dims)
        weight = None
        if render_spec.weighting == "intensity":
            if intensity_planes is None:
                raise KindMismatch(
                    "intensity weighting requires intensity planes")
            weight, _ = stitch_scalar(placements, intensity_planes,
                                      canvas_dims)
        img = render_lifetime(plane, weight, render_spec)
        out = img.pixels.copy()
    elif kind is RgbImage:
        arrays = {p.tile_id: tile_images[p.tile_id].pixels
                  for p in placements}
        acc, cnt = _accumulate(placements, arrays, canvas_dims, 3)
        out = np.zeros((canvas_h, canvas_w, 3), dtype=np.uint8)
        covered = cnt > 0
        out[covered] = np.clip(
            np.rint(acc[covered] / cnt[covered, None]), 0, 255).astype(np.uint8)
    else:
        raise KindMismatch(f"cannot stitch {kind.__name__} tiles")

    if background is not None:
        uncovered = cnt == 0
        out[uncovered] = background.pixels[uncovered]
    return RgbImage(out), cnt


def blend(stitched: RgbImage, histology: RgbImage, alpha: float) -> RgbImage:
    """Per-channel alpha blend: alpha * stitched + (1 - alpha) * histology."""
    if (stitched.width, stitched.height) != (histology.width, histology.height):
        raise DimensionMismatch("blend inputs must share dims")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must be in [0, 1]")
    mixed = (alpha * stitched.pixels.astype(np.float64)
             + (1.0 - alpha) * histology.pixels.astype(np.float64))
    return RgbImage(np.clip(np.rint(mixed), 0, 255).astype(np.uint8))


def probe_cell(point: tuple[float, float],
               placements: list[TilePlacement],
               lifetime_planes: dict[str, dict[int, ScalarPlane]],
               band_range_nm: tuple[float, float] = DEFAULT_BAND_RANGE_NM,
               window: int = 5) -> list[tuple[float, float]]:
    """Spectral lifetime curve of the cell at a WSI point.

    For every band, the window x window neighbourhood maps through each
    covering placement's inverse into tile coords; nonzero nearest-pixel
    lifetimes average across pixels and tiles.  Returns (wavelength_nm,
    mean_tau_ns) rows sorted by wavelength.
    """
    if window % 2 == 0 or window < 1:
        raise InvalidWindow(f"window must be odd and positive, got {window}")
    px, py = point
    covering = [p for p in sorted(placements, key=lambda q: q.tile_id)
                if p.patch.contains(px, py)]
    if not covering:
        raise PointNotCovered(f"no placement covers ({px}, {py})")

    half = window // 2
    lo, hi = band_range_nm
    # collect wavelengths available on any covering tile within the range
    wavelengths: dict[float, list[tuple[TilePlacement, ScalarPlane]]] = {}
    for p in covering:
        for band, plane in sorted(lifetime_planes.get(p.tile_id, {}).items()):
            wl = plane.wavelength_nm
            if wl is None or not (lo <= wl <= hi):
                continue
            wavelengths.setdefault(float(wl), []).append((p, plane))

    curve = []
    for wl in sorted(wavelengths):
        total = 0.0
        count = 0
        for p, plane in wavelengths[wl]:
            th, tw = plane.values.shape
            fwd = _tile_to_wsi(p, tw, th)
            inv = np.linalg.inv(fwd)
            inv /= inv[2, 2]
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    wx, wy = px + dx, py + dy
                    q = inv @ np.array([wx, wy, 1.0])
                    if abs(q[2]) < 1e-12:
                        continue
                    tx = int(np.rint(q[0] / q[2]))
                    ty = int(np.rint(q[1] / q[2]))
                    if 0 <= tx < tw and 0 <= ty < th:
                        v = float(plane.values[ty, tx])
                        if v > 0:
                            total += v
                            count += 1
        curve.append((wl, total / count if count else 0.0))
    return curve
