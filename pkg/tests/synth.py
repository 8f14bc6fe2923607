"""Synthetic microarray scenes for end-to-end tests.

Builds hypercube tiles with spatially varying lifetime (a constant-tau disk
on a different background) and textured intensity, plus a matching
"histology" whole-slide image: a recoloured, homography-warped rendering of
the same scenes placed at known patch rects on a bright canvas.
"""

import os

import numpy as np

from conftest import dlt_homography, smooth_texture
from flimreg.datamodel import Hypercube, RgbImage, save_hypercube_manifest, save_rgb
from flimreg.imaging import LifetimeRenderSpec, render_lifetime
from flimreg.reconstruction import normalize_group, photon_noise_filter, reconstruct_planes
from flimreg.registration import (
    Homography,
    norm_from_pixel_matrix,
    pixel_from_norm_matrix,
)


def tau_field(n: int, disk_tau: float = 2.0, bg_tau: float = 1.4,
              radius_frac: float = 0.3) -> np.ndarray:
    """Constant-tau disk centered on a uniform background."""
    yy, xx = np.mgrid[0:n, 0:n]
    c = (n - 1) / 2.0
    disk = (xx - c) ** 2 + (yy - c) ** 2 <= (radius_frac * n) ** 2
    field = np.full((n, n), bg_tau)
    field[disk] = disk_tau
    return field


def amplitude_field(n: int, seed: int) -> np.ndarray:
    """Textured, strictly positive photon amplitude."""
    return 300.0 + 1200.0 * smooth_texture(n, seed, sigma=n / 10.0)


def build_tile_cube(n: int, seed: int, spectral_bins: int = 2,
                    time_bins: int = 32, time_bin_ps: float = 50.0,
                    wavelength_start: float = 500.0,
                    wavelength_step: float = 25.0,
                    disk_tau: float = 2.0) -> Hypercube:
    """Noiseless decays: counts(x, y, s, t) = A(y, x) * exp(-t / tau(y, x))."""
    taus = tau_field(n, disk_tau=disk_tau)
    amps = amplitude_field(n, seed)
    t = np.arange(time_bins) * (time_bin_ps * 1e-3)
    decay = np.exp(-t[None, None, :] / taus[:, :, None])  # (y, x, t)
    frames = (amps[:, :, None] * decay).astype(np.float32)
    cube_counts = np.repeat(
        frames.transpose(1, 0, 2)[:, :, None, :], spectral_bins, axis=2)
    return Hypercube(n, n, spectral_bins, time_bins, wavelength_start,
                     wavelength_step, time_bin_ps,
                     np.ascontiguousarray(cube_counts))


def tile_render(cube: Hypercube, band: int = 0) -> RgbImage:
    """Intensity-weighted jet render, the pipeline's own moving image."""
    intensity, lifetime = reconstruct_planes(cube, band)
    intensity, lifetime, _ = photon_noise_filter(intensity, lifetime)
    weight = normalize_group([intensity])[0]
    return render_lifetime(lifetime, weight,
                           LifetimeRenderSpec(1.0, 3.0, "jet", "intensity"))


def recolour_to_histology(render: RgbImage) -> RgbImage:
    """Stain-like palette: increasing per-channel remap, so quantile
    matching (inherently monotone) can invert it; structure preserved and
    tissue stays darker than the white slide background."""
    p = render.pixels.astype(np.float64)
    out = np.empty_like(p)
    out[:, :, 0] = 40.0 + 0.60 * p[:, :, 0]
    out[:, :, 1] = 20.0 + 0.50 * p[:, :, 1]
    out[:, :, 2] = 60.0 + 0.55 * p[:, :, 2]
    out[~render.pixels.any(axis=2)] = 0.0  # keep background pixels background
    return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def corner_warp(n: int, seed: int, max_disp: float) -> np.ndarray:
    """Pixel-frame ground-truth homography (moving -> target) for n x n."""
    rng = np.random.default_rng(seed)
    corners = np.array([[0.0, 0.0], [n - 1.0, 0.0],
                        [n - 1.0, n - 1.0], [0.0, n - 1.0]])
    disp = rng.uniform(-max_disp, max_disp, (4, 2))
    return dlt_homography(corners, corners + disp)


def truth_to_normalized(truth_pix: np.ndarray, moving_w: int, moving_h: int,
                        target_w: int, target_h: int) -> Homography:
    """Pixel-frame truth (moving px -> target px) to normalized frames."""
    m = (norm_from_pixel_matrix(target_w, target_h) @ truth_pix
         @ pixel_from_norm_matrix(moving_w, moving_h))
    return Homography.from_matrix(m)


def warp_with_truth(img: RgbImage, truth_pix: np.ndarray,
                    out_w: int, out_h: int) -> tuple[RgbImage, Homography]:
    """Build target = img seen through truth; returns (target, normalized truth).

    truth_pix maps moving pixels (img frame) to target pixels (out frame);
    the warp pulls through its inverse.
    """
    from flimreg.registration import warp
    t_norm = truth_to_normalized(truth_pix, img.width, img.height,
                                 out_w, out_h)
    target = warp(img, t_norm.inverse(), (out_w, out_h))
    return target, t_norm


class Scene:
    """A synthetic microarray: tiles + WSI + ground-truth placements."""

    def __init__(self, root: str, n_tiles: int = 4, tile_n: int = 64,
                 spectral_bins: int = 2, wsi_margin: int = 24,
                 patch_size: int | None = None, max_disp: float = 5.0,
                 overlap: int = 0, seed: int = 100):
        os.makedirs(root, exist_ok=True)
        self.root = root
        self.tile_ids = [f"tile{k}" for k in range(n_tiles)]
        self.cubes = {}
        self.manifests = {}
        self.renders = {}
        self.truths = {}
        self.patches = {}

        patch = patch_size or tile_n
        cols = int(np.ceil(np.sqrt(n_tiles)))
        wsi_w = wsi_margin * 2 + cols * patch - (cols - 1) * overlap
        rows = int(np.ceil(n_tiles / cols))
        wsi_h = wsi_margin * 2 + rows * patch - (rows - 1) * overlap
        canvas = np.full((wsi_h, wsi_w, 3), 246, dtype=np.uint8)

        for k, tid in enumerate(self.tile_ids):
            cube = build_tile_cube(tile_n, seed + k,
                                   spectral_bins=spectral_bins)
            man_path = os.path.join(root, f"{tid}.json")
            save_hypercube_manifest(cube, man_path)
            self.cubes[tid] = cube
            self.manifests[tid] = man_path

            render = tile_render(cube, band=0)
            self.renders[tid] = render
            histo_tile = recolour_to_histology(render)
            truth_pix = corner_warp(tile_n, seed + 50 + k, max_disp)
            warped, t_norm = warp_with_truth(histo_tile, truth_pix,
                                             patch, patch)

            r, c = divmod(k, cols)
            x = wsi_margin + c * (patch - overlap)
            y = wsi_margin + r * (patch - overlap)
            self.patches[tid] = (x, y, patch, patch)
            self.truths[tid] = t_norm
            region = canvas[y:y + patch, x:x + patch]
            fg = warped.pixels.any(axis=2)
            region[fg] = warped.pixels[fg]

        self.wsi = RgbImage(canvas)
        self.wsi_path = os.path.join(root, "wsi.png")
        save_rgb(self.wsi, self.wsi_path)

    def reference_histology_path(self) -> str:
        """A masked histology patch usable as the baseline palette reference."""
        from flimreg.imaging import mask_background
        tid = self.tile_ids[0]
        x, y, w, h = self.patches[tid]
        crop = RgbImage(self.wsi.pixels[y:y + h, x:x + w])
        masked, _ = mask_background(crop)
        path = os.path.join(self.root, "reference.png")
        save_rgb(masked, path)
        return path
