"""Acceptance suite: one test per criterion, stated tolerances pinned.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion.  Budgets are asserted where the criterion pins them.
"""

import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import random_corner_homography, smooth_texture, texture_rgb
from flimreg import kernels
from flimreg.registration import (
    Homography,
    RegressionParams,
    mse,
    ncc,
    nmi,
    norm_from_pixel_matrix,
    pixel_from_norm_matrix,
    regress_homography,
    warp,
)

CORNERS_256 = np.array([[0.0, 0, 1], [255, 0, 1], [255, 255, 1],
                        [0, 255, 1]]).T


def ok(name):
    print(f"\nACCEPTANCE {name}: PASS")


def corner_error(est_pix: np.ndarray, truth_pix: np.ndarray) -> float:
    a = est_pix @ CORNERS_256
    a = a[:2] / a[2]
    b = truth_pix @ CORNERS_256
    b = b[:2] / b[2]
    return float(np.mean(np.sqrt(((a - b) ** 2).sum(axis=0))))


class TestSyntheticHomographyRecovery:
    def test_fifty_seeded_trials(self):
        """>= 90% of 50 trials recover corners within 2 px; < 60 s each."""
        n = 256
        params = RegressionParams()  # epochs 200, lr 0.01, x0.1@100, win 200
        hits = 0
        worst_time = 0.0
        errors = []
        for trial in range(50):
            moving = texture_rgb(n, 9000 + trial, sigma=6.0)
            truth_pix = random_corner_homography(n, 7000 + trial,
                                                 max_disp=16.0)
            # target = moving warped by the known ground truth
            t_norm = (norm_from_pixel_matrix(n, n) @ truth_pix
                      @ pixel_from_norm_matrix(n, n))
            pull = Homography.from_matrix(np.linalg.inv(t_norm))
            target = warp(moving, pull, (n, n))

            t0 = time.monotonic()
            result = regress_homography(moving, target, params)
            elapsed = time.monotonic() - t0
            worst_time = max(worst_time, elapsed)

            est_pix = result.homography.pixel_frame(n)
            err = corner_error(est_pix, truth_pix / truth_pix[2, 2])
            errors.append(err)
            if err < 2.0:
                hits += 1
        assert worst_time < 60.0, f"slowest trial {worst_time:.1f}s"
        assert hits >= 45, (f"only {hits}/50 trials under 2px; "
                            f"median err {np.median(errors):.2f}px")
        ok(f"synthetic homography recovery ({hits}/50 under 2px, "
           f"median {np.median(errors):.3f}px, slowest {worst_time:.1f}s)")


class TestGradientCorrectness:
    @staticmethod
    def config(seed, n=256):
        """Well-conditioned random configuration: a quadratic-profile moving
        image (bilinear sampling reproduces it without kinks) against a very
        smooth texture, value ranges disjoint so |.| stays locally smooth."""
        c = (2.0 * np.arange(n) + 1.0) / n - 1.0
        x, y = np.meshgrid(c, c)
        rng = np.random.default_rng(seed)
        sgn = rng.choice([-1.0, 1.0], 5)
        amp = rng.uniform(0.8, 1.2)
        moving = 0.32 + amp * (0.05 * sgn[0] * x + 0.05 * sgn[1] * y
                               + 0.04 * sgn[2] * x * y
                               + 0.06 * sgn[3] * x * x
                               + 0.06 * sgn[4] * y * y)
        target = 0.70 + 0.15 * smooth_texture(n, 7000 + seed, sigma=16.0)
        r = np.random.default_rng(900 + seed)
        g = np.eye(3)
        g[:2, :] += r.uniform(-0.05, 0.05, (2, 3))
        g[2, :2] += r.uniform(-0.02, 0.02, 2)
        return (np.ascontiguousarray(moving[:, :, None]),
                np.ascontiguousarray(target[:, :, None]), g)

    def test_twenty_configurations(self):
        """Analytic gradient vs central differences at eps = 1e-4."""
        eps = 1e-4
        window = 200
        worst = 0.0
        for seed in range(20):
            moving, target, g = self.config(seed)
            _, grad = kernels.loss_grad(moving, target, g, window)
            for k in range(8):
                i, j = divmod(k, 3)
                gp = g.copy()
                gp[i, j] += eps
                gm = g.copy()
                gm[i, j] -= eps
                lp, _ = kernels.loss_grad(moving, target, gp, window)
                lm, _ = kernels.loss_grad(moving, target, gm, window)
                fd = (lp - lm) / (2 * eps)
                rel = abs(grad[k] - fd) / max(abs(fd), abs(grad[k]), 1e-12)
                assert rel < 1e-3, f"seed {seed} component {k}: rel {rel:.2e}"
                worst = max(worst, rel)
        ok(f"gradient correctness (worst per-component rel err {worst:.2e})")


class TestLifetimeFitOracle:
    def test_sweep_and_poisson(self):
        from flimreg.reconstruction import fit_lifetime
        t0 = time.monotonic()
        # noiseless sweep within 0.1%
        for tau in (0.5, 1.0, 2.0, 3.0, 5.0):
            t = np.arange(32) * 0.05
            decay = 1000.0 * np.exp(-t / tau)
            fit = fit_lifetime(decay, 50.0)
            rel = abs(fit.tau_ns - tau) / tau
            assert rel < 1e-3, f"tau {tau}: rel {rel:.2e}"
        # Poisson-noised, peak 500 counts: median relative error < 3%
        rng = np.random.default_rng(424242)
        t = np.arange(32) * 0.05
        clean = 500.0 * np.exp(-t / 1.5)
        errs = []
        for _ in range(1000):
            y = rng.poisson(clean).astype(np.float64)
            fit = fit_lifetime(y, 50.0)
            errs.append(abs(fit.tau_ns - 1.5) / 1.5)
        med = float(np.median(errs))
        elapsed = time.monotonic() - t0
        assert med < 0.03, f"median rel err {med:.4f}"
        assert elapsed < 30.0, f"sweep took {elapsed:.1f}s"
        ok(f"lifetime-fit oracle (noiseless <0.1%; Poisson median "
           f"{med * 100:.2f}%; {elapsed:.1f}s)")


class TestOtsuExactness:
    def test_thousand_random_images(self):
        from flimreg.datamodel import KIND_INTENSITY, ScalarPlane
        from flimreg.imaging import otsu_threshold

        levels = np.arange(256, dtype=np.float64)

        def brute(hist: np.ndarray) -> int:
            n = hist.sum()
            best_t, best_var = 0, -1.0
            for t in range(256):
                h0 = hist[:t + 1]
                w0 = h0.sum()
                w1 = n - w0
                if w0 == 0 or w1 == 0:
                    var = 0.0
                else:
                    m0 = (h0 * levels[:t + 1]).sum() / w0
                    m1 = ((hist[t + 1:] * levels[t + 1:]).sum()) / w1
                    var = (w0 / n) * (w1 / n) * (m0 - m1) ** 2
                if var > best_var:
                    best_var, best_t = var, t
            return best_t

        rng = np.random.default_rng(777)
        mismatches = 0
        for case in range(1000):
            shape = (rng.integers(4, 24), rng.integers(4, 24))
            if case % 3 == 0:
                vals = rng.integers(0, 256, shape).astype(np.float64)
            elif case % 3 == 1:
                a = rng.normal(rng.uniform(30, 100), rng.uniform(5, 30),
                               shape)
                b = rng.normal(rng.uniform(150, 230), rng.uniform(5, 30),
                               shape)
                pick = rng.random(shape) < 0.5
                vals = np.clip(np.where(pick, a, b), 0, 255)
            else:
                vals = np.clip(rng.exponential(40, shape), 0, 255)
            vals = np.rint(vals)
            if np.unique(vals).size < 2:
                continue
            plane = ScalarPlane(KIND_INTENSITY, vals.astype(np.float32))
            t, _ = otsu_threshold(plane)
            hist = np.bincount(vals.astype(np.int64).ravel(), minlength=256)
            if t != brute(hist.astype(np.float64)):
                mismatches += 1
        assert mismatches == 0
        ok("otsu exactness (1000 images, zero mismatches)")


class TestMetricOracles:
    def test_hundred_random_pairs(self):
        def brute_mse(a, b):
            return float(np.mean((a - b) ** 2))

        def brute_nmi(a, b, bins=64):
            ia = np.minimum((a * bins).astype(int), bins - 1)
            ib = np.minimum((b * bins).astype(int), bins - 1)
            joint = np.zeros((bins, bins))
            for x, y in zip(ia.ravel(), ib.ravel()):
                joint[x, y] += 1
            joint /= joint.sum()

            def ent(p):
                p = p[p > 0]
                return -np.sum(p * np.log(p))

            hab = ent(joint.ravel())
            return 2.0 if hab == 0 else (ent(joint.sum(1))
                                         + ent(joint.sum(0))) / hab

        def brute_ncc(a, b):
            da = a - a.mean()
            db = b - b.mean()
            return float(np.sum(da * db)
                         / np.sqrt(np.sum(da ** 2) * np.sum(db ** 2)))

        rng = np.random.default_rng(31337)
        for _ in range(100):
            a = rng.uniform(0.01, 1.0, (16, 16))
            b = rng.uniform(0.01, 1.0, (16, 16))
            assert abs(mse(a, b) - brute_mse(a, b)) < 1e-9
            assert abs(nmi(a, b) - brute_nmi(a, b)) < 1e-9
            assert abs(ncc(a, b) - brute_ncc(a, b)) < 1e-9
        a = rng.uniform(0.05, 1.0, (16, 16))
        assert mse(a, a) == 0.0
        assert abs(nmi(a, a) - 2.0) < 1e-9
        assert abs(ncc(a, a) - 1.0) < 1e-9
        ok("metric oracles (100 pairs within 1e-9; identities exact)")


class TestPhotonNoiseFilterCriterion:
    def test_constructed_planes(self):
        from conftest import gray_plane, lifetime_plane
        from flimreg.reconstruction import photon_noise_filter

        # construction 1: n_hat = 28.5, threshold 5.3385; zero {1, 4}
        intensity = gray_plane([[1.0, 4.0], [9.0, 100.0]])
        lifetime = lifetime_plane([[1.5, 1.6], [1.7, 1.8]])
        fi, fl, rep = photon_noise_filter(intensity, lifetime)
        assert rep.n_hat == 28.5
        assert rep.threshold == pytest.approx(np.sqrt(28.5), abs=1e-12)
        assert np.array_equal(fi.values, [[0, 0], [9, 100]])
        assert np.array_equal(
            fl.values, np.array([[0, 0], [1.7, 1.8]], dtype=np.float32))

        # construction 2: values straddling the threshold tightly,
        # n_hat = (16 + 25 + 36 + 49) / 4 = 31.5, sqrt = 5.6125
        intensity = gray_plane([[16.0, 25.0], [36.0, 49.0]])
        lifetime = lifetime_plane([[1.0, 2.0], [3.0, 4.0]])
        fi, fl, rep = photon_noise_filter(intensity, lifetime)
        assert rep.n_hat == 31.5
        assert rep.pixels_zeroed == 0   # all values exceed 5.61
        assert np.array_equal(fi.values, intensity.values)

        # construction 3: exact-threshold pixel is zeroed (<= comparison)
        # n_hat = (4 + 12) / 2 = 8, sqrt(8) = 2.828...; also check a pixel
        # equal to the threshold: use {sqrt(n_hat), big}
        vals = np.array([[3.0, 13.0]])
        n_hat = 8.0
        assert vals.mean() == n_hat
        fi, fl, rep = photon_noise_filter(
            gray_plane(vals), lifetime_plane([[1.0, 2.0]]))
        assert rep.threshold == pytest.approx(np.sqrt(8.0))
        assert np.array_equal(fi.values, [[3.0, 13.0]])  # 3 > 2.83 kept

        # idempotence on the filtered planes
        intensity = gray_plane([[1.0, 4.0], [9.0, 100.0]])
        lifetime = lifetime_plane([[1.5, 1.6], [1.7, 1.8]])
        f1 = photon_noise_filter(intensity, lifetime)
        f2 = photon_noise_filter(f1[0], f1[1])
        assert np.array_equal(f1[0].values, f2[0].values)
        assert np.array_equal(f1[1].values, f2[1].values)
        ok("photon-noise filter (threshold exact, idempotence verified)")


class TestStitchingCriterion:
    def test_overlap_average_and_permutation(self):
        from conftest import lifetime_plane
        from flimreg.stitching import stitch_scalar
        from flimreg.stitching import PatchRect, TilePlacement

        def place(tid, x):
            return TilePlacement(tid, PatchRect(x, 0, 16, 16),
                                 Homography.identity(), 16)

        a = lifetime_plane(np.full((16, 16), 2.0), wavelength_nm=550.0)
        b = lifetime_plane(np.full((16, 16), 4.0), wavelength_nm=550.0)
        planes = {"a": a, "b": b}
        ps = [place("a", 0), place("b", 8)]   # 50% overlap
        out1, cnt1 = stitch_scalar(ps, planes, (24, 16))
        assert np.all(out1.values[:, 8:16] == 3.0)   # exactly (2+4)/2
        assert np.all(out1.values[:, :8] == 2.0)
        assert np.all(out1.values[:, 16:] == 4.0)
        assert np.all(cnt1[:, 8:16] == 2)
        assert np.all(cnt1[:, :8] == 1)
        assert np.all(cnt1[:, 16:] == 1)

        out2, cnt2 = stitch_scalar(ps[::-1], planes, (24, 16))
        assert np.array_equal(out1.values, out2.values)   # bit-identical
        assert np.array_equal(cnt1, cnt2)
        ok("stitching (overlap exactly 3; permutation bit-identical; "
           "coverage exact)")


class TestEndToEndPipeline:
    def test_four_tile_microarray_via_cli(self, tmp_path):
        """reconstruct -> mask-bg -> translate -> register -> stitch ->
        probe entirely through CLI subprocesses; < 5 min; probed tau within
        0.05 ns across bands."""
        sys.path.insert(0, os.path.dirname(__file__))
        from synth import Scene

        t0 = time.monotonic()
        scene = Scene(str(tmp_path / "scene"), n_tiles=4, tile_n=64,
                      spectral_bins=8, max_disp=5.0, seed=300)
        root = tmp_path

        def cli(*argv):
            proc = subprocess.run(
                [sys.executable, "-m", "flimreg.cli", *argv],
                capture_output=True, text=True, timeout=240)
            assert proc.returncode == 0, proc.stderr
            return proc.stdout

        masked_wsi = str(root / "wsi_masked.png")
        cli("mask-bg", "--in", scene.wsi_path, "--out", masked_wsi)

        results = []
        for tid in scene.tile_ids:
            planes_dir = str(root / "planes" / tid)
            render_png = str(root / f"render_{tid}.png")
            cli("reconstruct", "--manifest", scene.manifests[tid],
                "--out", planes_dir, "--all-bands",
                "--render-out", render_png)
            false_png = str(root / f"false_{tid}.png")
            cli("translate", "--in", render_png,
                "--translator", f"baseline:{masked_wsi}",
                "--tile-id", tid,
                "--intensity", f"{planes_dir}/band_0_intensity.fplane",
                "--out", false_png)
            x, y, w, h = scene.patches[tid]
            result_json = str(root / f"result_{tid}.json")
            cli("register", "--moving", false_png,
                "--wsi", masked_wsi, "--no-mask-bg",
                "--patch", f"{x},{y},{w},{h}", "--tile-id", tid,
                "--out", result_json)
            results.append(result_json)

        mosaic_png = str(root / "mosaic.png")
        cli("stitch", "--wsi", scene.wsi_path,
            "--results", *results, "--planes-dir", str(root / "planes"),
            "--band", "0", "--out", mosaic_png)
        assert os.path.isfile(mosaic_png)

        # probe the constant-tau disk at the center of tile0's patch
        x, y, w, h = scene.patches["tile0"]
        csv_text = cli("probe", "--results", *results,
                       "--planes-dir", str(root / "planes"),
                       "--x", str(x + w // 2), "--y", str(y + h // 2))
        lines = csv_text.strip().split("\n")
        assert lines[0] == "wavelength_nm,lifetime_ns"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 8   # 500..675 nm in 25 nm steps
        worst = 0.0
        for wl, tau in rows:
            worst = max(worst, abs(float(tau) - 2.0))
        assert worst < 0.05, f"probe deviation {worst:.4f} ns"

        elapsed = time.monotonic() - t0
        assert elapsed < 300.0, f"pipeline took {elapsed:.0f}s"
        ok(f"end-to-end pipeline (probe within {worst:.4f} ns; "
           f"{elapsed:.0f}s total)")


class TestPersistenceCriterion:
    def test_survives_kill_during_write(self, tmp_path):
        """SIGKILL a process mid-save-loop; the previous state must load."""
        script = r"""
import sys, time
sys.path.insert(0, sys.argv[2])
from flimreg.project import ProjectSession, WsiRef, save_session

directory = sys.argv[1]
session = ProjectSession(wsi=WsiRef("w1", "/x.png", 100, 100))
i = 0
while True:
    session.accepted_registrations.append(f"j{i}")
    save_session(session, directory)
    i += 1
"""
        from flimreg.project import load_session

        pdir = tmp_path / "proj"
        pdir.mkdir()
        target = pdir / "project.json"
        for attempt in range(5):
            proc = subprocess.Popen(
                [sys.executable, "-c", script, str(pdir),
                 os.path.join(os.path.dirname(__file__), "..", "src")],
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
            deadline = time.monotonic() + 60.0
            while not target.exists() and time.monotonic() < deadline:
                time.sleep(0.01)
            assert target.exists(), "writer never produced a first save"
            time.sleep(0.02 + 0.03 * attempt)   # land the kill mid-loop
            proc.send_signal(signal.SIGKILL)
            proc.wait()
            session = load_session(str(pdir))   # must never raise
            assert session.wsi.width == 100
            assert all(v.startswith("j")
                       for v in session.accepted_registrations)
        ok("persistence (kill-during-write survived 5 rounds)")
