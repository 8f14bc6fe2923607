"""Batch command-line access to every pipeline stage, plus `serve`.

Each subcommand is a thin wrapper over the engine modules: for identical
inputs it produces exactly the outputs of the direct calls.  With --json a
machine-readable document (with a versioned "schema" field) goes to stdout.
Usage errors exit 2; runtime failures exit 1.
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import __version__
from .datamodel import (
    load_hypercube,
    load_plane,
    load_rgb,
    save_plane,
    save_rgb,
)
from .errors import FlimregError, ValidationError
from .imaging import LifetimeRenderSpec, mask_background, render_lifetime, resize
from .reconstruction import (
    normalize_group,
    photon_noise_filter,
    reconstruct_planes,
    spectral_smooth,
)
from .registration import RegressionParams, regress_homography
from .stitching import PatchRect, TilePlacement, blend, probe_cell, stitch
from .translation import apply_intensity_mask, parse_translator_spec, translate

RESULT_SCHEMA = "flimreg.register/1"


def _emit(args, doc: dict) -> None:
    if getattr(args, "json", False):
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _parse_rect(text: str) -> PatchRect:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValidationError("patch must be x,y,w,h", field="patch")
    x, y, w, h = (int(v) for v in parts)
    return PatchRect(x, y, w, h)


def _parse_range(text: str) -> tuple[float, float]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ValidationError("range must be lo:hi", field="range")
    return float(lo), float(hi)


def _plane_paths(out_dir: str, band: int) -> tuple[str, str]:
    return (os.path.join(out_dir, f"band_{band}_intensity.fplane"),
            os.path.join(out_dir, f"band_{band}_lifetime.fplane"))


def cmd_reconstruct(args) -> int:
    cube = load_hypercube(args.manifest)
    smooth_window = min(args.smooth_window, cube.spectral_bins)
    if smooth_window > 1:
        cube = spectral_smooth(cube, smooth_window)
    bands = range(cube.spectral_bins) if args.all_bands else [args.band]
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for band in bands:
        intensity, lifetime = reconstruct_planes(cube, band,
                                                 workers=args.workers)
        report = None
        if args.filter:
            intensity, lifetime, rep = photon_noise_filter(intensity, lifetime)
            report = {"n_hat": rep.n_hat, "threshold": rep.threshold,
                      "pixels_zeroed": rep.pixels_zeroed}
        ipath, lpath = _plane_paths(args.out, band)
        save_plane(intensity, ipath)
        save_plane(lifetime, lpath)
        summary.append({"band": band,
                        "wavelength_nm": cube.wavelength_of(band),
                        "intensity": ipath, "lifetime": lpath,
                        "filter": report})
        if args.render_out and band == args.band:
            lo, hi = _parse_range(args.render_range)
            spec = LifetimeRenderSpec(lo, hi, args.colormap, args.weighting)
            weight = None
            if spec.weighting == "intensity":
                weight = normalize_group([intensity])[0]
            save_rgb(render_lifetime(lifetime, weight, spec), args.render_out)
    _emit(args, {"schema": "flimreg.reconstruct/1", "bands": summary,
                 "render": args.render_out})
    return 0


def cmd_mask_bg(args) -> int:
    img = load_rgb(args.input)
    masked, mask = mask_background(img)
    save_rgb(masked, args.out)
    if args.mask_out:
        from PIL import Image
        Image.fromarray((mask.bits * np.uint8(255))).save(args.mask_out)
    _emit(args, {"schema": "flimreg.mask_bg/1", "out": args.out,
                 "foreground_fraction": float(mask.bits.mean())})
    return 0


def cmd_translate(args) -> int:
    render = load_rgb(args.input)
    cfg = parse_translator_spec(args.translator)
    out = translate(render, cfg, args.tile_id)
    if args.intensity:
        out = apply_intensity_mask(out, load_plane(args.intensity))
    save_rgb(out, args.out)
    _emit(args, {"schema": "flimreg.translate/1", "out": args.out,
                 "mode": cfg.mode})
    return 0


def cmd_register(args) -> int:
    moving = load_rgb(args.moving)
    if args.target:
        target = load_rgb(args.target)
        patch = None
    else:
        if not (args.wsi and args.patch):
            raise ValidationError(
                "register needs --target or --wsi with --patch")
        wsi = load_rgb(args.wsi)
        patch = _parse_rect(args.patch)
        if (patch.x < 0 or patch.y < 0 or patch.x + patch.w > wsi.width
                or patch.y + patch.h > wsi.height):
            raise ValidationError("patch outside WSI bounds", field="patch")
        from .datamodel import RgbImage
        target = RgbImage(wsi.pixels[patch.y:patch.y + patch.h,
                                     patch.x:patch.x + patch.w])
        if args.mask_bg:
            target, _ = mask_background(target)
    params = RegressionParams(
        epochs=args.epochs, lr=args.lr, decay_epoch=args.decay_epoch,
        decay_factor=args.decay_factor, window=args.window,
        color_mode=args.color_mode, optimizer=args.optimizer,
        regression_dim=args.regression_dim, seed=args.seed)
    result = regress_homography(moving, target, params)
    doc = result.to_json()
    doc["schema"] = RESULT_SCHEMA
    doc["tile_id"] = args.tile_id
    doc["patch"] = patch.to_json() if patch else None
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    _emit(args, doc)
    return 0


def _load_results(patterns: list[str]) -> list[dict]:
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        paths.extend(hits if hits else [pat])
    docs = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema") != RESULT_SCHEMA:
            raise ValidationError(f"{path} is not a registration result")
        if not doc.get("patch") or not doc.get("tile_id"):
            raise ValidationError(f"{path} lacks tile_id/patch placement info")
        docs.append(doc)
    return docs


def _placements_from_results(docs: list[dict]) -> list[TilePlacement]:
    placements = []
    for doc in docs:
        placements.append(TilePlacement.from_json({
            "tile_id": doc["tile_id"],
            "patch": doc["patch"],
            "homography": doc["homography"],
            "regression_dim": doc["params"]["regression_dim"],
        }))
    return placements


def _resolve_band(planes_dir: str, tile_id: str, wavelength: float) -> int:
    """Nearest reconstructed band to a requested wavelength, by metadata."""
    pattern = os.path.join(planes_dir, tile_id, "band_*_lifetime.fplane")
    best = None
    for path in sorted(glob.glob(pattern)):
        band = int(os.path.basename(path).split("_")[1])
        plane = load_plane(path)
        if plane.wavelength_nm is None:
            continue
        gap = abs(plane.wavelength_nm - wavelength)
        if best is None or gap < best[0]:
            best = (gap, band)
    if best is None:
        raise ValidationError(
            f"no reconstructed bands with wavelengths under "
            f"{os.path.join(planes_dir, tile_id)}", field="wavelength")
    return best[1]


def cmd_stitch(args) -> int:
    docs = _load_results(args.results)
    placements = _placements_from_results(docs)
    wsi = load_rgb(args.wsi)
    lo, hi = _parse_range(args.render_range)
    spec = LifetimeRenderSpec(lo, hi, args.colormap, args.weighting)
    band = args.band
    if args.wavelength is not None:
        band = _resolve_band(args.planes_dir, placements[0].tile_id,
                             args.wavelength)
    planes = {}
    weights = {}
    for p in placements:
        ipath, lpath = _plane_paths(os.path.join(args.planes_dir, p.tile_id),
                                    band)
        planes[p.tile_id] = load_plane(lpath)
        if spec.weighting == "intensity":
            weights[p.tile_id] = normalize_group([load_plane(ipath)])[0]
    mosaic, coverage = stitch(
        placements, planes, (wsi.width, wsi.height),
        background=wsi if args.background else None,
        render_spec=spec,
        intensity_planes=weights if spec.weighting == "intensity" else None)
    if args.blend_alpha is not None:
        mosaic = blend(mosaic, wsi, args.blend_alpha)
    if args.scale != 1.0:
        mosaic = resize(mosaic, max(1, round(mosaic.width * args.scale)),
                        max(1, round(mosaic.height * args.scale)))
    save_rgb(mosaic, args.out)
    sidecar = {
        "schema": "flimreg.mosaic/1",
        "canvas": {"width": mosaic.width, "height": mosaic.height},
        "band": band,
        "render": {"range_min_ns": lo, "range_max_ns": hi,
                   "colormap": args.colormap, "weighting": args.weighting},
        "placements": [p.to_json() for p in placements],
    }
    with open(os.path.splitext(args.out)[0] + ".json", "w",
              encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
    _emit(args, {**sidecar, "out": args.out,
                 "covered_pixels": int((coverage > 0).sum())})
    return 0


def cmd_probe(args) -> int:
    docs = _load_results(args.results)
    placements = _placements_from_results(docs)
    lifetime_planes: dict[str, dict[int, object]] = {}
    for p in placements:
        per_band = {}
        tile_dir = os.path.join(args.planes_dir, p.tile_id)
        for path in sorted(glob.glob(os.path.join(tile_dir,
                                                  "band_*_lifetime.fplane"))):
            band = int(os.path.basename(path).split("_")[1])
            per_band[band] = load_plane(path)
        lifetime_planes[p.tile_id] = per_band
    curve = probe_cell((args.x, args.y), placements, lifetime_planes,
                       (args.band_min, args.band_max), args.window)
    lines = ["wavelength_nm,lifetime_ns"]
    lines += [f"{wl:g},{tau:.6g}" for wl, tau in curve]
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    if args.json:
        _emit(args, {"schema": "flimreg.probe/1",
                     "curve": [{"wavelength_nm": wl, "lifetime_ns": tau}
                               for wl, tau in curve]})
    elif not args.out:
        sys.stdout.write(csv_text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    host, _, port = args.addr.rpartition(":")
    static = args.static
    if static is None and os.path.isdir(os.path.join("frontend", "dist")):
        static = os.path.join("frontend", "dist")
    app = create_app(args.data, workers=args.workers, static_dir=static)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flimreg",
        description="FS-FLIM / histology co-registration workbench")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct",
                       help="hypercube -> intensity/lifetime planes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--band", type=int, default=0)
    grp.add_argument("--all-bands", action="store_true")
    p.add_argument("--smooth-window", type=int, default=8)
    p.add_argument("--filter", action=argparse.BooleanOptionalAction,
                   default=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--render-out", default=None)
    p.add_argument("--render-range", default="1.0:3.0")
    p.add_argument("--colormap", choices=("jet", "gray"), default="jet")
    p.add_argument("--weighting", choices=("none", "intensity"),
                   default="intensity")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("mask-bg", help="black out a bright slide background")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mask_bg)

    p = sub.add_parser("translate", help="FLIM render -> false histology")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--translator", required=True,
                   help="baseline:<ref.png> or external:<dir>")
    p.add_argument("--tile-id", default="tile")
    p.add_argument("--intensity", default=None,
                   help="intensity plane applied as a mask")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("register",
                       help="estimate moving -> target homography")
    p.add_argument("--moving", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--wsi", default=None)
    p.add_argument("--patch", default=None, help="x,y,w,h crop of --wsi")
    p.add_argument("--mask-bg", action=argparse.BooleanOptionalAction,
                   default=True, help="mask the cropped patch background")
    p.add_argument("--tile-id", default="tile")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--decay-epoch", type=int, default=100)
    p.add_argument("--decay-factor", type=float, default=0.1)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--color-mode", choices=("gray", "rgb"), default="gray")
    p.add_argument("--optimizer", choices=("gd", "adam"), default="gd")
    p.add_argument("--regression-dim", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("stitch", help="registered tiles -> whole-slide mosaic")
    p.add_argument("--wsi", required=True)
    p.add_argument("--results", nargs="+", required=True,
                   help="registration result JSONs (globs ok)")
    p.add_argument("--planes-dir", required=True)
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--wavelength", type=float, default=None,
                   help="pick the nearest reconstructed band instead of --band")
    p.add_argument("--render-range", default="1.0:3.0")
    p.add_argument("--colormap", choices=("jet", "gray"), default="jet")
    p.add_argument("--weighting", choices=("none", "intensity"),
                   default="intensity")
    p.add_argument("--background", action="store_true",
                   help="show the WSI under uncovered pixels")
    p.add_argument("--blend-alpha", type=float, default=None)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("probe", help="per-cell spectral lifetime curve")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--planes-dir", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--band-min", type=float, default=500.0)
    p.add_argument("--band-max", type=float, default=680.0)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--out", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--addr", default=os.environ.get("FLIMREG_ADDR",
                                                    "127.0.0.1:8077"))
    p.add_argument("--data", default=os.environ.get("FLIMREG_DATA",
                                                    "./flimreg-data"))
    p.add_argument("--workers", type=int,
                   default=int(os.environ["FLIMREG_WORKERS"])
                   if "FLIMREG_WORKERS" in os.environ else None)
    p.add_argument("--static", default=os.environ.get("FLIMREG_STATIC"),
                   help="directory with the UI bundle "
                        "(default: ./frontend/dist when present)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FlimregError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
