"""HTTP facade over the engine: the interactive workflow as a JSON API.

Projects hold a WSI, registered hypercube tiles, and asynchronous
registration jobs executed FIFO on a worker pool.  Job progress streams to
any number of subscribers as server-sent events with a polling fallback.
The project session persists crash-safely after every accepted registration.
"""

import io
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from . import errors as err
from .datamodel import (
    RgbImage,
    ScalarPlane,
    load_hypercube,
    load_rgb,
    plane_to_bytes,
)
from .imaging import LifetimeRenderSpec, mask_background, render_lifetime, resize, to_grayscale
from .project import HypercubeRef, ProjectSession, WsiRef, save_session
from .reconstruction import normalize_group, photon_noise_filter, reconstruct_planes, spectral_smooth
from .registration import RegressionParams, RegressionResult, regress_homography, warp
from .stitching import PatchRect, TilePlacement, blend, probe_cell, stitch
from .translation import apply_intensity_mask, parse_translator_spec, translate

MAX_REGION_PIXELS = 4096 * 4096
DEFAULT_SMOOTH_WINDOW = 8

_STATUS = {
    "validation_error": 400,
    "rect_out_of_bounds": 400,
    "invalid_window": 400,
    "dimension_mismatch": 400,
    "band_out_of_range": 400,
    "window_too_large": 400,
    "point_not_covered": 404,
    "unknown_project": 404,
    "unknown_wsi": 404,
    "unknown_tile": 404,
    "unknown_job": 404,
    "missing_file": 404,
    "missing_external_image": 404,
    "job_not_done": 409,
    "persist_failure": 500,
}


@dataclass
class Job:
    job_id: str
    kind: str
    payload: dict
    state: str = "queued"
    events: list = field(default_factory=list)  # (epoch, loss)
    result: RegressionResult | None = None
    result_ref: str | None = None
    error: str | None = None
    moving: RgbImage | None = None
    target: RgbImage | None = None
    cond: threading.Condition = field(default_factory=threading.Condition)

    def snapshot(self) -> dict:
        with self.cond:
            progress = None
            if self.events:
                epoch, loss = self.events[-1]
                progress = {"epoch": epoch, "loss": loss}
            return {
                "id": self.job_id,
                "kind": self.kind,
                "state": self.state,
                "progress": progress,
                "result_ref": self.result_ref,
                "error": self.error,
            }


@dataclass
class Project:
    project_id: str
    directory: str
    session: ProjectSession
    lock: threading.RLock = field(default_factory=threading.RLock)
    wsi_image: RgbImage | None = None
    cubes: dict = field(default_factory=dict)      # tile_id -> Hypercube
    planes: dict = field(default_factory=dict)     # (tile_id, band) -> planes
    jobs: dict = field(default_factory=dict)       # job_id -> Job
    counters: dict = field(default_factory=dict)


class Engine:
    """Shared application state behind the HTTP surface."""

    def __init__(self, data_dir: str, workers: int | None = None):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        if workers is None:
            workers = max(1, (os.cpu_count() or 2) - 1)
        self.workers = workers
        self.pool = ThreadPoolExecutor(max_workers=workers,
                                       thread_name_prefix="flimreg-job")
        self.projects: dict[str, Project] = {}
        self.lock = threading.Lock()
        self._next_project = 1

    # -- lookup helpers ----------------------------------------------------

    def project(self, pid: str) -> Project:
        proj = self.projects.get(pid)
        if proj is None:
            raise err.UnknownProject(f"no project {pid!r}")
        return proj

    def create_project(self, name: str | None = None) -> Project:
        with self.lock:
            pid = name or f"p{self._next_project}"
            self._next_project += 1
            if pid in self.projects:
                raise err.ValidationError(f"project {pid!r} exists",
                                          field="name")
            pdir = os.path.join(self.data_dir, pid)
            os.makedirs(pdir, exist_ok=True)
            proj = Project(pid, pdir, ProjectSession())
            save_session(proj.session, pdir)
            self.projects[pid] = proj
            return proj

    def _next_id(self, proj: Project, prefix: str) -> str:
        n = proj.counters.get(prefix, 0) + 1
        proj.counters[prefix] = n
        return f"{prefix}{n}"

    # -- tile plane pipeline -----------------------------------------------

    def tile_planes(self, proj: Project, tile_id: str, band: int,
                    smooth_window: int = DEFAULT_SMOOTH_WINDOW,
                    noise_filter: bool = True):
        """Reconstruct (and cache) intensity/lifetime planes for one band."""
        key = (tile_id, band, smooth_window, noise_filter)
        with proj.lock:
            if key in proj.planes:
                return proj.planes[key]
            cube = proj.cubes.get(tile_id)
            if cube is None:
                ref = next((h for h in proj.session.hypercubes
                            if h.tile_id == tile_id), None)
                if ref is None:
                    raise err.UnknownTile(f"no tile {tile_id!r}")
                cube = load_hypercube(ref.manifest_path)
                proj.cubes[tile_id] = cube
        effective_window = min(smooth_window, cube.spectral_bins)
        if effective_window > 1:
            cube = spectral_smooth(cube, effective_window)
        intensity, lifetime = reconstruct_planes(cube, band)
        if noise_filter:
            try:
                intensity, lifetime, _ = photon_noise_filter(intensity, lifetime)
            except err.EmptyPlane:
                pass
        with proj.lock:
            proj.planes[key] = (intensity, lifetime)
        return intensity, lifetime

    def tile_render(self, proj: Project, tile_id: str, band: int,
                    spec: LifetimeRenderSpec) -> RgbImage:
        intensity, lifetime = self.tile_planes(proj, tile_id, band)
        weight = None
        if spec.weighting == "intensity":
            weight = normalize_group([intensity])[0]
        return render_lifetime(lifetime, weight, spec)

    # -- registration jobs ---------------------------------------------------

    def submit_register(self, proj: Project, payload: dict) -> Job:
        tile_id = payload.get("tile_id")
        if not tile_id:
            raise err.ValidationError("tile_id required", field="tile_id")
        if not any(h.tile_id == tile_id for h in proj.session.hypercubes):
            raise err.UnknownTile(f"no tile {tile_id!r}")
        if proj.session.wsi is None or proj.wsi_image is None:
            raise err.ValidationError("project has no WSI", field="wsi")
        try:
            patch = PatchRect.from_json(payload["patch"])
        except (KeyError, TypeError) as exc:
            raise err.ValidationError(f"invalid patch rect: {exc}",
                                      field="patch") from exc
        wsi = proj.session.wsi
        if (patch.x < 0 or patch.y < 0 or patch.x + patch.w > wsi.width
                or patch.y + patch.h > wsi.height):
            raise err.RectOutOfBounds("patch outside WSI bounds")
        try:
            params = RegressionParams.from_json(payload.get("params", {}))
        except (ValueError, TypeError) as exc:
            raise err.ValidationError(str(exc), field="params") from exc
        translator = payload.get("translator")
        if not translator:
            raise err.ValidationError("translator required", field="translator")
        cfg = parse_translator_spec(translator)
        band = int(payload.get("band", 0))

        with proj.lock:
            job = Job(self._next_id(proj, "j"), "register", {
                "tile_id": tile_id, "patch": patch, "params": params,
                "translator": cfg, "band": band,
                "render": payload.get("render", {}),
            })
            proj.jobs[job.job_id] = job
        self.pool.submit(self._run_register, proj, job)
        return job

    def _run_register(self, proj: Project, job: Job) -> None:
        with job.cond:
            job.state = "running"
            job.cond.notify_all()
        try:
            patch: PatchRect = job.payload["patch"]
            params: RegressionParams = job.payload["params"]
            band: int = job.payload["band"]
            tile_id: str = job.payload["tile_id"]
            render_opts = job.payload.get("render", {})

            crop = RgbImage(proj.wsi_image.pixels[
                patch.y:patch.y + patch.h, patch.x:patch.x + patch.w])
            masked_patch, _ = mask_background(crop)

            spec = LifetimeRenderSpec(
                range_min_ns=float(render_opts.get("range_min_ns", 1.0)),
                range_max_ns=float(render_opts.get("range_max_ns", 3.0)),
                colormap=render_opts.get("colormap", "jet"),
                weighting=render_opts.get("weighting", "intensity"),
            )
            flim_render = self.tile_render(proj, tile_id, band, spec)
            false_hist = translate(flim_render, job.payload["translator"],
                                   tile_id)
            intensity, _ = self.tile_planes(proj, tile_id, band)
            false_hist = apply_intensity_mask(false_hist, intensity)

            def sink(epoch, loss, _g):
                with job.cond:
                    job.events.append((epoch, loss))
                    job.cond.notify_all()

            result = regress_homography(false_hist, masked_patch, params, sink)

            ref = os.path.join("results", f"{job.job_id}.json")
            result_path = os.path.join(proj.directory, ref)
            os.makedirs(os.path.dirname(result_path), exist_ok=True)
            doc = result.to_json()
            doc.update({"schema": "flimreg.register/1", "tile_id": tile_id,
                        "patch": patch.to_json()})
            with open(result_path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2)

            sized = resize(masked_patch, params.regression_dim,
                           params.regression_dim)
            with job.cond:
                job.moving = false_hist
                job.target = sized
                job.result = result
                job.result_ref = ref
                job.state = "done"
                job.cond.notify_all()
        except Exception as exc:  # report, never kill the worker
            with job.cond:
                job.error = str(exc)
                job.state = "failed"
                job.cond.notify_all()

    def get_job(self, proj: Project, job_id: str) -> Job:
        job = proj.jobs.get(job_id)
        if job is None:
            raise err.UnknownJob(f"no job {job_id!r}")
        return job

    def render_preview(self, proj: Project, job_id: str, alpha: float,
                       mode: str) -> RgbImage:
        job = self.get_job(proj, job_id)
        if job.state != "done":
            raise err.JobNotDone(f"job {job_id} is {job.state}")
        result = job.result
        dim = result.params.regression_dim
        pull = result.homography.inverse()
        moving = resize(job.moving, dim, dim)
        warped = warp(moving, pull, (dim, dim))
        target = job.target
        if mode == "gray":
            def luma_rgb(img):
                g = to_grayscale(img).values.astype(np.uint8)
                return RgbImage(np.repeat(g[:, :, None], 3, axis=2))
            warped, target = luma_rgb(warped), luma_rgb(target)
        elif mode != "color":
            raise err.ValidationError(f"unknown preview mode {mode!r}",
                                      field="mode")
        return blend(warped, target, alpha)

    def accept(self, proj: Project, job_id: str) -> TilePlacement:
        job = self.get_job(proj, job_id)
        if job.state != "done":
            raise err.JobNotDone(f"job {job_id} is {job.state}")
        with proj.lock:
            placement = TilePlacement(
                tile_id=job.payload["tile_id"],
                patch=job.payload["patch"],
                homography=job.result.homography,
                regression_dim=job.result.params.regression_dim,
            )
            if job_id not in proj.session.accepted_registrations:
                proj.session.accepted_registrations.append(job_id)
                proj.session.placements = [
                    p for p in proj.session.placements
                    if p.tile_id != placement.tile_id]
                proj.session.placements.append(placement)
                save_session(proj.session, proj.directory)
            return placement

    # -- stitching / probing -------------------------------------------------

    def stitch_project(self, proj: Project, band: int,
                       spec: LifetimeRenderSpec,
                       blend_alpha: float | None = None,
                       scale: float = 1.0):
        with proj.lock:
            placements = list(proj.session.placements)
            wsi = proj.session.wsi
        if not placements:
            raise err.ValidationError("no accepted placements to stitch")
        if wsi is None:
            raise err.ValidationError("project has no WSI")
        planes = {}
        weights = {}
        for p in placements:
            intensity, lifetime = self.tile_planes(proj, p.tile_id, band)
            planes[p.tile_id] = lifetime
            if spec.weighting == "intensity":
                weights[p.tile_id] = normalize_group([intensity])[0]
        mosaic, coverage = stitch(
            placements, planes, (wsi.width, wsi.height),
            background=None, render_spec=spec,
            intensity_planes=weights if spec.weighting == "intensity" else None)
        if blend_alpha is not None and proj.wsi_image is not None:
            mosaic = blend(mosaic, proj.wsi_image, blend_alpha)
        if scale != 1.0:
            mosaic = resize(mosaic, max(1, round(mosaic.width * scale)),
                            max(1, round(mosaic.height * scale)))
        return mosaic, coverage, placements

    def probe(self, proj: Project, x: float, y: float,
              band_min_nm: float, band_max_nm: float, window: int):
        with proj.lock:
            placements = list(proj.session.placements)
        covering = [p for p in placements if p.patch.contains(x, y)]
        if not covering:
            raise err.PointNotCovered(f"no placement covers ({x}, {y})")
        lifetime_planes: dict[str, dict[int, ScalarPlane]] = {}
        for p in covering:
            cube = proj.cubes.get(p.tile_id)
            if cube is None:
                ref = next(h for h in proj.session.hypercubes
                           if h.tile_id == p.tile_id)
                cube = load_hypercube(ref.manifest_path)
                with proj.lock:
                    proj.cubes[p.tile_id] = cube
            per_band = {}
            for band in range(cube.spectral_bins):
                wl = cube.wavelength_of(band)
                if band_min_nm <= wl <= band_max_nm:
                    _, lifetime = self.tile_planes(proj, p.tile_id, band)
                    per_band[band] = lifetime
            lifetime_planes[p.tile_id] = per_band
        return probe_cell((x, y), covering, lifetime_planes,
                          (band_min_nm, band_max_nm), window)


def _png_bytes(img: RgbImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def create_app(data_dir: str, workers: int | None = None,
               static_dir: str | None = None) -> FastAPI:
    engine = Engine(data_dir, workers)
    app = FastAPI(title="flimreg", version="0.1.0")
    app.state.engine = engine

    @app.exception_handler(err.FlimregError)
    async def _flimreg_error(_req: Request, exc: err.FlimregError):
        body = {"code": exc.code, "message": str(exc)}
        if exc.field:
            body["field"] = exc.field
        return JSONResponse(body, status_code=_STATUS.get(exc.code, 500))

    @app.post("/projects")
    async def create_project(body: dict | None = None):
        proj = engine.create_project((body or {}).get("name"))
        return {"id": proj.project_id}

    @app.get("/projects/{pid}")
    async def get_project(pid: str):
        proj = engine.project(pid)
        with proj.lock:
            doc = proj.session.to_json()
        doc["id"] = pid
        doc["jobs"] = [j.snapshot() for j in proj.jobs.values()]
        return doc

    @app.post("/projects/{pid}/wsi")
    async def add_wsi(pid: str, body: dict):
        proj = engine.project(pid)
        path = body.get("path")
        if not path:
            raise err.ValidationError("path required", field="path")
        img = load_rgb(path)
        with proj.lock:
            wsi_id = body.get("id") or engine._next_id(proj, "w")
            proj.session.wsi = WsiRef(wsi_id, os.path.abspath(path),
                                      img.width, img.height)
            proj.wsi_image = img
            save_session(proj.session, proj.directory)
        return {"id": wsi_id, "width": img.width, "height": img.height}

    @app.get("/projects/{pid}/wsi/{wsi_id}/region")
    async def wsi_region(pid: str, wsi_id: str, x: int, y: int, w: int, h: int,
                         scale: float = 1.0):
        proj = engine.project(pid)
        wsi = proj.session.wsi
        if wsi is None or wsi.wsi_id != wsi_id or proj.wsi_image is None:
            raise err.UnknownWsi(f"no WSI {wsi_id!r}")
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > wsi.width \
                or y + h > wsi.height:
            raise err.RectOutOfBounds("region outside WSI bounds")
        if scale <= 0:
            raise err.ValidationError("scale must be positive", field="scale")
        region = RgbImage(proj.wsi_image.pixels[y:y + h, x:x + w])
        out_w = max(1, round(w * scale))
        out_h = max(1, round(h * scale))
        applied = scale
        if out_w * out_h > MAX_REGION_PIXELS:
            shrink = (MAX_REGION_PIXELS / (out_w * out_h)) ** 0.5
            out_w = max(1, int(out_w * shrink))
            out_h = max(1, int(out_h * shrink))
            applied = out_w / w
        if (out_w, out_h) != (w, h):
            region = resize(region, out_w, out_h)
        return Response(_png_bytes(region), media_type="image/png",
                        headers={"X-Applied-Scale": f"{applied:g}"})

    @app.post("/projects/{pid}/tiles")
    async def add_tile(pid: str, body: dict):
        proj = engine.project(pid)
        manifest = body.get("manifest_path")
        if not manifest:
            raise err.ValidationError("manifest_path required",
                                      field="manifest_path")
        cube = load_hypercube(manifest)
        with proj.lock:
            tile_id = body.get("id") or engine._next_id(proj, "t")
            if any(h.tile_id == tile_id for h in proj.session.hypercubes):
                raise err.ValidationError(f"tile {tile_id!r} exists",
                                          field="id")
            proj.session.hypercubes.append(
                HypercubeRef(tile_id, os.path.abspath(manifest)))
            proj.cubes[tile_id] = cube
            save_session(proj.session, proj.directory)
        return {"id": tile_id, "width": cube.width, "height": cube.height,
                "spectral_bins": cube.spectral_bins,
                "time_bins": cube.time_bins}

    @app.get("/projects/{pid}/tiles/{tile_id}/plane")
    async def tile_plane(pid: str, tile_id: str, band: int = 0,
                         kind: str = "lifetime", render: bool = True,
                         range_min: float = 1.0, range_max: float = 3.0,
                         weighting: str = "intensity", colormap: str = "jet"):
        proj = engine.project(pid)
        intensity, lifetime = engine.tile_planes(proj, tile_id, band)
        if render:
            spec = LifetimeRenderSpec(range_min, range_max, colormap,
                                      weighting)
            if kind == "intensity":
                norm = normalize_group([intensity])[0]
                gray = np.clip(norm.values * 255.0, 0, 255).astype(np.uint8)
                img = RgbImage(np.repeat(gray[:, :, None], 3, axis=2))
            else:
                img = engine.tile_render(proj, tile_id, band, spec)
            return Response(_png_bytes(img), media_type="image/png")
        plane = intensity if kind == "intensity" else lifetime
        return Response(plane_to_bytes(plane),
                        media_type="application/octet-stream")

    @app.post("/projects/{pid}/jobs", status_code=202)
    async def create_job(pid: str, body: dict):
        proj = engine.project(pid)
        kind = body.get("kind", "register")
        if kind != "register":
            raise err.ValidationError(f"unsupported job kind {kind!r}",
                                      field="kind")
        job = engine.submit_register(proj, body)
        return {"id": job.job_id, "state": job.state}

    @app.get("/projects/{pid}/jobs/{job_id}")
    async def job_snapshot(pid: str, job_id: str):
        proj = engine.project(pid)
        return engine.get_job(proj, job_id).snapshot()

    @app.get("/projects/{pid}/jobs/{job_id}/events")
    async def job_events(pid: str, job_id: str, from_epoch: int = 0):
        proj = engine.project(pid)
        job = engine.get_job(proj, job_id)

        def stream():
            cursor = from_epoch
            while True:
                with job.cond:
                    while len(job.events) <= cursor and \
                            job.state in ("queued", "running"):
                        job.cond.wait(timeout=30.0)
                    chunk = job.events[cursor:]
                    state = job.state
                    result_ref = job.result_ref
                    error = job.error
                cursor += len(chunk)
                for epoch, loss in chunk:
                    payload = json.dumps({"epoch": epoch, "loss": loss})
                    yield f"id: {epoch}\nevent: progress\ndata: {payload}\n\n"
                if state in ("done", "failed") and \
                        cursor >= len(job.events):
                    payload = json.dumps({
                        "state": state, "result_ref": result_ref,
                        "error": error})
                    yield f"event: state\ndata: {payload}\n\n"
                    return

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/projects/{pid}/jobs/{job_id}/preview")
    async def job_preview(pid: str, job_id: str, alpha: float = 0.5,
                          mode: str = "color"):
        proj = engine.project(pid)
        img = engine.render_preview(proj, job_id, alpha, mode)
        return Response(_png_bytes(img), media_type="image/png")

    @app.post("/projects/{pid}/jobs/{job_id}/accept")
    async def job_accept(pid: str, job_id: str):
        proj = engine.project(pid)
        placement = engine.accept(proj, job_id)
        return {"placement": placement.to_json()}

    @app.post("/projects/{pid}/stitch")
    async def stitch_endpoint(pid: str, body: dict | None = None):
        body = body or {}
        proj = engine.project(pid)
        spec = LifetimeRenderSpec(
            range_min_ns=float(body.get("range_min_ns", 1.0)),
            range_max_ns=float(body.get("range_max_ns", 3.0)),
            colormap=body.get("colormap", "jet"),
            weighting=body.get("weighting", "intensity"),
        )
        mosaic, coverage, placements = engine.stitch_project(
            proj, int(body.get("band", 0)), spec,
            blend_alpha=body.get("blend_alpha"),
            scale=float(body.get("scale", 1.0)))
        mosaic_path = os.path.join(proj.directory, "mosaic.png")
        sidecar_path = os.path.join(proj.directory, "mosaic.json")
        with open(mosaic_path, "wb") as fh:
            fh.write(_png_bytes(mosaic))
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump({
                "schema": "flimreg.mosaic/1",
                "canvas": {"width": mosaic.width, "height": mosaic.height},
                "band": int(body.get("band", 0)),
                "render": {
                    "range_min_ns": spec.range_min_ns,
                    "range_max_ns": spec.range_max_ns,
                    "colormap": spec.colormap,
                    "weighting": spec.weighting,
                },
                "placements": [p.to_json() for p in placements],
            }, fh, indent=2)
        return Response(_png_bytes(mosaic), media_type="image/png",
                        headers={"X-Mosaic-Path": mosaic_path,
                                 "X-Sidecar-Path": sidecar_path})

    @app.get("/projects/{pid}/probe")
    async def probe_endpoint(pid: str, x: float, y: float,
                             band_min: float = 500.0, band_max: float = 680.0,
                             window: int = 5):
        proj = engine.project(pid)
        curve = engine.probe(proj, x, y, band_min, band_max, window)
        lines = ["wavelength_nm,lifetime_ns"]
        lines += [f"{wl:g},{tau:.6g}" for wl, tau in curve]
        return Response("\n".join(lines) + "\n", media_type="text/csv")

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")

    return app
