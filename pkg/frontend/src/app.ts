/**
 * The co-registration cockpit: four panels wired to the JSON API.
 *
 *   1. project setup - WSI path + hypercube manifests
 *   2. crop          - pan/zoom WSI viewer, drag selects a patch
 *   3. regression    - parameter form, launch, live loss curve
 *   4. review/stitch - overlay preview with alpha slider, accept,
 *                      stitched mosaic and per-cell spectral probe
 */

import { ApiClient, DEFAULT_PARAMS, JobSnapshot, ProjectDoc } from "./api.js";
import { JobMonitor, StreamFactory } from "./jobs.js";
import { LossChart } from "./lossChart.js";
import { stitchTileList } from "./stitchView.js";
import { CropTracker, Rect, Viewport, clampRect } from "./viewport.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class App {
  private api: ApiClient;
  private streams: StreamFactory;
  private pid: string | null = null;
  private wsi: { id: string; width: number; height: number } | null = null;
  private view = new Viewport();
  private crop: CropTracker;
  private selection: Rect | null = null;
  private selectedTile: string | null = null;
  private wsiImage: HTMLImageElement | null = null;
  private chart: LossChart;
  private monitor: JobMonitor | null = null;
  private currentJob: string | null = null;
  private dragMode: "none" | "pan" | "crop" = "none";
  private lastPointer = { x: 0, y: 0 };

  constructor(api?: ApiClient, streams?: StreamFactory) {
    this.api = api ?? new ApiClient("");
    this.streams = streams ?? ((url) => new EventSource(url));
    this.crop = new CropTracker(this.view);
    this.chart = new LossChart(el<HTMLCanvasElement>("loss-chart"));
  }

  async init(): Promise<void> {
    const params = new URLSearchParams(location.search);
    const existing = params.get("project");
    if (existing) {
      this.pid = existing;
      await this.refreshProject();
    }
    this.bindSetup();
    this.bindViewer();
    this.bindRegression();
    this.bindReview();
    this.bindStitchProbe();
    this.renderStatus();
  }

  // ---- panel 1: project setup ------------------------------------------

  private bindSetup(): void {
    el<HTMLButtonElement>("btn-create").onclick = async () => {
      const name = el<HTMLInputElement>("project-name").value.trim();
      const { id } = await this.api.createProject(name || undefined);
      this.pid = id;
      history.replaceState(null, "", `?project=${id}`);
      await this.refreshProject();
      this.renderStatus();
    };
    el<HTMLButtonElement>("btn-wsi").onclick = async () => {
      if (!this.pid) return this.flash("create a project first");
      const path = el<HTMLInputElement>("wsi-path").value.trim();
      if (!path) return;
      try {
        const info = await this.api.addWsi(this.pid, path);
        this.wsi = info;
        await this.loadWsiImage();
        await this.refreshProject();
      } catch (err) {
        this.flash(String(err));
      }
    };
    el<HTMLButtonElement>("btn-tile").onclick = async () => {
      if (!this.pid) return this.flash("create a project first");
      const manifest = el<HTMLInputElement>("tile-manifest").value.trim();
      if (!manifest) return;
      try {
        await this.api.addTile(this.pid, manifest);
        await this.refreshProject();
      } catch (err) {
        this.flash(String(err));
      }
    };
  }

  private async refreshProject(): Promise<void> {
    if (!this.pid) return;
    const doc = await this.api.getProject(this.pid);
    if (doc.wsi && !this.wsi) {
      this.wsi = { id: doc.wsi.id, width: doc.wsi.width, height: doc.wsi.height };
      await this.loadWsiImage();
    }
    this.renderTileList(doc);
    this.renderStitchList(doc);
    this.renderJobList(doc.jobs);
  }

  private renderTileList(doc: ProjectDoc): void {
    const box = el<HTMLSelectElement>("tile-select");
    box.innerHTML = "";
    for (const h of doc.hypercubes) {
      const opt = document.createElement("option");
      opt.value = h.id;
      opt.textContent = h.id;
      box.appendChild(opt);
    }
    if (doc.hypercubes.length && !this.selectedTile) {
      this.selectedTile = doc.hypercubes[0].id;
    }
    box.value = this.selectedTile ?? "";
    box.onchange = () => {
      this.selectedTile = box.value;
      this.renderTilePreview();
    };
    this.renderTilePreview();
  }

  private renderTilePreview(): void {
    if (!this.pid || !this.selectedTile) return;
    const band = parseInt(el<HTMLInputElement>("band").value || "0", 10);
    el<HTMLImageElement>("tile-preview").src =
      this.api.tilePlaneUrl(this.pid, this.selectedTile, band);
  }

  // ---- panel 2: WSI viewer + crop ----------------------------------------

  private async loadWsiImage(): Promise<void> {
    if (!this.pid || !this.wsi) return;
    const img = new Image();
    img.src = this.api.regionUrl(this.pid, this.wsi.id,
      { x: 0, y: 0, w: this.wsi.width, h: this.wsi.height }, 1);
    await img.decode().catch(() => undefined);
    this.wsiImage = img;
    this.drawViewer();
  }

  private bindViewer(): void {
    const canvas = el<HTMLCanvasElement>("wsi-canvas");
    canvas.addEventListener("pointerdown", (ev) => {
      canvas.setPointerCapture(ev.pointerId);
      const p = this.canvasPoint(canvas, ev);
      this.lastPointer = p;
      if (ev.shiftKey || el<HTMLInputElement>("mode-crop").checked) {
        this.dragMode = "crop";
        this.crop.begin(p);
      } else {
        this.dragMode = "pan";
      }
    });
    canvas.addEventListener("pointermove", (ev) => {
      const p = this.canvasPoint(canvas, ev);
      if (this.dragMode === "pan") {
        this.view.panBy(p.x - this.lastPointer.x, p.y - this.lastPointer.y);
      } else if (this.dragMode === "crop") {
        this.crop.update(p);
      }
      this.lastPointer = p;
      if (this.dragMode !== "none") this.drawViewer();
    });
    canvas.addEventListener("pointerup", (ev) => {
      const p = this.canvasPoint(canvas, ev);
      if (this.dragMode === "crop") {
        const rect = this.crop.finish(p);
        if (rect && this.wsi) {
          this.selection = clampRect(rect, this.wsi.width, this.wsi.height);
          this.renderSelection();
        }
      }
      this.dragMode = "none";
      this.drawViewer();
    });
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const factor = ev.deltaY < 0 ? 1.25 : 0.8;
      this.view.zoomAt(this.canvasPoint(canvas, ev), factor);
      this.drawViewer();
    }, { passive: false });

    // the numeric rect is editable by hand; it is the value actually posted
    for (const field of ["sel-x", "sel-y", "sel-w", "sel-h"]) {
      el<HTMLInputElement>(field).onchange = () => {
        const rect = {
          x: parseInt(el<HTMLInputElement>("sel-x").value, 10),
          y: parseInt(el<HTMLInputElement>("sel-y").value, 10),
          w: parseInt(el<HTMLInputElement>("sel-w").value, 10),
          h: parseInt(el<HTMLInputElement>("sel-h").value, 10),
        };
        if ([rect.x, rect.y, rect.w, rect.h].some(Number.isNaN)) return;
        this.selection = this.wsi
          ? clampRect(rect, this.wsi.width, this.wsi.height)
          : rect;
        this.drawViewer();
      };
    }
  }

  private canvasPoint(canvas: HTMLCanvasElement, ev: MouseEvent) {
    const bounds = canvas.getBoundingClientRect();
    return { x: ev.clientX - bounds.left, y: ev.clientY - bounds.top };
  }

  private renderSelection(): void {
    if (!this.selection) return;
    el<HTMLInputElement>("sel-x").value = String(this.selection.x);
    el<HTMLInputElement>("sel-y").value = String(this.selection.y);
    el<HTMLInputElement>("sel-w").value = String(this.selection.w);
    el<HTMLInputElement>("sel-h").value = String(this.selection.h);
  }

  private drawViewer(): void {
    const canvas = el<HTMLCanvasElement>("wsi-canvas");
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (this.wsiImage) {
      ctx.save();
      ctx.scale(this.view.zoom, this.view.zoom);
      ctx.translate(-this.view.panX, -this.view.panY);
      ctx.imageSmoothingEnabled = this.view.zoom < 1;
      ctx.drawImage(this.wsiImage, 0, 0);
      ctx.restore();
    }
    const band = this.crop.screenRect();
    if (band) {
      ctx.strokeStyle = "#ffd54f";
      ctx.setLineDash([6, 3]);
      ctx.strokeRect(band.x, band.y, band.w, band.h);
      ctx.setLineDash([]);
    }
    if (this.selection) {
      const a = this.view.imageToScreen({ x: this.selection.x, y: this.selection.y });
      ctx.strokeStyle = "#ffb300";
      ctx.lineWidth = 2;
      ctx.strokeRect(a.x, a.y,
        this.selection.w * this.view.zoom, this.selection.h * this.view.zoom);
      ctx.lineWidth = 1;
    }
  }

  // ---- panel 3: regression ------------------------------------------------

  private bindRegression(): void {
    const form = {
      epochs: el<HTMLInputElement>("p-epochs"),
      lr: el<HTMLInputElement>("p-lr"),
      decay_epoch: el<HTMLInputElement>("p-decay-epoch"),
      decay_factor: el<HTMLInputElement>("p-decay-factor"),
      window: el<HTMLInputElement>("p-window"),
    };
    form.epochs.value = String(DEFAULT_PARAMS.epochs);
    form.lr.value = String(DEFAULT_PARAMS.lr);
    form.decay_epoch.value = String(DEFAULT_PARAMS.decay_epoch);
    form.decay_factor.value = String(DEFAULT_PARAMS.decay_factor);
    form.window.value = String(DEFAULT_PARAMS.window);

    el<HTMLButtonElement>("btn-launch").onclick = async () => {
      if (!this.pid) return this.flash("create a project first");
      if (!this.selection) return this.flash("crop a histology patch first");
      if (!this.selectedTile) return this.flash("register a hypercube first");
      const translator = el<HTMLInputElement>("translator").value.trim();
      if (!translator) return this.flash("set a translator (baseline:<ref>)");
      const params = {
        epochs: parseInt(form.epochs.value, 10),
        lr: parseFloat(form.lr.value),
        decay_epoch: parseInt(form.decay_epoch.value, 10),
        decay_factor: parseFloat(form.decay_factor.value),
        window: parseInt(form.window.value, 10),
        color_mode: el<HTMLSelectElement>("p-color").value,
        regression_dim: DEFAULT_PARAMS.regression_dim,
      };
      const band = parseInt(el<HTMLInputElement>("band").value || "0", 10);
      try {
        const { id } = await this.api.createJob(
          this.pid, this.selectedTile, this.selection, params, translator, band);
        this.watchJob(id);
        await this.refreshProject();
      } catch (err) {
        this.flash(String(err));
      }
    };
  }

  private watchJob(jobId: string): void {
    if (!this.pid) return;
    this.monitor?.close();
    this.currentJob = jobId;
    this.chart.reset();
    el<HTMLSpanElement>("job-state").textContent = `${jobId}: running`;
    const pid = this.pid;
    this.monitor = new JobMonitor(
      (fromEpoch) => this.api.eventsUrl(pid, jobId, fromEpoch),
      {
        onProgress: (p) => {
          this.chart.append(p.epoch, p.loss);
          el<HTMLSpanElement>("job-state").textContent =
            `${jobId}: epoch ${p.epoch}, loss ${p.loss.toFixed(5)}`;
        },
        onTerminal: async (t) => {
          el<HTMLSpanElement>("job-state").textContent =
            `${jobId}: ${t.state}${t.error ? ` (${t.error})` : ""}`;
          if (t.state === "done") this.showPreview();
          await this.refreshProject();
        },
        onRetry: (attempt) => {
          el<HTMLSpanElement>("job-state").textContent =
            `${jobId}: stream lost, retry ${attempt}...`;
        },
      },
      this.streams,
    );
    this.monitor.start();
  }

  private renderJobList(jobs: JobSnapshot[]): void {
    const list = el<HTMLUListElement>("job-list");
    list.innerHTML = "";
    for (const job of jobs) {
      const li = document.createElement("li");
      const label = job.progress
        ? `${job.id} [${job.state}] epoch ${job.progress.epoch}`
        : `${job.id} [${job.state}]`;
      const btn = document.createElement("button");
      btn.textContent = label;
      btn.onclick = () => {
        this.currentJob = job.id;
        if (job.state === "queued" || job.state === "running") {
          this.watchJob(job.id);
        } else {
          this.showPreview();
        }
      };
      li.appendChild(btn);
      list.appendChild(li);
    }
  }

  // ---- panel 4: review / stitch / probe -----------------------------------

  private bindReview(): void {
    const alpha = el<HTMLInputElement>("alpha");
    alpha.oninput = () => {
      el<HTMLSpanElement>("alpha-val").textContent =
        Number(alpha.value).toFixed(2);
      this.showPreview();
    };
    el<HTMLSelectElement>("preview-mode").onchange = () => this.showPreview();
    el<HTMLButtonElement>("btn-accept").onclick = async () => {
      if (!this.pid || !this.currentJob) return;
      try {
        await this.api.accept(this.pid, this.currentJob);
        await this.refreshProject();
        this.flash(`accepted ${this.currentJob}`);
      } catch (err) {
        this.flash(String(err));
      }
    };
    el<HTMLButtonElement>("btn-reject").onclick = () => {
      this.currentJob = null;
      el<HTMLImageElement>("preview").src = "";
      this.flash("rejected; crop again");
    };
  }

  private showPreview(): void {
    if (!this.pid || !this.currentJob) return;
    const alpha = parseFloat(el<HTMLInputElement>("alpha").value);
    const mode = el<HTMLSelectElement>("preview-mode").value;
    el<HTMLImageElement>("preview").src =
      this.api.previewUrl(this.pid, this.currentJob, alpha, mode)
      + `&_=${Date.now()}`;
  }

  private renderStitchList(doc: ProjectDoc): void {
    const list = el<HTMLUListElement>("stitch-tiles");
    list.innerHTML = "";
    for (const row of stitchTileList(doc)) {
      const li = document.createElement("li");
      li.textContent = `${row.tileId} ${row.accepted ? "✓" : "·"} ${row.patch}`;
      li.className = row.accepted ? "accepted" : "pending";
      list.appendChild(li);
    }
  }

  private bindStitchProbe(): void {
    el<HTMLButtonElement>("btn-stitch").onclick = async () => {
      if (!this.pid) return;
      const band = parseInt(el<HTMLInputElement>("band").value || "0", 10);
      const weighting = el<HTMLSelectElement>("stitch-weighting").value;
      const alphaRaw = el<HTMLInputElement>("stitch-alpha").value;
      try {
        const blob = await this.api.stitch(
          this.pid, band, weighting,
          alphaRaw ? parseFloat(alphaRaw) : undefined);
        el<HTMLImageElement>("mosaic").src = URL.createObjectURL(blob);
      } catch (err) {
        this.flash(String(err));
      }
    };
    el<HTMLButtonElement>("btn-probe").onclick = async () => {
      if (!this.pid) return;
      const x = parseFloat(el<HTMLInputElement>("probe-x").value);
      const y = parseFloat(el<HTMLInputElement>("probe-y").value);
      try {
        const curve = await this.api.probe(this.pid, x, y);
        const tbody = el<HTMLTableSectionElement>("probe-rows");
        tbody.innerHTML = "";
        for (const { wavelength, tau } of curve) {
          const tr = document.createElement("tr");
          tr.innerHTML = `<td>${wavelength}</td><td>${tau.toFixed(4)}</td>`;
          tbody.appendChild(tr);
        }
      } catch (err) {
        this.flash(String(err));
      }
    };
  }

  private renderStatus(): void {
    el<HTMLSpanElement>("project-id").textContent = this.pid ?? "none";
  }

  private flash(message: string): void {
    const bar = el<HTMLDivElement>("flash");
    bar.textContent = message;
    bar.classList.add("visible");
    setTimeout(() => bar.classList.remove("visible"), 4000);
  }
}
