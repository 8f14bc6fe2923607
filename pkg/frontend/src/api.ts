/**
 * Typed client for the flimreg JSON API.
 *
 * The UI keeps no registration state of its own: everything renders from
 * these endpoints, so a full page reload reconstructs every view.
 */

import type { Rect } from "./viewport.js";

export interface WsiInfo {
  id: string;
  width: number;
  height: number;
}

export interface TileInfo {
  id: string;
  width: number;
  height: number;
  spectral_bins: number;
  time_bins: number;
}

export interface PlacementDoc {
  tile_id: string;
  patch: Rect;
  homography: number[];
  regression_dim: number;
}

export interface ProjectDoc {
  id: string;
  wsi: { id: string; path: string; width: number; height: number } | null;
  hypercubes: { id: string; manifest_path: string }[];
  placements: PlacementDoc[];
  accepted_registrations: string[];
  jobs: JobSnapshot[];
}

export interface JobSnapshot {
  id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: { epoch: number; loss: number } | null;
  result_ref: string | null;
  error: string | null;
}

export interface RegressionFormParams {
  epochs: number;
  lr: number;
  decay_epoch: number;
  decay_factor: number;
  window: number;
  color_mode: string;
  regression_dim: number;
}

/** the reference protocol's settings, pre-filled in the launch form */
export const DEFAULT_PARAMS: RegressionFormParams = {
  epochs: 200,
  lr: 0.01,
  decay_epoch: 100,
  decay_factor: 0.1,
  window: 200,
  color_mode: "gray",
  regression_dim: 256,
};

export interface ApiError {
  code: string;
  message: string;
  field?: string;
}

export class RequestFailed extends Error {
  constructor(public status: number, public detail: ApiError) {
    super(detail.message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let detail: ApiError;
      try {
        detail = (await resp.json()) as ApiError;
      } catch {
        detail = { code: "http_error", message: `HTTP ${resp.status}` };
      }
      throw new RequestFailed(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  createProject(name?: string): Promise<{ id: string }> {
    return this.request("POST", "/projects", name ? { name } : {});
  }

  getProject(pid: string): Promise<ProjectDoc> {
    return this.request("GET", `/projects/${pid}`);
  }

  addWsi(pid: string, path: string): Promise<WsiInfo> {
    return this.request("POST", `/projects/${pid}/wsi`, { path });
  }

  addTile(pid: string, manifestPath: string, id?: string): Promise<TileInfo> {
    return this.request("POST", `/projects/${pid}/tiles`, {
      manifest_path: manifestPath,
      ...(id ? { id } : {}),
    });
  }

  regionUrl(pid: string, wsiId: string, rect: Rect, scale = 1): string {
    const q = new URLSearchParams({
      x: String(rect.x), y: String(rect.y),
      w: String(rect.w), h: String(rect.h), scale: String(scale),
    });
    return `${this.base}/projects/${pid}/wsi/${wsiId}/region?${q}`;
  }

  tilePlaneUrl(pid: string, tileId: string, band: number): string {
    return `${this.base}/projects/${pid}/tiles/${tileId}/plane?band=${band}`;
  }

  createJob(
    pid: string,
    tileId: string,
    patch: Rect,
    params: Partial<RegressionFormParams>,
    translator: string,
    band = 0,
  ): Promise<{ id: string; state: string }> {
    return this.request("POST", `/projects/${pid}/jobs`, {
      kind: "register",
      tile_id: tileId,
      patch,
      params,
      translator,
      band,
    });
  }

  getJob(pid: string, jobId: string): Promise<JobSnapshot> {
    return this.request("GET", `/projects/${pid}/jobs/${jobId}`);
  }

  eventsUrl(pid: string, jobId: string, fromEpoch = 0): string {
    return `${this.base}/projects/${pid}/jobs/${jobId}/events?from_epoch=${fromEpoch}`;
  }

  previewUrl(pid: string, jobId: string, alpha: number, mode: string): string {
    return `${this.base}/projects/${pid}/jobs/${jobId}/preview?alpha=${alpha}&mode=${mode}`;
  }

  accept(pid: string, jobId: string): Promise<{ placement: PlacementDoc }> {
    return this.request("POST", `/projects/${pid}/jobs/${jobId}/accept`);
  }

  async stitch(pid: string, band: number, weighting: string,
               blendAlpha?: number): Promise<Blob> {
    const body: Record<string, unknown> = { band, weighting };
    if (blendAlpha !== undefined) body.blend_alpha = blendAlpha;
    const resp = await this.fetchImpl(`${this.base}/projects/${pid}/stitch`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) {
      throw new RequestFailed(resp.status, (await resp.json()) as ApiError);
    }
    return resp.blob();
  }

  async probe(pid: string, x: number, y: number,
              bandMin = 500, bandMax = 680): Promise<{ wavelength: number; tau: number }[]> {
    const q = new URLSearchParams({
      x: String(x), y: String(y),
      band_min: String(bandMin), band_max: String(bandMax),
    });
    const resp = await this.fetchImpl(`${this.base}/projects/${pid}/probe?${q}`);
    if (!resp.ok) {
      throw new RequestFailed(resp.status, (await resp.json()) as ApiError);
    }
    const text = await resp.text();
    return text
      .trim()
      .split("\n")
      .slice(1)
      .filter((line) => line.length > 0)
      .map((line) => {
        const [wl, tau] = line.split(",");
        return { wavelength: parseFloat(wl), tau: parseFloat(tau) };
      });
  }
}
