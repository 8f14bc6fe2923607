/**
 * Pan/zoom viewport math and crop-drag tracking.
 *
 * All conversions are exact affine maps so a crop selected on screen posts
 * the same WSI-frame rect the server would crop: image = pan + screen/zoom.
 */

export interface Point {
  x: number;
  y: number;
}

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export class Viewport {
  /** top-left of the visible area, in image (WSI) pixels */
  panX = 0;
  panY = 0;
  /** screen pixels per image pixel */
  zoom = 1;

  screenToImage(p: Point): Point {
    return { x: this.panX + p.x / this.zoom, y: this.panY + p.y / this.zoom };
  }

  imageToScreen(p: Point): Point {
    return { x: (p.x - this.panX) * this.zoom, y: (p.y - this.panY) * this.zoom };
  }

  /** pan by a screen-space delta (drag) */
  panBy(dxScreen: number, dyScreen: number): void {
    this.panX -= dxScreen / this.zoom;
    this.panY -= dyScreen / this.zoom;
  }

  /** zoom by `factor` keeping the image point under `anchor` fixed */
  zoomAt(anchor: Point, factor: number): void {
    const fixed = this.screenToImage(anchor);
    this.zoom = Math.min(Math.max(this.zoom * factor, 1 / 64), 64);
    this.panX = fixed.x - anchor.x / this.zoom;
    this.panY = fixed.y - anchor.y / this.zoom;
  }
}

/**
 * Turns a screen-space drag into a normalized WSI-frame rect.
 * Zero-area drags yield null and are discarded by the caller.
 */
export class CropTracker {
  private start: Point | null = null;
  private end: Point | null = null;

  constructor(private view: Viewport) {}

  begin(screen: Point): void {
    this.start = screen;
    this.end = screen;
  }

  update(screen: Point): void {
    if (this.start) this.end = screen;
  }

  /** rect-in-progress for drawing the rubber band, in screen coords */
  screenRect(): Rect | null {
    if (!this.start || !this.end) return null;
    return {
      x: Math.min(this.start.x, this.end.x),
      y: Math.min(this.start.y, this.end.y),
      w: Math.abs(this.end.x - this.start.x),
      h: Math.abs(this.end.y - this.start.y),
    };
  }

  /** finish the drag; returns the WSI-frame rect or null for zero area */
  finish(screen: Point): Rect | null {
    if (!this.start) return null;
    this.end = screen;
    const a = this.view.screenToImage(this.start);
    const b = this.view.screenToImage(this.end);
    this.start = this.end = null;
    const rect = normalizeRect(a, b);
    return rect;
  }

  cancel(): void {
    this.start = this.end = null;
  }
}

/** two image-frame corners -> integer rect with w,h > 0, else null */
export function normalizeRect(a: Point, b: Point): Rect | null {
  const x0 = Math.round(Math.min(a.x, b.x));
  const y0 = Math.round(Math.min(a.y, b.y));
  const x1 = Math.round(Math.max(a.x, b.x));
  const y1 = Math.round(Math.max(a.y, b.y));
  if (x1 - x0 <= 0 || y1 - y0 <= 0) return null;
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}

/** clamp a rect into image bounds, dropping it if nothing remains */
export function clampRect(rect: Rect, width: number, height: number): Rect | null {
  const x0 = Math.max(rect.x, 0);
  const y0 = Math.max(rect.y, 0);
  const x1 = Math.min(rect.x + rect.w, width);
  const y1 = Math.min(rect.y + rect.h, height);
  if (x1 - x0 <= 0 || y1 - y0 <= 0) return null;
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}
