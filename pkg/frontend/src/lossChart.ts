/**
 * Live loss curve for a running regression.
 *
 * The underlying series is append-only and never mutated by rendering;
 * only the drawn polyline is thinned once the series exceeds maxDrawn
 * points, so a 200-epoch job always renders exactly 200 points.
 */

export interface LossPoint {
  epoch: number;
  loss: number;
}

export class LossChart {
  private series: LossPoint[] = [];

  constructor(
    private canvas: HTMLCanvasElement | null = null,
    public maxDrawn = 1000,
  ) {}

  append(epoch: number, loss: number): void {
    const last = this.series[this.series.length - 1];
    if (last && epoch <= last.epoch) return; // replays on reconnect are dropped
    this.series.push({ epoch, loss });
    this.draw();
  }

  reset(): void {
    this.series = [];
    this.draw();
  }

  get data(): readonly LossPoint[] {
    return this.series;
  }

  get pointCount(): number {
    return this.series.length;
  }

  /** the points actually drawn: thinned beyond maxDrawn, endpoints kept */
  renderPoints(): LossPoint[] {
    const n = this.series.length;
    if (n <= this.maxDrawn) return this.series.slice();
    const out: LossPoint[] = [];
    const step = (n - 1) / (this.maxDrawn - 1);
    for (let i = 0; i < this.maxDrawn; i++) {
      out.push(this.series[Math.round(i * step)]);
    }
    return out;
  }

  draw(): void {
    if (!this.canvas) return;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    const pts = this.renderPoints();
    if (pts.length === 0) return;
    let lo = Infinity;
    let hi = -Infinity;
    for (const p of pts) {
      lo = Math.min(lo, p.loss);
      hi = Math.max(hi, p.loss);
    }
    if (hi - lo < 1e-12) hi = lo + 1e-12;
    const x0 = pts[0].epoch;
    const x1 = Math.max(pts[pts.length - 1].epoch, x0 + 1);
    ctx.strokeStyle = "#4fc3f7";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    pts.forEach((p, i) => {
      const px = ((p.epoch - x0) / (x1 - x0)) * (width - 8) + 4;
      const py = height - 4 - ((p.loss - lo) / (hi - lo)) * (height - 8);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    ctx.fillStyle = "#9e9e9e";
    ctx.font = "10px sans-serif";
    ctx.fillText(hi.toPrecision(3), 4, 10);
    ctx.fillText(lo.toPrecision(3), 4, height - 6);
  }
}
