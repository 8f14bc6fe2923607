/**
 * Job progress monitoring over server-sent events.
 *
 * One subscription per visible job; a dropped stream reconnects with
 * resume-from-epoch so no progress points are lost or duplicated.
 */

export interface ProgressEvent_ {
  epoch: number;
  loss: number;
}

export interface TerminalEvent {
  state: "done" | "failed";
  result_ref: string | null;
  error: string | null;
}

/** the subset of EventSource the monitor needs; injectable for tests */
export interface EventStream {
  addEventListener(type: string, handler: (ev: { data: string }) => void): void;
  close(): void;
  // `any` keeps the native EventSource assignable despite its own event type
  onerror: ((ev: any) => void) | null;
}

export type StreamFactory = (url: string) => EventStream;

export interface MonitorHooks {
  onProgress(p: ProgressEvent_): void;
  onTerminal(t: TerminalEvent): void;
  onRetry?(attempt: number): void;
}

const MAX_RETRIES = 20;

export class JobMonitor {
  private lastEpoch = -1;
  private stream: EventStream | null = null;
  private retries = 0;
  private closed = false;

  constructor(
    private urlFor: (fromEpoch: number) => string,
    private hooks: MonitorHooks,
    private factory: StreamFactory,
    private retryDelayMs = 1000,
  ) {}

  start(): void {
    this.open(this.lastEpoch + 1);
  }

  private open(fromEpoch: number): void {
    if (this.closed) return;
    const stream = this.factory(this.urlFor(fromEpoch));
    this.stream = stream;
    stream.addEventListener("progress", (ev) => {
      const p = JSON.parse(ev.data) as ProgressEvent_;
      if (p.epoch <= this.lastEpoch) return;
      this.lastEpoch = p.epoch;
      this.retries = 0;
      this.hooks.onProgress(p);
    });
    stream.addEventListener("state", (ev) => {
      const t = JSON.parse(ev.data) as TerminalEvent;
      this.close();
      this.hooks.onTerminal(t);
    });
    stream.onerror = () => {
      if (this.closed) return;
      stream.close();
      if (this.retries >= MAX_RETRIES) {
        this.close();
        this.hooks.onTerminal({
          state: "failed",
          result_ref: null,
          error: "event stream lost",
        });
        return;
      }
      this.retries += 1;
      this.hooks.onRetry?.(this.retries);
      setTimeout(() => this.open(this.lastEpoch + 1), this.retryDelayMs);
    };
  }

  close(): void {
    this.closed = true;
    this.stream?.close();
    this.stream = null;
  }
}
