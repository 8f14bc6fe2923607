import { describe, expect, it, vi } from "vitest";
import { EventStream, JobMonitor, ProgressEvent_, TerminalEvent } from "../src/jobs.js";

class FakeStream implements EventStream {
  handlers = new Map<string, ((ev: { data: string }) => void)[]>();
  onerror: ((ev: unknown) => void) | null = null;
  closed = false;

  constructor(public url: string) {}

  addEventListener(type: string, handler: (ev: { data: string }) => void) {
    const list = this.handlers.get(type) ?? [];
    list.push(handler);
    this.handlers.set(type, list);
  }

  close() {
    this.closed = true;
  }

  emit(type: string, data: unknown) {
    for (const h of this.handlers.get(type) ?? []) {
      h({ data: JSON.stringify(data) });
    }
  }

  fail() {
    this.onerror?.(new Error("stream lost"));
  }
}

function harness() {
  const streams: FakeStream[] = [];
  const progress: ProgressEvent_[] = [];
  const terminal: TerminalEvent[] = [];
  const retries: number[] = [];
  const monitor = new JobMonitor(
    (fromEpoch) => `/events?from_epoch=${fromEpoch}`,
    {
      onProgress: (p) => progress.push(p),
      onTerminal: (t) => terminal.push(t),
      onRetry: (n) => retries.push(n),
    },
    (url) => {
      const s = new FakeStream(url);
      streams.push(s);
      return s;
    },
    0, // immediate retry in tests
  );
  return { monitor, streams, progress, terminal, retries };
}

describe("job monitor", () => {
  it("collects every progress event then the terminal state", () => {
    const h = harness();
    h.monitor.start();
    const s = h.streams[0];
    expect(s.url).toBe("/events?from_epoch=0");
    for (let epoch = 0; epoch < 5; epoch++) {
      s.emit("progress", { epoch, loss: 1 - epoch / 10 });
    }
    s.emit("state", { state: "done", result_ref: "results/j1.json", error: null });
    expect(h.progress.map((p) => p.epoch)).toEqual([0, 1, 2, 3, 4]);
    expect(h.terminal).toEqual([
      { state: "done", result_ref: "results/j1.json", error: null },
    ]);
    expect(s.closed).toBe(true);
  });

  it("reconnects with resume-from-epoch after a drop", async () => {
    const h = harness();
    h.monitor.start();
    const first = h.streams[0];
    first.emit("progress", { epoch: 0, loss: 0.9 });
    first.emit("progress", { epoch: 1, loss: 0.8 });
    first.fail();
    await new Promise((resolve) => setTimeout(resolve, 5));
    expect(h.streams).toHaveLength(2);
    const second = h.streams[1];
    expect(second.url).toBe("/events?from_epoch=2");
    // server replays everything; duplicates must be ignored
    second.emit("progress", { epoch: 1, loss: 0.8 });
    second.emit("progress", { epoch: 2, loss: 0.7 });
    second.emit("state", { state: "done", result_ref: "r", error: null });
    expect(h.progress.map((p) => p.epoch)).toEqual([0, 1, 2]);
    expect(h.retries).toEqual([1]);
  });

  it("gives up after repeated failures with a visible error", async () => {
    const h = harness();
    h.monitor.start();
    for (let i = 0; i < 30 && h.terminal.length === 0; i++) {
      h.streams[h.streams.length - 1].fail();
      await new Promise((resolve) => setTimeout(resolve, 2));
    }
    expect(h.terminal).toHaveLength(1);
    expect(h.terminal[0].state).toBe("failed");
    expect(h.terminal[0].error).toMatch(/stream lost/);
  });

  it("stops reconnecting once closed", async () => {
    const h = harness();
    h.monitor.start();
    h.monitor.close();
    h.streams[0].fail();
    await new Promise((resolve) => setTimeout(resolve, 5));
    expect(h.streams).toHaveLength(1);
  });
});
