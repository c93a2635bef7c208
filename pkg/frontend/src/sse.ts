// Server-sent-event client over streaming fetch. The server numbers
// events per session and honors Last-Event-ID, so a reconnect resumes
// exactly after the last event this client saw; anything replayed is
// filtered here as a second line of defense.

export type StreamEvent = {
  id: number;
  event: string;
  data: unknown;
};

export type StreamHandlers = {
  onEvent: (ev: StreamEvent) => void;
  onDegrade?: () => void;
  onReconnect?: () => void;
  onEnd?: () => void;
};

type FetchFn = typeof fetch;

function parseFrames(buffer: string): { frames: string[]; rest: string } {
  const parts = buffer.split("\n\n");
  const rest = parts.pop() ?? "";
  return { frames: parts, rest };
}

export class EventStream {
  lastEventId = 0;
  private stopped = false;
  private controller: AbortController | null = null;
  private fetchFn: FetchFn;
  private retryMs: number;
  private running: Promise<void> | null = null;

  constructor(
    private url: string,
    private handlers: StreamHandlers,
    opts: { fetchFn?: FetchFn; retryMs?: number; lastEventId?: number } = {},
  ) {
    this.fetchFn = opts.fetchFn ?? globalThis.fetch.bind(globalThis);
    this.retryMs = opts.retryMs ?? 2000;
    this.lastEventId = opts.lastEventId ?? 0;
  }

  start(): Promise<void> {
    if (!this.running) this.running = this.loop();
    return this.running;
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  // Sever the current connection without stopping the client, as a
  // network drop would; the loop degrades and then reconnects.
  kill(): void {
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    let first = true;
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const resp = await this.fetchFn(this.url, {
          signal: this.controller.signal,
          headers: this.lastEventId > 0 ? { "Last-Event-ID": String(this.lastEventId) } : {},
        });
        if (!resp.ok || !resp.body) throw new Error(`stream HTTP ${resp.status}`);
        if (!first) this.handlers.onReconnect?.();
        first = false;
        const ended = await this.consume(resp.body, this.controller.signal);
        if (ended) {
          this.handlers.onEnd?.();
          return;
        }
        throw new Error("stream closed before end");
      } catch (err) {
        if (this.stopped) return;
        this.handlers.onDegrade?.();
        await new Promise((resolve) => setTimeout(resolve, this.retryMs));
      }
    }
  }

  private async consume(body: ReadableStream<Uint8Array>, signal: AbortSignal): Promise<boolean> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    // Not every fetch implementation rejects a pending read when its
    // signal aborts, so every read races the signal explicitly.
    const aborted = new Promise<never>((_, reject) => {
      const fail = () => reject(new Error("stream aborted"));
      if (signal.aborted) fail();
      else signal.addEventListener("abort", fail, { once: true });
    });
    aborted.catch(() => {}); // silence post-settlement rejections
    try {
      while (true) {
        const { done, value } = await Promise.race([reader.read(), aborted]);
        if (done) return false;
        buffer += decoder.decode(value, { stream: true });
        const { frames, rest } = parseFrames(buffer);
        buffer = rest;
        for (const frame of frames) {
          if (this.dispatch(frame)) return true;
        }
      }
    } finally {
      reader.cancel().catch(() => {});
    }
  }

  private dispatch(frame: string): boolean {
    let id: number | null = null;
    let event = "message";
    const dataLines: string[] = [];
    for (const line of frame.split("\n")) {
      if (line.startsWith("id: ")) id = Number(line.slice(4));
      else if (line.startsWith("event: ")) event = line.slice(7).trim();
      else if (line.startsWith("data: ")) dataLines.push(line.slice(6));
    }
    if (event === "end") return true;
    if (dataLines.length === 0) return false; // retry hints, comments
    if (id !== null) {
      if (id <= this.lastEventId) return false; // replayed event
      this.lastEventId = id;
    }
    let data: unknown = null;
    try {
      data = JSON.parse(dataLines.join("\n"));
    } catch {
      return false;
    }
    this.handlers.onEvent({ id: id ?? 0, event, data });
    return false;
  }
}
