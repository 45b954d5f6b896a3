// Transports: a live WebSocket (through the ws<->tcp bridge) and a mock
// replaying a recorded session transcript. The viewer core only sees this
// interface, so tests run without any server.

import type { ClientMessage } from "./protocol.js";

export interface Transport {
  onLine(handler: (line: string) => void): void;
  onClose(handler: () => void): void;
  send(msg: ClientMessage): void;
  close(): void;
}

export class WebSocketTransport implements Transport {
  private ws: WebSocket;
  private lineHandler: (line: string) => void = () => {};
  private closeHandler: () => void = () => {};

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onmessage = (ev) => {
      for (const line of String(ev.data).split("\n")) {
        if (line.trim()) {
          this.lineHandler(line);
        }
      }
    };
    this.ws.onclose = () => this.closeHandler();
    this.ws.onerror = () => this.closeHandler();
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  send(msg: ClientMessage): void {
    if (this.ws.readyState === 1) {
      this.ws.send(JSON.stringify(msg) + "\n");
    }
  }

  close(): void {
    this.ws.close();
  }
}

export interface TranscriptLine {
  at: number; // seconds since session start
  line: string; // raw wire message JSON
}

/** Parse the checked-in transcript: newline-delimited messages, each
 * wrapped as {"at": seconds, "msg": {...}}. */
export function parseTranscript(text: string): TranscriptLine[] {
  const out: TranscriptLine[] = [];
  for (const raw of text.split("\n")) {
    if (!raw.trim()) continue;
    const doc = JSON.parse(raw) as { at: number; msg: unknown };
    out.push({ at: doc.at, line: JSON.stringify(doc.msg) });
  }
  return out;
}

/** Replays a transcript against a virtual clock; sent messages are recorded
 * so tests can assert on them. */
export class MockTransport implements Transport {
  private lineHandler: (line: string) => void = () => {};
  private closeHandler: () => void = () => {};
  private cursor = 0;
  sent: ClientMessage[] = [];

  constructor(private transcript: TranscriptLine[]) {}

  /** Deliver every message with timestamp <= now (seconds). */
  advanceTo(nowSeconds: number): void {
    while (
      this.cursor < this.transcript.length &&
      this.transcript[this.cursor].at <= nowSeconds
    ) {
      this.lineHandler(this.transcript[this.cursor].line);
      this.cursor += 1;
    }
  }

  get exhausted(): boolean {
    return this.cursor >= this.transcript.length;
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  send(msg: ClientMessage): void {
    this.sent.push(msg);
  }

  close(): void {
    this.closeHandler();
  }
}
