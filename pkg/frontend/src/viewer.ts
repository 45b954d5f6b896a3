// Viewer session: wires transport, playback, input, persona editing and
// rendering together. Single-threaded: message handlers only enqueue; the
// render tick drains queues and draws.

import { InputLoop } from "./input.js";
import { PersonaEditor } from "./persona.js";
import { PlaybackBuffer } from "./playback.js";
import {
  parseServerMessage,
  skeletonFromMessage,
  ProtocolError,
  type PresetEntry,
  type ServerMessage,
  type SkeletonDef,
} from "./protocol.js";
import type { SkeletonRenderer } from "./render.js";
import type { Transport } from "./transport.js";

export interface ViewerStats {
  blockMs: number;
  deadlineMisses: number;
  personaId: string;
  framesRendered: number;
  errors: string[];
}

export class ViewerSession {
  playback = new PlaybackBuffer();
  input = new InputLoop();
  editor = new PersonaEditor();
  skeleton: SkeletonDef | null = null;
  presets: PresetEntry[] = [];
  stats: ViewerStats = {
    blockMs: 0,
    deadlineMisses: 0,
    personaId: "",
    framesRendered: 0,
    errors: [],
  };
  private pending: ServerMessage[] = [];

  constructor(private transport: Transport) {
    transport.onLine((line) => this.enqueue(line));
    this.input.setConnected(true);
  }

  /** Network callback: parse and queue; a bad message becomes an error
   * toast and the stream continues. */
  private enqueue(line: string): void {
    try {
      this.pending.push(parseServerMessage(line));
    } catch (e) {
      if (e instanceof ProtocolError) {
        this.stats.errors.push(e.message);
      } else {
        throw e;
      }
    }
  }

  private drain(): void {
    for (const msg of this.pending) {
      switch (msg.type) {
        case "skeleton":
          this.skeleton = skeletonFromMessage(msg);
          this.playback.fps = msg.fps;
          break;
        case "presets":
          this.presets = msg.personas;
          this.input.setPresets(msg.personas);
          if (msg.personas.length > 0) {
            this.editor.loadPreset(msg.personas[0]);
          }
          break;
        case "frames":
          this.playback.push(msg);
          break;
        case "status":
          this.stats.blockMs = msg.block_ms;
          this.stats.personaId = msg.persona_id;
          if (typeof msg.deadline_misses === "number") {
            this.stats.deadlineMisses = msg.deadline_misses;
          }
          break;
        case "error":
          this.stats.errors.push(`${msg.code}: ${msg.detail}`);
          break;
      }
    }
    this.pending = [];
  }

  keyDown(key: string): void {
    const persona = this.input.keyDown(key);
    if (persona) {
      this.input.dispatch(persona, (m) => this.transport.send(m));
      this.editor.loadPreset(this.presets[this.presets.findIndex(
        (p) => p.persona_id === persona.persona_id,
      )] ?? this.presets[0]);
    }
  }

  keyUp(key: string): void {
    this.input.keyUp(key);
  }

  /** One render tick: drain network, send input, advance playback, draw. */
  tick(dtSeconds: number, nowMs: number, renderer: SkeletonRenderer | null): boolean {
    this.drain();
    const control = this.input.frameTick();
    if (control) {
      this.input.dispatch(control, (m) => this.transport.send(m));
    }
    const persona = this.editor.poll(nowMs);
    if (persona) {
      this.input.dispatch(persona, (m) => this.transport.send(m));
    }
    const pose = this.playback.tick(dtSeconds);
    let drew = false;
    if (pose && this.skeleton && renderer) {
      renderer.draw(
        pose,
        this.skeleton,
        this.playback.buffering,
        `block ${this.stats.blockMs.toFixed(1)} ms | misses ${this.stats.deadlineMisses} | ${this.stats.personaId}`,
      );
      this.stats.framesRendered += 1;
      drew = true;
    } else if (pose) {
      this.stats.framesRendered += 1;
      drew = true;
    }
    this.input.endFrame();
    return drew;
  }
}
