// Keyboard state to control messages: WASD moves, Left Shift sprints, TAB
// cycles persona presets. At most one control message per rendered frame;
// input generated while disconnected is buffered for up to one second.

import type { ClientMessage, ControlMessage, PersonaMessage, PresetEntry } from "./protocol.js";

const INPUT_BUFFER_SECONDS = 1.0;

export class InputLoop {
  private held = new Set<string>();
  private presets: PresetEntry[] = [];
  private presetIndex = -1;
  private sentThisFrame = false;
  private lastControl = JSON.stringify([null, false]); // idle: nothing sent yet
  private buffered: ClientMessage[] = [];
  private connected = false;
  fps = 30;

  setPresets(presets: PresetEntry[]): void {
    this.presets = presets;
  }

  setConnected(connected: boolean): ClientMessage[] {
    this.connected = connected;
    if (!connected) {
      return [];
    }
    const out = this.buffered;
    this.buffered = [];
    return out;
  }

  keyDown(key: string): PersonaMessage | null {
    if (key === "Tab") {
      return this.cyclePreset();
    }
    this.held.add(key.toLowerCase() === "shift" ? "Shift" : key.toLowerCase());
    return null;
  }

  keyUp(key: string): void {
    this.held.delete(key.toLowerCase() === "shift" ? "Shift" : key.toLowerCase());
  }

  private cyclePreset(): PersonaMessage | null {
    if (this.presets.length === 0) {
      return null;
    }
    this.presetIndex = (this.presetIndex + 1) % this.presets.length;
    const p = this.presets[this.presetIndex];
    return { type: "persona", persona_id: p.persona_id, beta: p.beta, text: p.text };
  }

  /** The control message for the current key state, or null when idle. */
  currentControl(): ControlMessage {
    let x = 0;
    let z = 0;
    if (this.held.has("w")) z += 1;
    if (this.held.has("s")) z -= 1;
    if (this.held.has("d")) x += 1;
    if (this.held.has("a")) x -= 1;
    let move: [number, number] | null = null;
    const n = Math.hypot(x, z);
    if (n > 0) {
      move = [x / n, z / n];
    }
    return { type: "control", move, sprint: this.held.has("Shift") };
  }

  /** Called once per rendered frame; emits at most one control message. */
  frameTick(): ControlMessage | null {
    if (this.sentThisFrame) {
      return null;
    }
    const msg = this.currentControl();
    const key = JSON.stringify([msg.move, msg.sprint]);
    if (key === this.lastControl) {
      return null;
    }
    this.lastControl = key;
    this.sentThisFrame = true;
    return msg;
  }

  endFrame(): void {
    this.sentThisFrame = false;
  }

  /** Route a message to the transport or the (bounded) reconnect buffer. */
  dispatch(msg: ClientMessage, send: (m: ClientMessage) => void): void {
    if (this.connected) {
      send(msg);
      return;
    }
    this.buffered.push(msg);
    const cap = Math.ceil(INPUT_BUFFER_SECONDS * this.fps);
    while (this.buffered.length > cap) {
      this.buffered.shift();
    }
  }

  get bufferedCount(): number {
    return this.buffered.length;
  }
}

/** Reconnect delay schedule: 0.5 s doubling up to 5 s. */
export function backoffDelay(attempt: number): number {
  return Math.min(0.5 * 2 ** attempt, 5.0);
}
