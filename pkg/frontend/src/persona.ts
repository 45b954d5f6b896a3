// Persona editor: 10 shape sliders plus a trait text box. Edits debounce
// for 250 ms before emitting a persona message, so scrubbing a slider sends
// at most 4 messages per second; non-finite slider values are blocked.

import type { PersonaMessage, PresetEntry } from "./protocol.js";

export const DEBOUNCE_MS = 250;

export class PersonaEditor {
  beta: number[] = new Array(10).fill(0);
  text = "";
  personaId = "custom";
  private dirty = false;
  private lastEditAt = -Infinity;
  private emitted: PersonaMessage | null = null;

  loadPreset(preset: PresetEntry): void {
    this.beta = [...preset.beta];
    this.text = preset.text;
    this.personaId = preset.persona_id;
    this.dirty = false;
  }

  setBeta(index: number, value: number, nowMs: number): boolean {
    if (!Number.isFinite(value) || index < 0 || index >= 10) {
      return false;
    }
    this.beta[index] = value;
    this.dirty = true;
    this.lastEditAt = nowMs;
    return true;
  }

  setText(text: string, nowMs: number): void {
    this.text = text;
    this.dirty = true;
    this.lastEditAt = nowMs;
  }

  /** Poll from the render loop; returns a message once edits settle. */
  poll(nowMs: number): PersonaMessage | null {
    if (!this.dirty || nowMs - this.lastEditAt < DEBOUNCE_MS) {
      return null;
    }
    this.dirty = false;
    this.emitted = {
      type: "persona",
      persona_id: this.personaId,
      beta: [...this.beta],
      text: this.text || undefined,
    };
    return this.emitted;
  }
}
