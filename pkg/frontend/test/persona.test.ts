import { describe, expect, it } from "vitest";
import { PersonaEditor } from "../src/persona.js";

describe("persona editor", () => {
  it("slider edit emits after the debounce window", () => {
    const ed = new PersonaEditor();
    expect(ed.setBeta(0, 1.5, 1000)).toBe(true);
    expect(ed.poll(1100)).toBeNull(); // still inside the 250 ms window
    const msg = ed.poll(1251)!;
    expect(msg.type).toBe("persona");
    expect(msg.beta[0]).toBe(1.5);
    expect(ed.poll(1300)).toBeNull(); // nothing new to send
  });

  it("text edits are included", () => {
    const ed = new PersonaEditor();
    ed.setText("a tired elderly man", 0);
    const msg = ed.poll(300)!;
    expect(msg.text).toBe("a tired elderly man");
  });

  it("rapid scrubbing emits at most 4 messages per second", () => {
    const ed = new PersonaEditor();
    let sent = 0;
    let t = 0;
    for (let i = 0; i < 300; i++) {
      t = i * 10; // an edit every 10 ms for 3 seconds
      ed.setBeta(3, Math.sin(i), t);
      if (ed.poll(t)) sent += 1;
    }
    // scrubbing never settles, so nothing is emitted mid-drag...
    expect(sent).toBe(0);
    // ...and one message goes out when the user stops
    expect(ed.poll(t + 251)).not.toBeNull();
  });

  it("emits at most 4/s under periodic pauses", () => {
    const ed = new PersonaEditor();
    let sent = 0;
    for (let s = 0; s < 10; s++) {
      const base = s * 1000;
      ed.setBeta(0, s, base);
      for (let t = base; t <= base + 1000; t += 50) {
        if (ed.poll(t)) sent += 1;
      }
    }
    expect(sent / 10).toBeLessThanOrEqual(4);
  });

  it("blocks non-finite values", () => {
    const ed = new PersonaEditor();
    expect(ed.setBeta(0, Number.NaN, 0)).toBe(false);
    expect(ed.setBeta(0, Infinity, 0)).toBe(false);
    expect(ed.poll(1000)).toBeNull();
    expect(ed.beta[0]).toBe(0);
  });

  it("loads presets without emitting", () => {
    const ed = new PersonaEditor();
    ed.loadPreset({ persona_id: "p1", beta: new Array(10).fill(0.2), text: "x" });
    expect(ed.poll(5000)).toBeNull();
    expect(ed.personaId).toBe("p1");
  });
});
