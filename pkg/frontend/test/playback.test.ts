import { describe, expect, it } from "vitest";
import { PlaybackBuffer } from "../src/playback.js";
import type { FramesMessage } from "../src/protocol.js";

function frameMsg(seq: number, index: number, x: number): FramesMessage {
  return {
    type: "frames",
    seq,
    start_index: index,
    fps: 30,
    poses: [{ root: [x, 1, 0], rot6d: [[1, 0, 0, 0, 1, 0]] }],
  };
}

describe("playback buffer", () => {
  it("interpolates between received frames", () => {
    const buf = new PlaybackBuffer();
    buf.push(frameMsg(0, 0, 0));
    buf.push(frameMsg(1, 1, 1));
    buf.push(frameMsg(2, 2, 2));
    const a = buf.tick(0)!; // playhead at frame 0
    expect(a.root[0]).toBeCloseTo(0, 9);
    const b = buf.tick(0.5 / 30)!; // half a frame later
    expect(b.root[0]).toBeCloseTo(0.5, 9);
    expect(buf.buffering).toBe(false);
  });

  it("never renders a frame older than the last rendered seq", () => {
    const buf = new PlaybackBuffer();
    buf.push(frameMsg(5, 10, 10));
    buf.push(frameMsg(6, 11, 11));
    buf.tick(0);
    buf.tick(1 / 30);
    const before = buf.renderedSeq;
    buf.push(frameMsg(2, 3, 3)); // stale: must be discarded
    expect(buf.depth).toBeLessThanOrEqual(2);
    buf.tick(1 / 30);
    expect(buf.renderedSeq).toBeGreaterThanOrEqual(before);
  });

  it("holds the last frame and reports buffering when starved", () => {
    const buf = new PlaybackBuffer();
    buf.push(frameMsg(0, 0, 0));
    buf.push(frameMsg(1, 1, 1));
    buf.tick(0);
    const held = buf.tick(10)!; // way past the buffer: no extrapolation
    expect(held.root[0]).toBeCloseTo(1, 9);
    expect(buf.buffering).toBe(true);
    const again = buf.tick(1 / 30)!;
    expect(again.root[0]).toBeCloseTo(1, 9);
  });

  it("waits for two frames before starting", () => {
    const buf = new PlaybackBuffer();
    expect(buf.tick(1 / 30)).toBeNull();
    buf.push(frameMsg(0, 0, 0));
    expect(buf.tick(1 / 30)).toBeNull();
    expect(buf.buffering).toBe(true);
    buf.push(frameMsg(1, 1, 1));
    expect(buf.tick(0)).not.toBeNull();
  });
});
