// Frame playback buffer: ordered by sequence number, renders at clip fps,
// interpolates only between received frames and never steps backwards.

import type { FramesMessage, PosePayload } from "./protocol.js";

export interface RenderPose {
  root: [number, number, number];
  rot6d: number[][];
}

interface BufferedFrame {
  seq: number;
  index: number;
  pose: PosePayload;
}

function lerpPose(a: PosePayload, b: PosePayload, t: number): RenderPose {
  const root: [number, number, number] = [
    a.root[0] + (b.root[0] - a.root[0]) * t,
    a.root[1] + (b.root[1] - a.root[1]) * t,
    a.root[2] + (b.root[2] - a.root[2]) * t,
  ];
  const rot6d = a.rot6d.map((row, j) => row.map((v, k) => v + (b.rot6d[j][k] - v) * t));
  return { root, rot6d };
}

export class PlaybackBuffer {
  private frames: BufferedFrame[] = [];
  private lastRenderedSeq = -1;
  private cursor = 0; // fractional frame index of the playhead
  private started = false;
  private lastPose: RenderPose | null = null;
  buffering = true;
  fps = 30;

  /** Frames older than the last rendered sequence number are discarded. */
  push(msg: FramesMessage): void {
    if (msg.seq <= this.lastRenderedSeq) {
      return;
    }
    this.fps = msg.fps;
    msg.poses.forEach((pose, i) => {
      this.frames.push({ seq: msg.seq, index: msg.start_index + i, pose });
    });
    this.frames.sort((a, b) => a.index - b.index);
  }

  get depth(): number {
    return this.frames.length;
  }

  /** Advance the playhead by dt seconds and return the pose to draw. */
  tick(dt: number): RenderPose | null {
    if (!this.started) {
      if (this.frames.length < 2) {
        this.buffering = true;
        return this.lastPose;
      }
      this.started = true;
      this.cursor = this.frames[0].index;
    }
    const target = this.cursor + dt * this.fps;
    const last = this.frames[this.frames.length - 1];
    if (last === undefined || target > last.index) {
      // starved: hold the last pose, show the indicator, do not extrapolate
      this.buffering = true;
      if (last !== undefined) {
        this.cursor = last.index;
        this.lastRenderedSeq = Math.max(this.lastRenderedSeq, last.seq);
        this.lastPose = lerpPose(last.pose, last.pose, 0);
      }
      return this.lastPose;
    }
    this.buffering = false;
    this.cursor = target;
    while (this.frames.length >= 2 && this.frames[1].index <= target) {
      this.frames.shift();
    }
    const a = this.frames[0];
    const b = this.frames.length > 1 ? this.frames[1] : a;
    const span = Math.max(b.index - a.index, 1);
    const t = Math.min(Math.max((target - a.index) / span, 0), 1);
    this.lastRenderedSeq = Math.max(this.lastRenderedSeq, a.seq);
    this.lastPose = lerpPose(a.pose, b.pose, t);
    return this.lastPose;
  }

  get renderedSeq(): number {
    return this.lastRenderedSeq;
  }
}
