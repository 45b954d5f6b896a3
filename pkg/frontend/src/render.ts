// Skeleton rendering: bones as lines from client-side FK, simple fixed-tilt
// projection, camera following the root. Drawing goes through a minimal
// surface interface so tests can count draw calls without a DOM.

import { forwardKinematics, type Vec3 } from "./fk.js";
import type { SkeletonDef } from "./protocol.js";
import type { RenderPose } from "./playback.js";

export interface DrawSurface {
  width: number;
  height: number;
  clear(): void;
  line(x1: number, y1: number, x2: number, y2: number, width: number): void;
  circle(x: number, y: number, r: number): void;
  text(s: string, x: number, y: number): void;
}

const CAM_YAW = 0.6; // radians
const CAM_PITCH = 0.35;
const SCALE = 180; // pixels per meter at default zoom

export interface Camera {
  x: number;
  z: number;
}

export function project(p: Vec3, cam: Camera, surface: DrawSurface): [number, number] {
  const dx = p[0] - cam.x;
  const dz = p[2] - cam.z;
  const rx = dx * Math.cos(CAM_YAW) - dz * Math.sin(CAM_YAW);
  const rz = dx * Math.sin(CAM_YAW) + dz * Math.cos(CAM_YAW);
  const sx = surface.width / 2 + rx * SCALE;
  const sy = surface.height * 0.75 - (p[1] * Math.cos(CAM_PITCH) + rz * Math.sin(CAM_PITCH)) * SCALE;
  return [sx, sy];
}

export class SkeletonRenderer {
  camera: Camera = { x: 0, z: 0 };
  drawnFrames = 0;

  constructor(
    private surface: DrawSurface,
    private followGain = 0.15,
  ) {}

  draw(pose: RenderPose, skeleton: SkeletonDef, buffering: boolean, statusLine: string): void {
    const pos = forwardKinematics(pose.root, pose.rot6d, skeleton);
    this.camera.x += (pose.root[0] - this.camera.x) * this.followGain;
    this.camera.z += (pose.root[2] - this.camera.z) * this.followGain;
    this.surface.clear();
    for (let j = 1; j < skeleton.parents.length; j++) {
      const a = project(pos[skeleton.parents[j]], this.camera, this.surface);
      const b = project(pos[j], this.camera, this.surface);
      this.surface.line(a[0], a[1], b[0], b[1], 3);
    }
    const rootPt = project(pos[0], this.camera, this.surface);
    this.surface.circle(rootPt[0], rootPt[1], 4);
    if (buffering) {
      this.surface.text("buffering...", 12, 24);
    }
    if (statusLine) {
      this.surface.text(statusLine, 12, this.surface.height - 12);
    }
    this.drawnFrames += 1;
  }
}
