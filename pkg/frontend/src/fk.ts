// Minimal client-side kinematics: 6D rotation decode (Gram-Schmidt) and
// forward kinematics over the joint tree. Used only for rendering; it must
// agree with the server's kinematics on the checked-in fixture.

import type { SkeletonDef } from "./protocol.js";

export type Vec3 = [number, number, number];
export type Mat3 = [Vec3, Vec3, Vec3]; // row-major

function norm(v: Vec3): number {
  return Math.hypot(v[0], v[1], v[2]);
}

function scale(v: Vec3, s: number): Vec3 {
  return [v[0] * s, v[1] * s, v[2] * s];
}

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

/** Decode the first-two-columns rotation encoding into a row-major matrix. */
export function rot6dToMatrix(r: number[]): Mat3 {
  const a: Vec3 = [r[0], r[1], r[2]];
  const b: Vec3 = [r[3], r[4], r[5]];
  const x = scale(a, 1 / Math.max(norm(a), 1e-8));
  let y = sub(b, scale(x, dot(x, b)));
  y = scale(y, 1 / Math.max(norm(y), 1e-8));
  const z = cross(x, y);
  // columns x, y, z -> rows
  return [
    [x[0], y[0], z[0]],
    [x[1], y[1], z[1]],
    [x[2], y[2], z[2]],
  ];
}

function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: Mat3 = [
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
  ];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out;
}

/** World-space joint positions for one pose. */
export function forwardKinematics(
  root: Vec3,
  rot6d: number[][],
  skeleton: SkeletonDef,
): Vec3[] {
  const j = skeleton.parents.length;
  const world: Mat3[] = new Array(j);
  const pos: Vec3[] = new Array(j);
  pos[0] = [root[0], root[1], root[2]];
  world[0] = rot6dToMatrix(rot6d[0]);
  for (let i = 1; i < j; i++) {
    const p = skeleton.parents[i];
    const off = skeleton.offsets[i] as Vec3;
    const local = rot6dToMatrix(rot6d[i]);
    pos[i] = addVec(pos[p], matVec(world[p], off));
    world[i] = matMul(world[p], local);
  }
  return pos;
}

function addVec(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}
