import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { forwardKinematics, rot6dToMatrix, type Vec3 } from "../src/fk.js";
import type { SkeletonDef } from "../src/protocol.js";

interface FkFixture {
  skeleton: {
    joint_names: string[];
    parents: number[];
    offsets: number[][];
    foot_indices: number[];
  };
  pose: { root: number[]; rot6d: number[][] };
  positions: number[][];
}

const fixture: FkFixture = JSON.parse(
  readFileSync(new URL("../fixtures/fk_fixture.json", import.meta.url), "utf-8"),
);

function toSkeleton(f: FkFixture): SkeletonDef {
  return {
    jointNames: f.skeleton.joint_names,
    parents: f.skeleton.parents,
    offsets: f.skeleton.offsets,
    footIndices: f.skeleton.foot_indices,
  };
}

describe("rot6dToMatrix", () => {
  it("decodes the identity", () => {
    const m = rot6dToMatrix([1, 0, 0, 0, 1, 0]);
    expect(m[0]).toEqual([1, 0, 0]);
    expect(m[1]).toEqual([0, 1, 0]);
    expect(m[2]).toEqual([0, 0, 1]);
  });

  it("produces orthonormal matrices", () => {
    const m = rot6dToMatrix([0.3, -0.8, 0.52, 0.77, 0.41, -0.49]);
    for (let i = 0; i < 3; i++) {
      let n = 0;
      for (let k = 0; k < 3; k++) n += m[k][i] * m[k][i];
      expect(Math.abs(n - 1)).toBeLessThan(1e-9);
    }
  });
});

describe("client forward kinematics", () => {
  it("matches the server FK fixture to < 1e-5 m", () => {
    const skeleton = toSkeleton(fixture);
    const pos = forwardKinematics(
      fixture.pose.root as Vec3,
      fixture.pose.rot6d,
      skeleton,
    );
    let worst = 0;
    for (let j = 0; j < pos.length; j++) {
      for (let k = 0; k < 3; k++) {
        worst = Math.max(worst, Math.abs(pos[j][k] - fixture.positions[j][k]));
      }
    }
    expect(worst).toBeLessThan(1e-5);
  });

  it("translates with the root", () => {
    const skeleton = toSkeleton(fixture);
    const base = forwardKinematics([0, 0, 0], fixture.pose.rot6d, skeleton);
    const moved = forwardKinematics([1, 2, 3], fixture.pose.rot6d, skeleton);
    for (let j = 0; j < base.length; j++) {
      expect(moved[j][0] - base[j][0]).toBeCloseTo(1, 9);
      expect(moved[j][1] - base[j][1]).toBeCloseTo(2, 9);
      expect(moved[j][2] - base[j][2]).toBeCloseTo(3, 9);
    }
  });
});
