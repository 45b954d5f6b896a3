// Wire protocol: newline-delimited JSON messages, every server message
// carries a monotonically increasing sequence number.

export interface SkeletonDef {
  jointNames: string[];
  parents: number[];
  offsets: number[][]; // [J][3] rest offsets, meters
  footIndices: number[];
}

export interface PosePayload {
  root: [number, number, number];
  rot6d: number[][]; // [J][6]
}

export interface FramesMessage {
  type: "frames";
  seq: number;
  start_index: number;
  fps: number;
  poses: PosePayload[];
}

export interface StatusMessage {
  type: "status";
  seq: number;
  block_ms: number;
  persona_id: string;
  deadline_misses?: number;
}

export interface SkeletonMessage {
  type: "skeleton";
  seq: number;
  fps: number;
  joint_names: string[];
  parents: number[];
  offsets: number[][];
  foot_indices: number[];
}

export interface PresetEntry {
  persona_id: string;
  beta: number[];
  text: string;
}

export interface PresetsMessage {
  type: "presets";
  seq: number;
  personas: PresetEntry[];
}

export interface ErrorMessage {
  type: "error";
  seq: number;
  code: string;
  detail: string;
}

export type ServerMessage =
  | FramesMessage
  | StatusMessage
  | SkeletonMessage
  | PresetsMessage
  | ErrorMessage;

export interface ControlMessage {
  type: "control";
  move: [number, number] | null;
  sprint: boolean;
  facing?: number;
}

export interface PersonaMessage {
  type: "persona";
  persona_id?: string;
  beta: number[];
  text?: string;
  embedding?: number[];
  identifier?: string;
}

export interface SeedMessage {
  type: "seed";
  value: number;
}

export type ClientMessage = ControlMessage | PersonaMessage | SeedMessage;

export class ProtocolError extends Error {}

const SERVER_TYPES = new Set(["frames", "status", "skeleton", "presets", "error"]);

export function parseServerMessage(line: string): ServerMessage {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch {
    throw new ProtocolError(`malformed JSON: ${line.slice(0, 80)}`);
  }
  const msg = doc as { type?: string; seq?: number };
  if (!msg || typeof msg.type !== "string" || !SERVER_TYPES.has(msg.type)) {
    throw new ProtocolError(`unknown message type: ${String(msg?.type)}`);
  }
  if (typeof msg.seq !== "number") {
    throw new ProtocolError("message missing sequence number");
  }
  if (msg.type === "frames") {
    const f = msg as FramesMessage;
    if (!Array.isArray(f.poses) || f.poses.length === 0) {
      throw new ProtocolError("frames message without poses");
    }
    for (const p of f.poses) {
      if (!Array.isArray(p.root) || p.root.length !== 3 || !Array.isArray(p.rot6d)) {
        throw new ProtocolError("bad pose payload");
      }
    }
  }
  return msg as ServerMessage;
}

export function skeletonFromMessage(msg: SkeletonMessage): SkeletonDef {
  return {
    jointNames: msg.joint_names,
    parents: msg.parents,
    offsets: msg.offsets,
    footIndices: msg.foot_indices,
  };
}
