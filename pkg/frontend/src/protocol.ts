/** Wire protocol "vasim/1": frame types, canonical encoding, range clamping.
 *
 * One JSON object per WebSocket text message, canonically encoded (sorted
 * keys, compact separators) to match the server byte for byte. Units on the
 * wire are clinical: millitesla, rpm, millimetres.
 */

export const PROTOCOL_VERSION = "vasim/1";

/** Hard protocol ranges enforced by the server. */
export const MAGNITUDE_MT_RANGE: readonly [number, number] = [0, 50];
export const FREQUENCY_RPM_RANGE: readonly [number, number] = [0, 15000];

/** Console control ranges (tighter than the protocol, per the UI sliders). */
export const UI_MAGNITUDE_MT_MAX = 25;
export const UI_FREQUENCY_RPM_MAX = 12000;

export interface FieldBlock {
  magnitude_mT: number;
  frequency_rpm: number;
  axis?: [number, number, number];
  sense?: 1 | -1;
}

export interface SpinnerBlock {
  segment: number;
  s_mm: number;
  position_mm: [number, number, number];
}

export interface SacOverlay {
  sac: number;
  center_mm: [number, number];
  fill: number;
}

export interface FluoroBlock {
  polylines_mm: [number, number][][];
  marker_pair_mm: [[number, number], [number, number]];
  payload_opacity: number;
  sacs: SacOverlay[];
}

export interface MetricsBlock {
  flow_speed_mm_s?: number;
  released: number;
  occlusion: Record<string, number>;
}

export interface WireEvent {
  kind: string;
  tick: number;
  time_s: number;
  data: Record<string, unknown>;
}

export interface Snapshot {
  type: "SNAPSHOT";
  tick: number;
  time_s: number;
  mode: "IDLE" | "FLIP" | "SPIN" | "STEP_OUT" | "CAPTURED";
  field: FieldBlock;
  spinner: SpinnerBlock;
  fluoro?: FluoroBlock;
  metrics: MetricsBlock;
  events: WireEvent[];
}

export interface HelloAck {
  type: "HELLO_ACK";
  protocol: string;
  scenarios: string[];
  token: boolean;
}

export interface Ack {
  type: "ACK";
  for: string;
  tick: number;
  token?: boolean;
}

export interface ErrorFrame {
  type: "ERROR";
  code: string;
  message: string;
}

export interface ScenarioEnd {
  type: "SCENARIO_END";
  tick: number;
}

export type ServerFrame = Snapshot | HelloAck | Ack | ErrorFrame | ScenarioEnd;

export function clamp(x: number, lo: number, hi: number): number {
  if (Number.isNaN(x)) return lo;
  return Math.min(hi, Math.max(lo, x));
}

/** Canonical JSON: object keys sorted recursively, compact separators.
 * Matches the server's encoding so frames compare byte for byte. */
export function encodeFrame(frame: unknown): string {
  return JSON.stringify(sortKeys(frame));
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export function helloFrame(): { type: "HELLO"; protocol: string } {
  return { type: "HELLO", protocol: PROTOCOL_VERSION };
}

/** Parse one incoming message; returns null for anything unrenderable. */
export function parseServerFrame(text: string): ServerFrame | null {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch {
    return null;
  }
  if (obj === null || typeof obj !== "object") return null;
  const frame = obj as Record<string, unknown>;
  switch (frame.type) {
    case "SNAPSHOT":
      return isValidSnapshot(frame) ? (frame as unknown as Snapshot) : null;
    case "HELLO_ACK":
      return typeof frame.protocol === "string" &&
        Array.isArray(frame.scenarios) &&
        typeof frame.token === "boolean"
        ? (frame as unknown as HelloAck)
        : null;
    case "ACK":
      return typeof frame.for === "string" && typeof frame.tick === "number"
        ? (frame as unknown as Ack)
        : null;
    case "ERROR":
      return typeof frame.code === "string" && typeof frame.message === "string"
        ? (frame as unknown as ErrorFrame)
        : null;
    case "SCENARIO_END":
      return frame as unknown as ScenarioEnd;
    default:
      return null;
  }
}

function isValidSnapshot(frame: Record<string, unknown>): boolean {
  if (typeof frame.tick !== "number" || typeof frame.time_s !== "number")
    return false;
  if (typeof frame.mode !== "string") return false;
  const field = frame.field as Record<string, unknown> | undefined;
  if (!field || typeof field.magnitude_mT !== "number") return false;
  const spinner = frame.spinner as Record<string, unknown> | undefined;
  if (!spinner || typeof spinner.segment !== "number") return false;
  const metrics = frame.metrics as Record<string, unknown> | undefined;
  if (!metrics || typeof metrics.released !== "number") return false;
  if (frame.fluoro !== undefined) {
    const fluoro = frame.fluoro as Record<string, unknown>;
    if (!Array.isArray(fluoro.polylines_mm) ||
        !Array.isArray(fluoro.marker_pair_mm))
      return false;
  }
  return Array.isArray(frame.events);
}
