/** Control intents: pointer/slider state mapped to clamped command frames.
 *
 * A 2-D pointer cannot specify a 3-D axis, so the rotation axis is the
 * in-plane drag vector plus a separate out-of-plane tilt control. Every
 * outbound numeric value is clamped to the protocol ranges before send, and
 * command emission is rate-limited to 30 messages per second.
 */

import {
  FREQUENCY_RPM_RANGE,
  MAGNITUDE_MT_RANGE,
  UI_FREQUENCY_RPM_MAX,
  UI_MAGNITUDE_MT_MAX,
  clamp,
} from "./protocol.js";

export interface ControlIntent {
  /** In-plane axis components from pointer drag (view-plane x, y). */
  inPlane: [number, number];
  /** Out-of-plane tilt component (view normal), set by wheel/slider. */
  tilt: number;
  magnitudeMT: number;
  frequencyRpm: number;
  sense: 1 | -1;
  aspiration: boolean;
}

export const DEFAULT_INTENT: ControlIntent = {
  inPlane: [1, 0],
  tilt: 0,
  magnitudeMT: 0,
  frequencyRpm: 0,
  sense: 1,
  aspiration: false,
};

/** Unit 3-D rotation axis from the in-plane drag and tilt components.
 * Degenerate (zero) input falls back to the in-plane x direction. */
export function axisFromIntent(intent: ControlIntent): [number, number, number] {
  const [x, y] = intent.inPlane;
  const z = intent.tilt;
  const norm = Math.hypot(x, y, z);
  if (!Number.isFinite(norm) || norm === 0) return [1, 0, 0];
  return [x / norm, y / norm, z / norm];
}

/** Drag vector (screen px) to an in-plane axis; screen y points down. */
export function dragToInPlane(dx: number, dy: number): [number, number] {
  const norm = Math.hypot(dx, dy);
  if (!Number.isFinite(norm) || norm === 0) return [1, 0];
  return [dx / norm, -dy / norm];
}

/** Build a SET_FIELD frame with every value clamped into protocol range. */
export function setFieldFrame(intent: ControlIntent): {
  type: "SET_FIELD";
  axis: [number, number, number];
  magnitude_mT: number;
  frequency_rpm: number;
  sense: 1 | -1;
} {
  const uiMag = Math.min(UI_MAGNITUDE_MT_MAX, MAGNITUDE_MT_RANGE[1]);
  const uiFreq = Math.min(UI_FREQUENCY_RPM_MAX, FREQUENCY_RPM_RANGE[1]);
  return {
    type: "SET_FIELD",
    axis: axisFromIntent(intent),
    magnitude_mT: clamp(intent.magnitudeMT, MAGNITUDE_MT_RANGE[0], uiMag),
    frequency_rpm: clamp(intent.frequencyRpm, FREQUENCY_RPM_RANGE[0], uiFreq),
    sense: intent.sense === -1 ? -1 : 1,
  };
}

export function toggleAspirationFrame(on: boolean): {
  type: "TOGGLE_ASPIRATION";
  on: boolean;
} {
  return { type: "TOGGLE_ASPIRATION", on };
}

/** Rate limiter: leading send immediately, trailing send coalesced so the
 * output never exceeds maxPerSecond messages per second and the last intent
 * always reaches the wire. */
export class Debouncer {
  private readonly intervalMs: number;
  private lastSent = -Infinity;
  private pending: (() => void) | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    maxPerSecond = 30,
    private readonly now: () => number = () => Date.now(),
  ) {
    this.intervalMs = 1000 / maxPerSecond;
  }

  submit(send: () => void): void {
    const t = this.now();
    if (t - this.lastSent >= this.intervalMs) {
      this.lastSent = t;
      send();
      return;
    }
    this.pending = send;
    if (this.timer === null) {
      const wait = this.intervalMs - (t - this.lastSent);
      this.timer = setTimeout(() => this.flush(), wait);
    }
  }

  private flush(): void {
    this.timer = null;
    if (this.pending !== null) {
      const send = this.pending;
      this.pending = null;
      this.lastSent = this.now();
      send();
    }
  }

  dispose(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.pending = null;
  }
}
