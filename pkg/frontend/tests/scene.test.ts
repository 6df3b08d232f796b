import { describe, expect, it } from "vitest";

import type { Snapshot } from "../src/protocol.js";
import { buildScene } from "../src/scene.js";

function snapshot(overrides: Partial<Snapshot> = {}): Snapshot {
  return {
    type: "SNAPSHOT",
    tick: 42,
    time_s: 0.042,
    mode: "SPIN",
    field: { magnitude_mT: 20, frequency_rpm: 8400, axis: [1, 0, 0], sense: 1 },
    spinner: { segment: 0, s_mm: 100, position_mm: [100, 0, 0] },
    fluoro: {
      polylines_mm: [
        [
          [0, 0],
          [1000, 0],
        ],
      ],
      marker_pair_mm: [
        [98, 0],
        [102, 0],
      ],
      payload_opacity: 0.4,
      sacs: [{ sac: 0, center_mm: [75, 15], fill: 0.95 }],
    },
    metrics: { flow_speed_mm_s: 12.5, released: 0.6, occlusion: { "0": 0.95 } },
    events: [],
    ...overrides,
  };
}

describe("buildScene", () => {
  it("marker pair matches the snapshot coordinates exactly", () => {
    const scene = buildScene(snapshot());
    expect(scene.markerPair).toEqual([
      [98, 0],
      [102, 0],
    ]);
  });

  it("is deterministic: same snapshot, deep-equal scene graph", () => {
    const s = snapshot();
    expect(buildScene(s)).toEqual(buildScene(s));
  });

  it("fully released payload draws markers only, no shading", () => {
    const s = snapshot({
      metrics: { released: 1, occlusion: {} },
    });
    s.fluoro!.payload_opacity = 0;
    const scene = buildScene(s);
    expect(scene.payload).toBeNull();
    expect(scene.markerPair).not.toBeNull();
  });

  it("partial release shades at the marker midpoint with snapshot opacity", () => {
    const scene = buildScene(snapshot());
    expect(scene.payload).toEqual({ center: [100, 0], opacity: 0.4 });
  });

  it("STEP_OUT raises a prominent warning", () => {
    expect(buildScene(snapshot({ mode: "STEP_OUT" })).warning).toMatch(
      /STEP-OUT/,
    );
    expect(buildScene(snapshot()).warning).toBeNull();
  });

  it("sac fill shading is proportional to occlusion", () => {
    const scene = buildScene(snapshot());
    expect(scene.sacs).toEqual([{ center: [75, 15], fill: 0.95 }]);
    expect(scene.sacs[0]!.fill).toBeGreaterThanOrEqual(0.95);
  });

  it("readouts expose mode, field, flow, release and occlusion", () => {
    const r = buildScene(snapshot()).readouts;
    expect(r.mode).toBe("SPIN");
    expect(r.magnitudeMT).toBe(20);
    expect(r.frequencyRpm).toBe(8400);
    expect(r.flowSpeedMmS).toBe(12.5);
    expect(r.releasedPct).toBeCloseTo(60);
    expect(r.occlusionPct["0"]).toBeCloseTo(95);
  });

  it("reduced snapshots without fluoro render readouts only", () => {
    const { fluoro: _omitted, ...rest } = snapshot();
    const scene = buildScene(rest as Snapshot);
    expect(scene.polylines).toEqual([]);
    expect(scene.markerPair).toBeNull();
    expect(scene.payload).toBeNull();
    expect(scene.readouts.mode).toBe("SPIN");
  });
});
