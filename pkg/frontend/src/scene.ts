/** Pure scene construction: snapshot in, drawable scene graph out.
 *
 * No client-side physics and no interpolation — every drawn pose comes
 * verbatim from a snapshot, so the same snapshot always yields the same
 * scene graph (deep-equal, suitable for snapshot testing).
 */

import type { Snapshot } from "./protocol.js";

export interface Readouts {
  mode: string;
  magnitudeMT: number;
  frequencyRpm: number;
  flowSpeedMmS: number | null;
  releasedPct: number;
  occlusionPct: Record<string, number>;
  timeS: number;
  tick: number;
}

export interface SceneGraph {
  /** Vessel centerlines in view-plane mm, one polyline per segment. */
  polylines: [number, number][][];
  /** The spinner's two radiopaque end markers, view-plane mm (exactly the
   * snapshot's marker pair; null when the snapshot carries no fluoro block). */
  markerPair: [[number, number], [number, number]] | null;
  /** Payload shading at the marker midpoint; null once fully released or
   * when no payload is loaded. */
  payload: { center: [number, number]; opacity: number } | null;
  /** Aneurysm sacs with proportional fill shading. */
  sacs: { center: [number, number]; fill: number }[];
  readouts: Readouts;
  /** Prominent warning line, e.g. on step-out desynchronization. */
  warning: string | null;
}

export function buildScene(snapshot: Snapshot): SceneGraph {
  const fluoro = snapshot.fluoro ?? null;
  const markerPair = fluoro ? fluoro.marker_pair_mm : null;

  let payload: SceneGraph["payload"] = null;
  if (fluoro && markerPair && fluoro.payload_opacity > 0) {
    payload = {
      center: [
        (markerPair[0][0] + markerPair[1][0]) / 2,
        (markerPair[0][1] + markerPair[1][1]) / 2,
      ],
      opacity: fluoro.payload_opacity,
    };
  }

  const occlusionPct: Record<string, number> = {};
  for (const [sid, occ] of Object.entries(snapshot.metrics.occlusion)) {
    occlusionPct[sid] = occ * 100;
  }

  return {
    polylines: fluoro ? fluoro.polylines_mm : [],
    markerPair,
    payload,
    sacs: (fluoro?.sacs ?? []).map((s) => ({
      center: s.center_mm,
      fill: s.fill,
    })),
    readouts: {
      mode: snapshot.mode,
      magnitudeMT: snapshot.field.magnitude_mT,
      frequencyRpm: snapshot.field.frequency_rpm,
      flowSpeedMmS: snapshot.metrics.flow_speed_mm_s ?? null,
      releasedPct: snapshot.metrics.released * 100,
      occlusionPct,
      timeS: snapshot.time_s,
      tick: snapshot.tick,
    },
    warning:
      snapshot.mode === "STEP_OUT"
        ? "STEP-OUT: spinner desynchronized — reduce frequency or raise field"
        : null,
  };
}
