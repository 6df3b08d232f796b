/** Thin canvas layer: draws a SceneGraph with a fluoroscopy look —
 * inverted grayscale, light background, dark vessels and markers. All
 * geometry comes in scene (mm) coordinates; this module only maps mm to
 * pixels and issues draw calls.
 */

import type { SceneGraph } from "./scene.js";

export interface ViewTransform {
  scale: number; // px per mm
  offsetX: number; // px
  offsetY: number; // px
}

/** Fit the scene's polylines into the canvas with a margin. */
export function fitView(
  scene: SceneGraph,
  width: number,
  height: number,
  marginPx = 24,
): ViewTransform {
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (const line of scene.polylines) {
    for (const [x, y] of line) {
      minX = Math.min(minX, x);
      minY = Math.min(minY, y);
      maxX = Math.max(maxX, x);
      maxY = Math.max(maxY, y);
    }
  }
  if (!Number.isFinite(minX)) return { scale: 1, offsetX: 0, offsetY: 0 };
  const spanX = Math.max(maxX - minX, 1e-6);
  const spanY = Math.max(maxY - minY, 1e-6);
  const scale = Math.min(
    (width - 2 * marginPx) / spanX,
    (height - 2 * marginPx) / spanY,
  );
  return {
    scale,
    offsetX: marginPx - minX * scale + (width - 2 * marginPx - spanX * scale) / 2,
    offsetY: marginPx - minY * scale + (height - 2 * marginPx - spanY * scale) / 2,
  };
}

export function toPx(
  view: ViewTransform,
  point: [number, number],
): [number, number] {
  return [point[0] * view.scale + view.offsetX, point[1] * view.scale + view.offsetY];
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  scene: SceneGraph,
  view: ViewTransform,
): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = "#e8e8e8";
  ctx.fillRect(0, 0, width, height);

  // vessels: soft dark lumen
  ctx.strokeStyle = "#9a9a9a";
  ctx.lineWidth = 10;
  ctx.lineCap = "round";
  for (const line of scene.polylines) {
    ctx.beginPath();
    line.forEach((pt, i) => {
      const [x, y] = toPx(view, pt);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }

  // sacs: circles shaded by fill fraction
  for (const sac of scene.sacs) {
    const [x, y] = toPx(view, sac.center);
    ctx.beginPath();
    ctx.arc(x, y, 12, 0, 2 * Math.PI);
    ctx.strokeStyle = "#777";
    ctx.lineWidth = 1.5;
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(x, y, 12 * Math.sqrt(Math.max(0, Math.min(1, sac.fill))), 0, 2 * Math.PI);
    ctx.fillStyle = "#4a4a4a";
    ctx.fill();
  }

  // payload: contrast blob fading as it releases
  if (scene.payload) {
    const [x, y] = toPx(view, scene.payload.center);
    ctx.beginPath();
    ctx.arc(x, y, 8, 0, 2 * Math.PI);
    ctx.fillStyle = `rgba(40,40,40,${scene.payload.opacity})`;
    ctx.fill();
  }

  // spinner: two dark end markers
  if (scene.markerPair) {
    for (const pt of scene.markerPair) {
      const [x, y] = toPx(view, pt);
      ctx.beginPath();
      ctx.arc(x, y, 4, 0, 2 * Math.PI);
      ctx.fillStyle = "#111";
      ctx.fill();
    }
  }

  if (scene.warning) {
    ctx.fillStyle = "#7a1010";
    ctx.font = "bold 16px system-ui, sans-serif";
    ctx.fillText(scene.warning, 16, height - 16);
  }
}
