/** Browser entry point: wires the store, client, controls and canvas. */

import { drawScene, fitView } from "./canvas.js";
import {
  DEFAULT_INTENT,
  Debouncer,
  dragToInPlane,
  setFieldFrame,
  toggleAspirationFrame,
  type ControlIntent,
} from "./controls.js";
import { ConsoleClient } from "./client.js";
import { buildScene } from "./scene.js";
import { ConsoleStore } from "./state.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const canvas = byId<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d");
if (!ctx) throw new Error("2d canvas context unavailable");

const store = new ConsoleStore();
const url = `ws://${location.host}/ws`;
// browser WebSocket satisfies SocketLike structurally; only `data` is read
const client = new ConsoleClient(
  url,
  store,
  (u) => new WebSocket(u) as unknown as import("./client.js").SocketLike,
);
const debouncer = new Debouncer(30);

const intent: ControlIntent = { ...DEFAULT_INTENT, inPlane: [1, 0] };

function emitField(): void {
  debouncer.submit(() => client.send(setFieldFrame(intent)));
}

// sliders and toggles ------------------------------------------------------
const magnitude = byId<HTMLInputElement>("magnitude");
const frequency = byId<HTMLInputElement>("frequency");
const tilt = byId<HTMLInputElement>("tilt");
const senseBtn = byId<HTMLButtonElement>("sense");
const aspirationBtn = byId<HTMLButtonElement>("aspiration");

magnitude.addEventListener("input", () => {
  intent.magnitudeMT = Number(magnitude.value);
  emitField();
});
frequency.addEventListener("input", () => {
  intent.frequencyRpm = Number(frequency.value);
  emitField();
});
tilt.addEventListener("input", () => {
  intent.tilt = Number(tilt.value);
  emitField();
});
senseBtn.addEventListener("click", () => {
  intent.sense = intent.sense === 1 ? -1 : 1;
  senseBtn.textContent = intent.sense === 1 ? "sense +" : "sense −";
  emitField();
});
let aspirationOn = false;
aspirationBtn.addEventListener("click", () => {
  aspirationOn = !aspirationOn;
  aspirationBtn.classList.toggle("active", aspirationOn);
  client.send(toggleAspirationFrame(aspirationOn));
});

// pointer drag sets the in-plane axis --------------------------------------
let dragStart: [number, number] | null = null;
canvas.addEventListener("pointerdown", (ev) => {
  dragStart = [ev.offsetX, ev.offsetY];
  canvas.setPointerCapture(ev.pointerId);
});
canvas.addEventListener("pointermove", (ev) => {
  if (!dragStart) return;
  const dx = ev.offsetX - dragStart[0];
  const dy = ev.offsetY - dragStart[1];
  if (Math.hypot(dx, dy) < 4) return;
  intent.inPlane = dragToInPlane(dx, dy);
  emitField();
});
canvas.addEventListener("pointerup", () => {
  dragStart = null;
});

// render loop ---------------------------------------------------------------
const statusEl = byId<HTMLElement>("status");
const readoutsEl = byId<HTMLElement>("readouts");
const feedEl = byId<HTMLElement>("feed");
const scenariosEl = byId<HTMLSelectElement>("scenarios");

scenariosEl.addEventListener("change", () => {
  if (!scenariosEl.value) return;
  store.resetStream();
  client.send({ type: "SELECT_SCENARIO", name: scenariosEl.value });
});

function render(): void {
  statusEl.textContent = store.status;
  statusEl.dataset.status = store.status;
  if (scenariosEl.options.length !== store.scenarios.length + 1) {
    scenariosEl.innerHTML =
      "<option value=''>scenario…</option>" +
      store.scenarios.map((s) => `<option>${s}</option>`).join("");
  }
  if (store.snapshot) {
    const scene = buildScene(store.snapshot);
    drawScene(ctx!, scene, fitView(scene, canvas.width, canvas.height));
    const r = scene.readouts;
    readoutsEl.textContent =
      `${r.mode}  B ${r.magnitudeMT.toFixed(1)} mT  ` +
      `f ${r.frequencyRpm.toFixed(0)} rpm  ` +
      `flow ${(r.flowSpeedMmS ?? 0).toFixed(1)} mm/s  ` +
      `released ${r.releasedPct.toFixed(1)}%  ` +
      Object.entries(r.occlusionPct)
        .map(([sid, pct]) => `sac${sid} ${pct.toFixed(1)}%`)
        .join(" ");
  }
  feedEl.textContent = store.feed
    .slice(0, 12)
    .map((e) => `${e.time_s === null ? "--" : e.time_s.toFixed(3)}  ${e.kind} ${e.detail}`)
    .join("\n");
  requestAnimationFrame(render);
}

client.connect();
requestAnimationFrame(render);
