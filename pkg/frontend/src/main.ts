// DOM wiring: canvas capture on the left, live top-k results on the right.

import type { GalleryEntry, Point, Stroke, StrokeResponse } from "./api.js";
import { HttpApi } from "./api.js";
import { DrawingController, type ControllerState } from "./controller.js";
import { normalizePoint, shouldAppend } from "./geometry.js";

const api = new HttpApi("");

const canvas = document.getElementById("sketch") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const resultsEl = document.getElementById("results")!;
const statusEl = document.getElementById("status")!;
const stageEl = document.getElementById("stage")!;
const bannerEl = document.getElementById("banner")!;
const errorEl = document.getElementById("error")!;
const errorTextEl = document.getElementById("error-text")!;
const retryBtn = document.getElementById("retry") as HTMLButtonElement;
const undoBtn = document.getElementById("undo") as HTMLButtonElement;
const clearBtn = document.getElementById("clear") as HTMLButtonElement;
const targetBtn = document.getElementById("new-target") as HTMLButtonElement;
const targetEl = document.getElementById("target")!;

let gallery: GalleryEntry[] = [];
let currentStroke: Stroke | null = null;
let view: ControllerState | null = null;

const controller = new DrawingController(api, 10, (state) => {
  view = state;
  render(state);
});

// -- canvas drawing ----------------------------------------------------------

function resizeCanvas(): void {
  const rect = canvas.getBoundingClientRect();
  const scale = window.devicePixelRatio || 1;
  canvas.width = Math.round(rect.width * scale);
  canvas.height = Math.round(rect.height * scale);
  redraw();
}

function drawStroke(stroke: Stroke): void {
  if (stroke.length < 2) return;
  ctx.beginPath();
  const first = stroke[0]!;
  ctx.moveTo(first.x * canvas.width, first.y * canvas.height);
  for (const p of stroke.slice(1)) {
    ctx.lineTo(p.x * canvas.width, p.y * canvas.height);
  }
  ctx.stroke();
}

function redraw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.lineWidth = Math.max(2, canvas.width / 200);
  ctx.lineCap = "round";
  ctx.lineJoin = "round";
  ctx.strokeStyle = "#1b1b1b";
  for (const stroke of view?.committed ?? []) drawStroke(stroke);
  if (currentStroke) drawStroke(currentStroke);
}

canvas.addEventListener("pointerdown", (ev) => {
  if (controller.busy || view?.status === "error") return;
  canvas.setPointerCapture(ev.pointerId);
  currentStroke = [normalizePoint(ev.clientX, ev.clientY, canvas.getBoundingClientRect())];
});

canvas.addEventListener("pointermove", (ev) => {
  if (!currentStroke) return;
  const p = normalizePoint(ev.clientX, ev.clientY, canvas.getBoundingClientRect());
  if (shouldAppend(currentStroke, p)) {
    currentStroke.push(p);
    redraw();
  }
});

async function finishStroke(ev: PointerEvent): Promise<void> {
  if (!currentStroke) return;
  const p = normalizePoint(ev.clientX, ev.clientY, canvas.getBoundingClientRect());
  if (shouldAppend(currentStroke, p)) currentStroke.push(p);
  const stroke = currentStroke;
  currentStroke = null;
  await controller.commitStroke(stroke); // sub-2-point strokes are dropped inside
  redraw();
}

canvas.addEventListener("pointerup", (ev) => void finishStroke(ev));
canvas.addEventListener("pointercancel", () => {
  currentStroke = null;
  redraw();
});
window.addEventListener("resize", resizeCanvas);

// -- results panel -----------------------------------------------------------

function thumbnailRef(photoId: string): string {
  return gallery.find((g) => g.photo_id === photoId)?.thumbnail_ref
    ?? `/gallery/${encodeURIComponent(photoId)}/image`;
}

function renderResults(resp: StrokeResponse | null, target: string | null): void {
  resultsEl.replaceChildren();
  if (!resp) return;
  for (const entry of resp.topk) {
    const card = document.createElement("div");
    card.className = "card" + (entry.photo_id === target ? " target" : "");
    const img = document.createElement("img");
    img.src = thumbnailRef(entry.photo_id);
    img.alt = entry.photo_id;
    const rank = document.createElement("span");
    rank.className = "rank";
    rank.textContent = `#${entry.rank}`;
    const caption = document.createElement("div");
    caption.className = "caption";
    caption.textContent = `${entry.photo_id} · d=${entry.distance.toFixed(3)}`;
    card.append(rank, img, caption);
    resultsEl.append(card);
  }
}

function render(state: ControllerState): void {
  undoBtn.disabled = controller.busy || state.committed.length === 0;
  clearBtn.disabled = controller.busy;
  targetBtn.disabled = controller.busy || gallery.length === 0;
  canvas.classList.toggle("locked", controller.busy || state.status === "error");

  const strokes = state.committed.length;
  const step = state.lastResponse ? state.lastResponse.step + 1 : 0;
  const stage = state.lastResponse ? state.lastResponse.stage + 1 : 0;
  stageEl.textContent = state.lastResponse
    ? `stroke ${strokes} · step ${step}/${state.T} · stage ${stage}/${state.k}`
    : state.T
      ? `draw to search (${state.T} steps, ${state.k} stages)`
      : "";

  if (state.practiceTarget) {
    const rank = state.lastResponse?.true_rank;
    targetEl.textContent = `target: ${state.practiceTarget}` + (rank ? ` · current rank ${rank}` : "");
  } else {
    targetEl.textContent = "free drawing (no target)";
  }

  bannerEl.hidden = state.foundAtStroke === null;
  if (state.foundAtStroke !== null) {
    bannerEl.textContent = `found at stroke ${state.foundAtStroke} — target in the top 5`;
  }

  errorEl.hidden = state.status !== "error";
  if (state.status === "error") {
    errorTextEl.textContent = state.errorMessage ?? "request failed";
  }
  statusEl.textContent = state.status;

  renderResults(state.lastResponse, state.practiceTarget);
  redraw();
}

// -- controls ----------------------------------------------------------------

undoBtn.addEventListener("click", () => void controller.undo());
clearBtn.addEventListener("click", () => void controller.clear());
retryBtn.addEventListener("click", () => void controller.retry());
targetBtn.addEventListener("click", () => {
  if (gallery.length === 0) return;
  const pick = gallery[Math.floor(Math.random() * gallery.length)]!;
  void controller.newTarget(pick.photo_id);
});

// -- boot --------------------------------------------------------------------

async function boot(): Promise<void> {
  resizeCanvas();
  try {
    const health = await api.health();
    statusEl.textContent = `connected · ${health.n} photos · model ${health.model_fingerprint}`;
    gallery = await api.gallery();
  } catch (err) {
    statusEl.textContent = `cannot reach server: ${err instanceof Error ? err.message : err}`;
  }
  await controller.start(null);
}

void boot();
