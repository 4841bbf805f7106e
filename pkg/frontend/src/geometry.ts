// Stroke capture helpers: pointer positions become normalized [0, 1] points
// so committed strokes re-render identically after a window resize.

import type { Point, Stroke } from "./api.js";

export function clamp01(v: number): number {
  return v < 0 ? 0 : v > 1 ? 1 : v;
}

export interface Box {
  left: number;
  top: number;
  width: number;
  height: number;
}

export function normalizePoint(clientX: number, clientY: number, box: Box): Point {
  return {
    x: clamp01((clientX - box.left) / box.width),
    y: clamp01((clientY - box.top) / box.height),
  };
}

/** Skip points that barely moved; keeps strokes compact without changing shape. */
export function shouldAppend(stroke: Stroke, p: Point, minDist = 0.004): boolean {
  const last = stroke[stroke.length - 1];
  if (!last) return true;
  const dx = p.x - last.x;
  const dy = p.y - last.y;
  return dx * dx + dy * dy >= minDist * minDist;
}

/** Strokes with fewer than 2 points are discarded silently. */
export function isSubmittable(stroke: Stroke): boolean {
  return stroke.length >= 2;
}
