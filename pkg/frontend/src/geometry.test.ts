import { describe, expect, it } from "vitest";

import { clamp01, isSubmittable, normalizePoint, shouldAppend } from "./geometry.js";

describe("clamp01", () => {
  it("clamps into [0, 1]", () => {
    expect(clamp01(-0.5)).toBe(0);
    expect(clamp01(0.25)).toBe(0.25);
    expect(clamp01(7)).toBe(1);
  });
});

describe("normalizePoint", () => {
  const box = { left: 10, top: 20, width: 200, height: 100 };

  it("maps client coordinates to canvas fractions", () => {
    expect(normalizePoint(10, 20, box)).toEqual({ x: 0, y: 0 });
    expect(normalizePoint(210, 120, box)).toEqual({ x: 1, y: 1 });
    expect(normalizePoint(110, 70, box)).toEqual({ x: 0.5, y: 0.5 });
  });

  it("clamps pointer positions outside the canvas", () => {
    expect(normalizePoint(-50, 500, box)).toEqual({ x: 0, y: 1 });
  });
});

describe("shouldAppend", () => {
  it("always accepts the first point", () => {
    expect(shouldAppend([], { x: 0.5, y: 0.5 })).toBe(true);
  });

  it("skips points closer than the threshold", () => {
    const stroke = [{ x: 0.5, y: 0.5 }];
    expect(shouldAppend(stroke, { x: 0.5001, y: 0.5 })).toBe(false);
    expect(shouldAppend(stroke, { x: 0.6, y: 0.5 })).toBe(true);
  });
});

describe("isSubmittable", () => {
  it("requires at least two points", () => {
    expect(isSubmittable([])).toBe(false);
    expect(isSubmittable([{ x: 0, y: 0 }])).toBe(false);
    expect(isSubmittable([{ x: 0, y: 0 }, { x: 1, y: 1 }])).toBe(true);
  });
});
