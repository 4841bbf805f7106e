import { describe, expect, it } from "vitest";

import type {
  Api,
  GalleryEntry,
  Health,
  SessionInfo,
  Stroke,
  StrokeResponse,
} from "./api.js";
import { ApiError } from "./api.js";
import { DrawingController } from "./controller.js";

interface SubmitCall {
  sessionId: string;
  stroke: Stroke;
  k: number;
}

class FakeApi implements Api {
  created: string[] = [];
  submits: SubmitCall[] = [];
  nextSession = 0;
  lostSessions = new Set<string>();
  failSubmitsWith: Error | null = null;
  // true_rank per stroke count; undefined when the session has no target.
  trueRank: ((count: number) => number) | null = null;
  private strokeCounts = new Map<string, number>();

  async createSession(targetId?: string | null): Promise<SessionInfo> {
    const id = `s${this.nextSession++}`;
    this.created.push(id);
    this.strokeCounts.set(id, 0);
    return { session_id: id, target_id: targetId ?? null, T: 8, k: 2, stroke_budget: 4 };
  }

  async submitStroke(sessionId: string, stroke: Stroke, k: number): Promise<StrokeResponse> {
    if (this.lostSessions.has(sessionId)) {
      throw new ApiError(404, "not_found", `unknown session ${sessionId}`);
    }
    if (this.failSubmitsWith) {
      const err = this.failSubmitsWith;
      this.failSubmitsWith = null;
      throw err;
    }
    this.submits.push({ sessionId, stroke, k });
    const count = (this.strokeCounts.get(sessionId) ?? 0) + 1;
    this.strokeCounts.set(sessionId, count);
    const resp: StrokeResponse = {
      step: Math.min(7, count - 1),
      stage: count > 4 ? 1 : 0,
      stroke_count: count,
      topk: [{ photo_id: "ph0", distance: 1.25, rank: 1 }],
    };
    if (this.trueRank) resp.true_rank = this.trueRank(count);
    return resp;
  }

  async deleteSession(): Promise<void> {}
  async gallery(): Promise<GalleryEntry[]> {
    return [];
  }
  async health(): Promise<Health> {
    return { status: "ok", model_fingerprint: "fp", n: 4, k: 2, T: 8 };
  }
}

const line = (x0: number): Stroke => [
  { x: x0, y: 0.1 },
  { x: x0, y: 0.9 },
];

async function makeController(api: FakeApi, target: string | null = null) {
  const controller = new DrawingController(api, 10);
  await controller.start(target);
  return controller;
}

describe("DrawingController", () => {
  it("start opens a session", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    expect(api.created).toEqual(["s0"]);
    expect(controller.state().status).toBe("idle");
    expect(controller.state().T).toBe(8);
  });

  it("one completed stroke triggers exactly one request", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    expect(await controller.commitStroke(line(0.1))).toBe(true);
    expect(api.submits).toHaveLength(1);
    expect(api.submits[0]!.k).toBe(10);
    expect(controller.state().committed).toHaveLength(1);
    expect(controller.state().lastResponse!.stroke_count).toBe(1);
  });

  it("discards strokes with fewer than two points without a request", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    expect(await controller.commitStroke([{ x: 0.5, y: 0.5 }])).toBe(false);
    expect(api.submits).toHaveLength(0);
    expect(controller.state().committed).toHaveLength(0);
  });

  it("locks input while a request is in flight", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    let release!: () => void;
    const gate = new Promise<void>((resolve) => (release = resolve));
    const original = api.submitStroke.bind(api);
    api.submitStroke = async (sid, stroke, k) => {
      await gate;
      return original(sid, stroke, k);
    };
    const first = controller.commitStroke(line(0.1));
    expect(controller.busy).toBe(true);
    expect(await controller.commitStroke(line(0.2))).toBe(false);
    release();
    expect(await first).toBe(true);
    expect(api.submits).toHaveLength(1);
    expect(controller.state().committed).toHaveLength(1);
  });

  it("undo starts a fresh session and replays all but the last stroke", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    for (const x of [0.1, 0.2, 0.3]) await controller.commitStroke(line(x));
    await controller.undo();
    expect(api.created).toEqual(["s0", "s1"]);
    expect(controller.state().committed).toHaveLength(2);
    const replayed = api.submits.filter((c) => c.sessionId === "s1");
    expect(replayed.map((c) => c.stroke[0]!.x)).toEqual([0.1, 0.2]);
    expect(controller.state().lastResponse!.stroke_count).toBe(2);
  });

  it("undo with no strokes is a no-op", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    await controller.undo();
    expect(api.created).toEqual(["s0"]);
    expect(api.submits).toHaveLength(0);
  });

  it("clear opens an empty session and wipes results", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    await controller.commitStroke(line(0.1));
    await controller.clear();
    expect(api.created).toEqual(["s0", "s1"]);
    expect(controller.state().committed).toHaveLength(0);
    expect(controller.state().lastResponse).toBeNull();
  });

  it("passes the server's true_rank through unmodified and flags top-5 entry", async () => {
    const api = new FakeApi();
    api.trueRank = (count) => (count === 1 ? 7 : 3);
    const controller = await makeController(api, "ph3");
    await controller.commitStroke(line(0.1));
    expect(controller.state().lastResponse!.true_rank).toBe(7);
    expect(controller.state().foundAtStroke).toBeNull();
    await controller.commitStroke(line(0.2));
    expect(controller.state().lastResponse!.true_rank).toBe(3);
    expect(controller.state().foundAtStroke).toBe(2);
    // The banner sticks to the first qualifying stroke.
    await controller.commitStroke(line(0.3));
    expect(controller.state().foundAtStroke).toBe(2);
  });

  it("recovers a lost session by replaying every committed stroke", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    await controller.commitStroke(line(0.1));
    await controller.commitStroke(line(0.2));
    api.lostSessions.add("s0");
    expect(await controller.commitStroke(line(0.3))).toBe(true);
    expect(api.created).toEqual(["s0", "s1"]);
    const replayed = api.submits.filter((c) => c.sessionId === "s1");
    expect(replayed.map((c) => c.stroke[0]!.x)).toEqual([0.1, 0.2, 0.3]);
    expect(controller.state().committed).toHaveLength(3);
    expect(controller.state().status).toBe("idle");
  });

  it("surfaces server errors and retries the failed stroke", async () => {
    const api = new FakeApi();
    const controller = await makeController(api);
    await controller.commitStroke(line(0.1));
    api.failSubmitsWith = new ApiError(500, "server_error", "boom");
    expect(await controller.commitStroke(line(0.2))).toBe(false);
    expect(controller.state().status).toBe("error");
    expect(controller.state().errorMessage).toContain("boom");
    expect(controller.state().committed).toHaveLength(1);
    expect(await controller.retry()).toBe(true);
    expect(controller.state().status).toBe("idle");
    expect(controller.state().committed).toHaveLength(2);
    expect(controller.state().committed[1]![0]!.x).toBeCloseTo(0.2);
  });
});
