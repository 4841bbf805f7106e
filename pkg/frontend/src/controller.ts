// Drawing session state machine. Committed strokes always mirror exactly the
// strokes the server has acknowledged; at most one request is in flight per
// session, and the UI disables input while `busy` is true. Undo and clear are
// client-side: sessions are append-only, so both start a fresh session and
// replay whatever should remain.

import type { Api, SessionInfo, Stroke, StrokeResponse } from "./api.js";
import { ApiError } from "./api.js";
import { isSubmittable } from "./geometry.js";

export type Status = "starting" | "idle" | "inflight" | "replaying" | "error";

export interface ControllerState {
  sessionId: string | null;
  committed: Stroke[];
  lastResponse: StrokeResponse | null;
  practiceTarget: string | null;
  foundAtStroke: number | null;
  status: Status;
  errorMessage: string | null;
  T: number;
  k: number;
  strokeBudget: number;
}

const FOUND_TOP_Q = 5;

export class DrawingController {
  private session: SessionInfo | null = null;
  private committed: Stroke[] = [];
  private lastResponse: StrokeResponse | null = null;
  private practiceTarget: string | null = null;
  private foundAtStroke: number | null = null;
  private status: Status = "starting";
  private errorMessage: string | null = null;
  private pendingStroke: Stroke | null = null;

  constructor(
    private readonly api: Api,
    private readonly topK: number = 10,
    private readonly onChange: (state: ControllerState) => void = () => {},
  ) {}

  state(): ControllerState {
    return {
      sessionId: this.session?.session_id ?? null,
      committed: this.committed.map((s) => s.slice()),
      lastResponse: this.lastResponse,
      practiceTarget: this.practiceTarget,
      foundAtStroke: this.foundAtStroke,
      status: this.status,
      errorMessage: this.errorMessage,
      T: this.session?.T ?? 0,
      k: this.session?.k ?? 0,
      strokeBudget: this.session?.stroke_budget ?? 0,
    };
  }

  get busy(): boolean {
    return this.status === "inflight" || this.status === "replaying" || this.status === "starting";
  }

  private emit(): void {
    this.onChange(this.state());
  }

  private fail(err: unknown): void {
    this.status = "error";
    this.errorMessage = err instanceof Error ? err.message : String(err);
    this.emit();
  }

  /** Open a fresh session; target (if any) switches practice mode on. */
  async start(targetId: string | null = null): Promise<void> {
    this.status = "starting";
    this.emit();
    try {
      this.session = await this.api.createSession(targetId);
      this.practiceTarget = targetId;
      this.committed = [];
      this.lastResponse = null;
      this.foundAtStroke = null;
      this.pendingStroke = null;
      this.errorMessage = null;
      this.status = "idle";
    } catch (err) {
      this.session = null;
      this.fail(err);
      return;
    }
    this.emit();
  }

  /**
   * Submit one completed stroke. Returns false when the stroke is discarded
   * (too short) or input is locked by an in-flight request.
   */
  async commitStroke(stroke: Stroke): Promise<boolean> {
    if (!isSubmittable(stroke)) return false;
    if (this.busy || this.status === "error" || !this.session) return false;
    this.status = "inflight";
    this.emit();
    try {
      const resp = await this.api.submitStroke(this.session.session_id, stroke, this.topK);
      this.acknowledge(stroke, resp);
      this.status = "idle";
      this.emit();
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.sessionLost) {
        return this.recover(stroke);
      }
      this.pendingStroke = stroke;
      this.fail(err);
      return false;
    }
  }

  private acknowledge(stroke: Stroke, resp: StrokeResponse): void {
    this.committed.push(stroke);
    this.lastResponse = resp;
    if (
      this.practiceTarget !== null &&
      this.foundAtStroke === null &&
      resp.true_rank !== undefined &&
      resp.true_rank <= FOUND_TOP_Q
    ) {
      this.foundAtStroke = this.committed.length;
    }
  }

  /** Session vanished server-side: new session, full replay, then the stroke. */
  private async recover(stroke: Stroke): Promise<boolean> {
    const strokes = [...this.committed, stroke];
    try {
      await this.replay(strokes);
      this.status = "idle";
      this.emit();
      return true;
    } catch (err) {
      this.pendingStroke = stroke;
      this.fail(err);
      return false;
    }
  }

  /** Re-run the last failed stroke after an error banner's retry. */
  async retry(): Promise<boolean> {
    if (this.status !== "error") return false;
    const stroke = this.pendingStroke;
    this.pendingStroke = null;
    this.errorMessage = null;
    if (!this.session) {
      await this.start(this.practiceTarget);
      if (this.state().status !== "idle") return false;
    } else {
      this.status = "idle";
    }
    if (stroke === null) {
      this.emit();
      return true;
    }
    return this.commitStroke(stroke);
  }

  /** Undo = fresh session + replay of all but the last stroke. No-op when empty. */
  async undo(): Promise<void> {
    if (this.busy || this.committed.length === 0) return;
    const keep = this.committed.slice(0, -1);
    try {
      await this.replay(keep);
      this.status = "idle";
    } catch (err) {
      this.fail(err);
      return;
    }
    this.emit();
  }

  /** Clear = fresh empty session, same practice target. */
  async clear(): Promise<void> {
    if (this.busy) return;
    await this.start(this.practiceTarget);
  }

  /** Fresh session in practice mode for the given target. */
  async newTarget(targetId: string): Promise<void> {
    if (this.busy) return;
    await this.start(targetId);
  }

  private async replay(strokes: Stroke[]): Promise<void> {
    this.status = "replaying";
    this.emit();
    const session = await this.api.createSession(this.practiceTarget);
    const committed: Stroke[] = [];
    let last: StrokeResponse | null = null;
    let found: number | null = null;
    for (const stroke of strokes) {
      last = await this.api.submitStroke(session.session_id, stroke, this.topK);
      committed.push(stroke);
      if (
        this.practiceTarget !== null &&
        found === null &&
        last.true_rank !== undefined &&
        last.true_rank <= FOUND_TOP_Q
      ) {
        found = committed.length;
      }
    }
    // Replay succeeded wholesale; only now replace the visible state.
    this.session = session;
    this.committed = committed;
    this.lastResponse = last;
    this.foundAtStroke = found;
    this.errorMessage = null;
    this.pendingStroke = null;
  }
}
