// Typed client for the retrieval service's JSON API.

export interface Point {
  x: number;
  y: number;
}
export type Stroke = Point[];

export interface SessionInfo {
  session_id: string;
  target_id: string | null;
  T: number;
  k: number;
  stroke_budget: number;
}

export interface TopEntry {
  photo_id: string;
  distance: number;
  rank: number;
}

export interface StrokeResponse {
  step: number;
  stage: number;
  stroke_count: number;
  topk: TopEntry[];
  true_rank?: number;
}

export interface GalleryEntry {
  photo_id: string;
  thumbnail_ref: string;
}

export interface Health {
  status: string;
  model_fingerprint: string;
  n: number;
  k: number;
  T: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }

  get sessionLost(): boolean {
    return this.status === 404;
  }
}

export interface Api {
  createSession(targetId?: string | null): Promise<SessionInfo>;
  submitStroke(sessionId: string, stroke: Stroke, k: number): Promise<StrokeResponse>;
  deleteSession(sessionId: string): Promise<void>;
  gallery(): Promise<GalleryEntry[]>;
  health(): Promise<Health>;
}

async function parseError(resp: Response): Promise<never> {
  let code = "error";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = (await resp.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(resp.status, code, message);
}

export class HttpApi implements Api {
  constructor(private readonly base: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.base + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) await parseError(resp);
    if (resp.status === 204) return undefined as T;
    return (await resp.json()) as T;
  }

  createSession(targetId?: string | null): Promise<SessionInfo> {
    return this.request("POST", "/sessions", targetId ? { target_id: targetId } : {});
  }

  submitStroke(sessionId: string, stroke: Stroke, k: number): Promise<StrokeResponse> {
    const wire = stroke.map((p) => [p.x, p.y]);
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/strokes`, {
      stroke: wire,
      k,
    });
  }

  deleteSession(sessionId: string): Promise<void> {
    return this.request("DELETE", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  gallery(): Promise<GalleryEntry[]> {
    return this.request("GET", "/gallery");
  }

  health(): Promise<Health> {
    return this.request("GET", "/health");
  }
}
