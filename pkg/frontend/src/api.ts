/** Typed client for the capex session API. All model math stays server-side. */

export type SessionStatus = "ready" | "awaiting_outcome" | "finished";

export interface SessionSummary {
  id: string;
  status: SessionStatus;
  iteration: number;
  model_error: number;
}

export interface Proposal extends SessionSummary {
  query: Record<string, string>;
  attributes: Record<string, string>;
  epe: number;
}

export interface ObservationResult extends SessionSummary {
  promoted: string[];
}

export interface ScoreRow {
  context: Record<string, string>;
  mismatch: number | null;
  score: number;
  favourable: boolean;
}

export interface ScoreReport {
  threshold: number;
  rows: ScoreRow[];
  favourable: Record<string, string>[];
}

export interface TracePayloadRow {
  iteration: number;
  model_error: number;
  promoted_vars: string[];
  outcome: Record<string, string>;
  [key: string]: unknown;
}

export interface SessionStatePayload extends SessionSummary {
  pending: { query: Record<string, string>; attributes: Record<string, string>; epe: number } | null;
  model: Record<string, unknown>;
  trace: TracePayloadRow[];
  score_report: ScoreReport | null;
}

export interface ObservationBody {
  outcome: Record<string, string>;
  situation?: Record<string, string>;
  attributes?: Record<string, string>;
}

/** Minimal fetch shape so tests can substitute a recorded transport. */
export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    public code: number,
    message: string,
  ) {
    super(message);
  }
}

interface ErrorPayload {
  code?: number;
  message?: string;
}

export class SessionApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: { method: string; headers?: Record<string, string>; body?: string } = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const payload = (await resp.json()) as unknown;
    if (resp.status >= 400) {
      const err = payload as ErrorPayload;
      throw new ApiError(err.code ?? resp.status, err.message ?? `HTTP ${resp.status}`);
    }
    return payload as T;
  }

  createSession(definition: unknown, config: Record<string, unknown> = {}): Promise<SessionSummary> {
    return this.request("POST", "/sessions", { definition, config });
  }

  nextQuery(sessionId: string): Promise<Proposal> {
    return this.request("GET", `/sessions/${sessionId}/next-query`);
  }

  postObservation(sessionId: string, body: ObservationBody): Promise<ObservationResult> {
    return this.request("POST", `/sessions/${sessionId}/observations`, body);
  }

  getState(sessionId: string): Promise<SessionStatePayload> {
    return this.request("GET", `/sessions/${sessionId}/state`);
  }

  getScores(sessionId: string, threshold: number): Promise<ScoreReport> {
    return this.request("GET", `/sessions/${sessionId}/scores?threshold=${threshold}`);
  }
}
