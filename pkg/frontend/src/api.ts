// Typed client for the judging service HTTP API.

export type RawChoice = "left" | "right" | "equivalent" | "discard";

export interface SessionInfo {
  session_id: string;
  tester_id: string;
  dataset_id: string;
  total: number;
  status: string;
}

export interface ItemView {
  done: false;
  item_id: string;
  image_url: string;
  left_score: number;
  right_score: number;
  judged: number;
  total: number;
}

export interface DoneView {
  done: true;
  judged: number;
  total: number;
}

export type NextView = ItemView | DoneView;

export interface Ack {
  accepted: boolean;
  judged: number;
  total: number;
}

export interface ApiClient {
  createSession(testerId: string, datasetId: string, seed: number): Promise<SessionInfo>;
  nextItem(sessionId: string): Promise<NextView>;
  submitJudgment(sessionId: string, itemId: string, choice: RawChoice): Promise<Ack>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let code = "http_error";
  let message = `HTTP ${resp.status}`;
  try {
    const body = (await resp.json()) as { error?: { code?: string; message?: string } };
    if (body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the defaults
  }
  throw new ApiError(resp.status, code, message);
}

export class HttpApiClient implements ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  async createSession(testerId: string, datasetId: string, seed: number): Promise<SessionInfo> {
    const resp = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ tester_id: testerId, dataset_id: datasetId, seed }),
    });
    return parseOrThrow<SessionInfo>(resp);
  }

  async nextItem(sessionId: string): Promise<NextView> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/next`);
    return parseOrThrow<NextView>(resp);
  }

  async submitJudgment(sessionId: string, itemId: string, choice: RawChoice): Promise<Ack> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/judgments`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ item_id: itemId, choice }),
    });
    return parseOrThrow<Ack>(resp);
  }
}
