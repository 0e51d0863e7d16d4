/**
 * Typed client for the review service's /v1 API.
 *
 * The fetch implementation is injectable so tests can run the client against
 * an in-memory service. The request surface is verdicts only: there is no
 * call here that could carry mask data, mirroring the server contract that
 * reviewers select annotations but never edit them.
 */

export type Verdict = "accept" | "reject";

export interface SessionInfo {
  session_id: string;
  recursion_index: number;
  queue_size: number;
  classes: string[];
}

export interface CandidatePayload {
  done: false;
  sample_id: string;
  queue_position: number;
  queue_total: number;
  recursion_index: number;
  image_label: number | null;
  image_label_name: string | null;
  consistent_with_image_label: boolean;
  confidence_mean: number;
  confidence_min: number;
  foreground_area: number;
  image_png_base64: string | null;
  overlay_png_base64: string;
}

export interface QueueDone {
  done: true;
  queue_total: number;
}

export type NextResponse = CandidatePayload | QueueDone;

export interface DecisionRequest {
  sample_id: string;
  verdict: Verdict;
  reviewer: string;
  note?: string | null;
}

export interface DecisionAck {
  acknowledged: boolean;
  duplicate: boolean;
}

export interface SessionSummary {
  session_id: string;
  recursion_index: number;
  accepted: string[];
  rejected: string[];
  undecided: string[];
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Error with the HTTP status and the service's detail message, verbatim. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export interface ClientOptions {
  baseUrl: string;
  token?: string;
  fetchFn?: FetchLike;
}

export class ReviewClient {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchFn: FetchLike;

  constructor(options: ClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.token = options.token;
    this.fetchFn = options.fetchFn ?? ((url, init) => fetch(url, init));
  }

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const payload = text ? JSON.parse(text) : {};
    if (!response.ok) {
      const detail =
        typeof payload?.detail === "string" ? payload.detail : `HTTP ${response.status}`;
      throw new ApiError(response.status, detail);
    }
    return payload as T;
  }

  openSession(recursionIndex: number): Promise<SessionInfo> {
    return this.request("POST", "/v1/sessions", { recursion_index: recursionIndex });
  }

  next(sessionId: string): Promise<NextResponse> {
    return this.request("GET", `/v1/sessions/${sessionId}/next`);
  }

  submit(sessionId: string, decision: DecisionRequest): Promise<DecisionAck> {
    return this.request("POST", `/v1/sessions/${sessionId}/decisions`, decision);
  }

  close(sessionId: string): Promise<SessionSummary> {
    return this.request("POST", `/v1/sessions/${sessionId}/close`);
  }

  summary(sessionId: string): Promise<SessionSummary & { status: string; total: number }> {
    return this.request("GET", `/v1/sessions/${sessionId}/summary`);
  }
}
