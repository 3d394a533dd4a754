import type {
  ApiErrorBody,
  AttemptResponse,
  CreateSessionResponse,
  HealthResponse,
  SessionDoc,
} from "./types.js";

/**
 * Thin fetch wrapper over the capture service HTTP API. The only
 * configuration is the base URL; the fetch implementation is injectable for
 * tests.
 */

/** Server answered with a non-2xx status and an {error, message} body. */
export class ApiRequestError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiRequestError";
  }
}

/** The request never completed (connection refused, offline, timeout). */
export class NetworkError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "NetworkError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface ApiOptions {
  baseUrl: string;
  fetchImpl?: FetchLike;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(options: ApiOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    const impl = options.fetchImpl ?? globalThis.fetch;
    if (!impl) throw new Error("no fetch implementation available");
    // Bind so a bare global fetch keeps its expected receiver.
    this.fetchImpl = (input, init) => impl(input, init);
  }

  async createSession(): Promise<CreateSessionResponse> {
    return this.request<CreateSessionResponse>("POST", "/v1/sessions");
  }

  async submitAttempt(sessionId: string, image: Blob): Promise<AttemptResponse> {
    const form = new FormData();
    form.append("image", image, "photo.png");
    return this.request<AttemptResponse>(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/attempts`,
      form,
    );
  }

  async getSession(sessionId: string): Promise<SessionDoc> {
    return this.request<SessionDoc>("GET", `/v1/sessions/${encodeURIComponent(sessionId)}`);
  }

  async health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("GET", "/v1/healthz");
  }

  private async request<T>(method: string, path: string, body?: FormData): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, { method, body });
    } catch (exc) {
      throw new NetworkError(exc instanceof Error ? exc.message : String(exc));
    }
    if (!response.ok) {
      let code = `http_${response.status}`;
      let message = response.statusText;
      try {
        const parsed = (await response.json()) as Partial<ApiErrorBody>;
        if (typeof parsed.error === "string") code = parsed.error;
        if (typeof parsed.message === "string") message = parsed.message;
      } catch {
        // Non-JSON error body; keep the status-derived defaults.
      }
      throw new ApiRequestError(code, message, response.status);
    }
    return (await response.json()) as T;
  }
}
