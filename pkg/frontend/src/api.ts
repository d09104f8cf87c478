// Typed client for the nlquery HTTP API. Every non-2xx response carries the
// {error_code, message} envelope, surfaced here as ApiRequestError.

import type {
  Answer,
  DatabaseInfo,
  Rule,
  SessionDetail,
  Trace,
} from "./types";

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly errorCode: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiRequestError";
  }
}

async function parseError(response: Response): Promise<ApiRequestError> {
  try {
    const body = (await response.json()) as { error_code?: string; message?: string };
    return new ApiRequestError(
      response.status,
      body.error_code ?? "unknown_error",
      body.message ?? `HTTP ${response.status}`,
    );
  } catch {
    return new ApiRequestError(response.status, "unknown_error", `HTTP ${response.status}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    signal?: AbortSignal,
  ): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
      signal,
    });
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  async listDatabases(): Promise<DatabaseInfo[]> {
    const body = await this.request<{ databases: DatabaseInfo[] }>("GET", "/databases");
    return body.databases;
  }

  createSession(database: string): Promise<{ session_id: string; database: string }> {
    return this.request("POST", "/sessions", { database });
  }

  getSession(sessionId: string): Promise<SessionDetail> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  ask(sessionId: string, question: string, signal?: AbortSignal): Promise<Answer> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/ask`, { question }, signal);
  }

  getTrace(traceId: string): Promise<Trace> {
    return this.request("GET", `/traces/${encodeURIComponent(traceId)}`);
  }

  async listRules(): Promise<Rule[]> {
    const body = await this.request<{ rules: Rule[] }>("GET", "/rules");
    return body.rules;
  }

  addRule(text: string, scope: "global" | "session" = "global", sessionId?: string): Promise<Rule> {
    return this.request("POST", "/rules", { text, scope, session_id: sessionId ?? null });
  }

  deleteRule(ruleId: string): Promise<Rule> {
    return this.request("DELETE", `/rules/${encodeURIComponent(ruleId)}`);
  }

  scan(database: string): Promise<{ database: string; tables: string[]; table_count: number }> {
    return this.request("POST", "/scan", { database });
  }
}
