// Thin typed client for the gateway JSON API. Every non-2xx response becomes
// a GatewayError; network-level failures reject with whatever fetch threw,
// so callers can tell "server said no" from "server unreachable".

export type Scalar = string | number;

export interface LoginReply {
  token: string;
  expires_at: number;
  username: string;
  role: string;
}

export interface RecordReply {
  file_id: string;
  values: Record<string, Scalar>;
}

export interface AuditEvent {
  sequence: number;
  timestamp: number;
  correlation_id: string;
  actor_username: string;
  event_kind: string;
  detail: string;
  decision_fields: string | null;
}

export class GatewayError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public correlationId: string,
  ) {
    super(message);
    this.name = "GatewayError";
  }
}

async function toError(response: Response): Promise<GatewayError> {
  let code = "error";
  let message = `HTTP ${response.status}`;
  let correlationId = response.headers.get("X-Correlation-Id") ?? "-";
  try {
    const body = await response.json();
    if (typeof body.code === "string") code = body.code;
    if (typeof body.message === "string") message = body.message;
    if (typeof body.correlation_id === "string" && body.correlation_id !== "-") {
      correlationId = body.correlation_id;
    }
  } catch {
    // non-JSON error body; keep the status-derived message
  }
  return new GatewayError(response.status, code, message, correlationId);
}

export class GatewayClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = (...args) => globalThis.fetch(...args),
  ) {}

  private async request(
    method: string,
    path: string,
    options: { token?: string; body?: unknown } = {},
  ): Promise<Response> {
    const headers: Record<string, string> = {};
    if (options.token) headers["Authorization"] = `Bearer ${options.token}`;
    if (options.body !== undefined) headers["Content-Type"] = "application/json";
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: options.body === undefined ? undefined : JSON.stringify(options.body),
    });
    if (!response.ok) throw await toError(response);
    return response;
  }

  async login(username: string, password: string): Promise<LoginReply> {
    const response = await this.request("POST", "/api/login", {
      body: { username, password },
    });
    return response.json();
  }

  async register(username: string, password: string, role: string): Promise<void> {
    await this.request("POST", "/api/register", {
      body: { username, password, role },
    });
  }

  async logout(token: string): Promise<void> {
    await this.request("POST", "/api/logout", { token });
  }

  async readRecord(
    token: string,
    fileId: string,
    fields?: string[],
  ): Promise<RecordReply> {
    let path = `/api/records/${encodeURIComponent(fileId)}`;
    if (fields && fields.length > 0) {
      path += `?fields=${encodeURIComponent(fields.join(","))}`;
    }
    const response = await this.request("GET", path, { token });
    return response.json();
  }

  async audit(token: string, from: number): Promise<AuditEvent[]> {
    const response = await this.request("GET", `/api/audit?from=${from}`, { token });
    const body = await response.json();
    return body.events;
  }
}
