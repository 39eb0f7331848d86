import type { AdaptDoc, AssistDoc, CreateBody, SessionState } from "./types";

// Thin client over the session service. Server-reported errors (4xx/5xx
// with a {code, message} body) throw ServiceError; transport failures
// throw whatever fetch threw, which the app turns into the retry banner.

export class ServiceError extends Error {
  code: string;
  status: number;
  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

async function request<T>(method: string, path: string, body?: unknown): Promise<T> {
  const res = await fetch(path, {
    method,
    headers: body === undefined ? undefined : { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  if (!res.ok) {
    let code = "http_error";
    let message = `${res.status}`;
    try {
      const doc = await res.json();
      code = doc.code ?? code;
      message = doc.message ?? message;
    } catch {
      // non-JSON error body, keep the status text
    }
    throw new ServiceError(res.status, code, message);
  }
  if (res.status === 204) return undefined as T;
  return (await res.json()) as T;
}

export interface Api {
  create(body: CreateBody): Promise<SessionState>;
  state(id: string): Promise<SessionState>;
  act(id: string, action: number): Promise<SessionState>;
  assist(id: string): Promise<AssistDoc>;
  adapt(id: string): Promise<AdaptDoc>;
  remove(id: string): Promise<void>;
}

export const httpApi: Api = {
  create: (body) => request("POST", "/sessions", body),
  state: (id) => request("GET", `/sessions/${id}`),
  act: (id, action) => request("POST", `/sessions/${id}/action`, { action }),
  assist: (id) => request("GET", `/sessions/${id}/assist`),
  adapt: (id) => request("POST", `/sessions/${id}/adapt`, {}),
  remove: (id) => request("DELETE", `/sessions/${id}`),
};
