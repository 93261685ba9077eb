// Thin typed client for the session service. The fetch function is
// injectable so tests can run against an in-process mock server.

import {
  ApiError,
  ApiErrorBody,
  CalibrationReport,
  ConfigCommitResponse,
  CreateSessionResponse,
  PerturbationConfig,
  SessionView,
  StepResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json();
  if (!resp.ok) {
    const err = (body as ApiErrorBody).error ?? {
      code: "unknown",
      message: `HTTP ${resp.status}`,
    };
    throw new ApiError(resp.status, err);
  }
  return body as T;
}

export class SessionClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    return parse<T>(resp);
  }

  private async put<T>(path: string, payload: unknown): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    return parse<T>(resp);
  }

  createSession(body: {
    attacker_png: string;
    victim_png?: string;
    victim_embedding?: number[];
    target?: PerturbationConfig;
    seed?: number;
  }): Promise<CreateSessionResponse> {
    return this.post("/sessions", body);
  }

  async getSession(id: string): Promise<SessionView> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${id}`);
    return parse<SessionView>(resp);
  }

  commitConfig(id: string, config: PerturbationConfig): Promise<ConfigCommitResponse> {
    return this.put(`/sessions/${id}/config`, config);
  }

  setTarget(id: string, target: PerturbationConfig): Promise<{ revision: number }> {
    return this.put(`/sessions/${id}/target`, target);
  }

  step(id: string, n: number): Promise<StepResponse> {
    return this.post(`/sessions/${id}/step`, { n });
  }

  calibrate(id: string, onPng: string, offPng: string): Promise<CalibrationReport> {
    return this.post(`/sessions/${id}/calibrate`, {
      on_png: onPng,
      off_png: offPng,
    });
  }
}
