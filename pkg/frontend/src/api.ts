/** Thin typed client for the grading service; the UI's only backend. */

import type { DecisionTrace, InterventionResponse, ModelInfo } from "./types.js";

export class ServiceClient {
  constructor(readonly baseUrl: string, private fetchImpl: typeof fetch = fetch) {}

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!res.ok) throw new Error(await errorText(res));
    return res.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new Error(await errorText(res));
    return res.json() as Promise<T>;
  }

  modelInfo(): Promise<ModelInfo> {
    return this.get("/api/model");
  }

  async instanceIds(): Promise<string[]> {
    const body = await this.get<{ ids: string[] }>("/api/instances");
    return body.ids;
  }

  trace(instanceId: string): Promise<DecisionTrace> {
    return this.post("/api/trace", { id: instanceId });
  }

  intervene(
    instanceId: string,
    overrides: Record<number, number>,
  ): Promise<InterventionResponse> {
    const wire: Record<string, number> = {};
    for (const [k, v] of Object.entries(overrides)) wire[k] = v;
    return this.post("/api/intervene", { id: instanceId, overrides: wire });
  }
}

async function errorText(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { error?: string };
    return body.error ?? `HTTP ${res.status}`;
  } catch {
    return `HTTP ${res.status}`;
  }
}
