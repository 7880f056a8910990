/** Thin typed client for the review service; fetch is injectable for tests. */

import type { Decision, PairsPage } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ListParams {
  status?: string;
  limit?: number;
  cursor?: string;
}

/** What the queue needs from the service; fakes implement this in tests. */
export interface ReviewClient {
  listAllPairs(status: string, pageSize?: number): Promise<PairsPage>;
  postVerdict(synthId: string, decision: Decision, reviewer: string): Promise<void>;
}

export class ReviewApi implements ReviewClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new Error(`network failure: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { error?: string };
        if (body.error) detail = body.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  async listPairs(params: ListParams = {}): Promise<PairsPage> {
    const query = new URLSearchParams();
    if (params.status) query.set("status", params.status);
    if (params.limit !== undefined) query.set("limit", String(params.limit));
    if (params.cursor) query.set("cursor", params.cursor);
    const suffix = query.toString() ? `?${query.toString()}` : "";
    const response = await this.request(`/api/pairs${suffix}`);
    return (await response.json()) as PairsPage;
  }

  /** Follow pagination cursors until the queue for a status is exhausted. */
  async listAllPairs(status: string, pageSize = 100): Promise<PairsPage> {
    const first = await this.listPairs({ status, limit: pageSize });
    const records = [...first.records];
    let cursor = first.next_cursor;
    let counts = first.counts;
    while (cursor !== null) {
      const page = await this.listPairs({ status, limit: pageSize, cursor });
      records.push(...page.records);
      cursor = page.next_cursor;
      counts = page.counts;
    }
    return { records, next_cursor: null, counts };
  }

  async postVerdict(synthId: string, decision: Decision, reviewer: string): Promise<void> {
    await this.request(`/api/pairs/${synthId}/verdict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ decision, reviewer }),
    });
  }
}
