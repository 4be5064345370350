/**
 * Typed client for the triage service HTTP API.
 *
 * Resolution is the only mutating call this client can issue; everything
 * else is a read. The fetch implementation is injectable so tests can run
 * against a fixture service.
 */

export type QueueStatus = "pending" | "confirmed" | "rejected" | "all";
export type Decision = "confirm" | "reject";

export interface QueueSummary {
  item_id: number;
  sample_id: string;
  omega: number;
  family: string | null;
  anchor_name: string | null;
  status: string;
  created_at: string;
}

export interface QueueResponse {
  items: QueueSummary[];
}

export interface FunctionScoreJson {
  function_name: string;
  alpha: number;
  flagged: boolean;
}

export interface VerdictJson {
  sample_id: string;
  status: string;
  verdict: string;
  omega: number;
  functions_total: number;
  functions_filtered: number;
  function_scores: FunctionScoreJson[];
  family_scores: Record<string, number>;
  c_best: string | null;
  anchor_index: number | null;
  anchor_name: string | null;
  anchor_mass: number | null;
  anchor_text: string | null;
  anchor_vector: number[] | null;
  proof_entry_id: number | null;
  proof_sim: number | null;
}

export interface ExplanationJson {
  text: string;
  generator: string;
  request_digest: string;
  unverified_claims: boolean;
}

export interface ItemDetail {
  item_id: number;
  verdict: VerdictJson;
  anchor_text: string;
  proof_text: string;
  explanation: ExplanationJson;
  created_at: string;
  status: string;
  resolved_by: string | null;
  resolved_at: string | null;
  promoted_entry_id: number | null;
}

export interface KbStats {
  entry_count: number;
  dim: number;
  metric: string;
  by_label: Record<string, number>;
  by_family: Record<string, number>;
  promoted: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
  }
}

/** What the store needs from a client; tests substitute stubs. */
export interface TriageApiLike {
  queue(status: QueueStatus): Promise<QueueResponse>;
  item(itemId: number): Promise<ItemDetail>;
  resolve(itemId: number, decision: Decision, analystId: string): Promise<ItemDetail>;
  kbStats(): Promise<KbStats>;
}

type FetchFn = typeof fetch;

export class TriageApi implements TriageApiLike {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchFn = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (typeof body?.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return response.json();
  }

  queue(status: QueueStatus): Promise<QueueResponse> {
    return this.request(`/api/queue?status=${encodeURIComponent(status)}`);
  }

  item(itemId: number): Promise<ItemDetail> {
    return this.request(`/api/items/${itemId}`);
  }

  resolve(itemId: number, decision: Decision, analystId: string): Promise<ItemDetail> {
    return this.request(`/api/items/${itemId}/resolve`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ decision, analyst_id: analystId }),
    });
  }

  kbStats(): Promise<KbStats> {
    return this.request("/api/kb/stats");
  }
}
