/**
 * Typed client for the curation service. All mutations flow through here;
 * the UI keeps no persistence of its own.
 */

import type {
  DistanceRow,
  EditCommand,
  ProposalDiff,
  RecordPayload,
  RecordSummary,
  Violation,
} from "./types.js";

export class ConflictError extends Error {
  constructor(
    message: string,
    public violations: Violation[] = [],
  ) {
    super(message);
    this.name = "ConflictError";
  }
}

export class ApiError extends Error {
  constructor(
    message: string,
    public status: number,
    public retryable = false,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

interface ErrorDetail {
  code?: string;
  message?: string;
  violations?: Violation[];
  retryable?: boolean;
}

export class CurationApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (response.ok) {
      return (await response.json()) as T;
    }
    let detail: ErrorDetail = {};
    try {
      const body = (await response.json()) as { detail?: ErrorDetail };
      detail = body.detail ?? {};
    } catch {
      // non-JSON error body
    }
    const message = detail.message ?? `request failed with status ${response.status}`;
    if (response.status === 409) {
      throw new ConflictError(message, detail.violations ?? []);
    }
    throw new ApiError(message, response.status, detail.retryable ?? false);
  }

  async listRecords(filter?: { state?: string; category?: string }): Promise<RecordSummary[]> {
    const params = new URLSearchParams();
    if (filter?.state) params.set("state", filter.state);
    if (filter?.category) params.set("category", filter.category);
    const query = params.toString();
    const payload = await this.request<{ records: RecordSummary[] }>(
      `/records${query ? `?${query}` : ""}`,
    );
    return payload.records;
  }

  getRecord(key: string): Promise<RecordPayload> {
    return this.request<RecordPayload>(`/records/${encodeURIComponent(key)}`);
  }

  applyEdit(key: string, command: EditCommand): Promise<RecordPayload> {
    return this.request<RecordPayload>(`/records/${encodeURIComponent(key)}/edits`, {
      method: "POST",
      body: JSON.stringify(command),
    });
  }

  /** Apply a chain of edits sequentially; stops at the first failure. */
  async applyEdits(key: string, commands: EditCommand[]): Promise<RecordPayload | null> {
    let last: RecordPayload | null = null;
    for (const command of commands) {
      last = await this.applyEdit(key, command);
    }
    return last;
  }

  approve(key: string, baseRevision: number): Promise<RecordPayload> {
    return this.request<RecordPayload>(`/records/${encodeURIComponent(key)}/approve`, {
      method: "POST",
      body: JSON.stringify({ base_revision: baseRevision }),
    });
  }

  async regenerate(key: string, feedback: string): Promise<ProposalDiff> {
    const payload = await this.request<{ diff: ProposalDiff }>(
      `/records/${encodeURIComponent(key)}/regenerate`,
      { method: "POST", body: JSON.stringify({ feedback }) },
    );
    return payload.diff;
  }

  /** Distance context is optional server-side; null when not configured. */
  async distances(key: string): Promise<DistanceRow[] | null> {
    try {
      const payload = await this.request<{ rows: DistanceRow[] }>(
        `/records/${encodeURIComponent(key)}/distances`,
      );
      return payload.rows;
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) return null;
      throw error;
    }
  }
}
