/** Typed client for the review service HTTP API. The UI talks to the queue
 * exclusively through this module. */

export interface TagEntry {
  tag: string;
  category: string;
}

export interface TagsetInfo {
  categories: string[];
  tags: TagEntry[];
}

export interface QueueCounters {
  pending: number;
  corrected: number;
  approved: number;
  total: number;
}

export interface Stats {
  queue: QueueCounters;
  model: {
    architecture: string;
    tags: number;
    embedding_dim: number;
    hidden_dim: number;
    providers: string[];
  };
}

export interface ReviewSummary {
  id: string;
  status: string;
  mean_confidence: number;
  length: number;
  preview: string;
}

export interface ReviewItem {
  id: string;
  tokens: string[];
  model_tags: string[];
  confidences: number[];
  status: string;
  corrected_tags: string[] | null;
  provenance: string;
}

/** Non-2xx responses and network failures; `status` 0 means unreachable. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, "network", String(err));
  }
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    body = null;
  }
  if (!response.ok) {
    const doc = (body ?? {}) as { code?: string; message?: string };
    throw new ApiError(
      response.status,
      doc.code ?? "error",
      doc.message ?? `HTTP ${response.status}`,
    );
  }
  return body as T;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  tagset(): Promise<TagsetInfo> {
    return request(`${this.base}/api/tagset`);
  }

  stats(): Promise<Stats> {
    return request(`${this.base}/api/stats`);
  }

  pending(limit = 50): Promise<{ items: ReviewSummary[] }> {
    return request(`${this.base}/api/review?status=pending&limit=${limit}`);
  }

  item(id: string): Promise<ReviewItem> {
    return request(`${this.base}/api/review/${encodeURIComponent(id)}`);
  }

  submitCorrection(id: string, correctedTags: string[]): Promise<ReviewItem> {
    return request(`${this.base}/api/review/${encodeURIComponent(id)}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ corrected_tags: correctedTags }),
    });
  }

  approve(id: string): Promise<ReviewItem> {
    return request(`${this.base}/api/review/${encodeURIComponent(id)}/approve`, {
      method: "POST",
    });
  }
}
