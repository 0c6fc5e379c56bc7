import type {
  QueueCreated,
  ReviewItem,
  ReviewSummary,
  SliceView,
  Verdict,
} from "./types.js";

/** The slice of fetch() the client needs; injected so tests can fake it. */
export interface JsonResponseLike {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<JsonResponseLike>;

/**
 * Non-2xx responses carry `{"error": <condition>, "detail": ...}`;
 * `kind` holds the condition name (e.g. "QueueEmpty", "AlreadyVerdicted").
 */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    detail?: string,
  ) {
    super(detail ? `${kind}: ${detail}` : kind);
  }
}

export class ReviewApi {
  constructor(
    private readonly fetchImpl: FetchLike,
    private readonly base: string = "",
  ) {}

  private async request<T>(
    path: string,
    init?: { method?: string; headers?: Record<string, string>; body?: string },
  ): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    const body = (await resp.json()) as Record<string, unknown>;
    if (resp.status >= 400) {
      throw new ApiError(
        resp.status,
        typeof body.error === "string" ? body.error : "UnknownError",
        typeof body.detail === "string" ? body.detail : undefined,
      );
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  createQueue(n: number, seed: number): Promise<QueueCreated> {
    return this.post("/api/queue", { n, seed });
  }

  nextItem(queueId: string, reviewer: string): Promise<ReviewItem> {
    const qid = encodeURIComponent(queueId);
    const who = encodeURIComponent(reviewer);
    return this.request(`/api/queue/${qid}/next?reviewer=${who}`);
  }

  submitVerdict(
    itemId: string,
    reviewerId: string,
    verdict: Verdict,
  ): Promise<ReviewItem> {
    return this.post("/api/verdict", {
      item_id: itemId,
      reviewer_id: reviewerId,
      verdict,
    });
  }

  summary(queueId: string): Promise<ReviewSummary> {
    return this.request(`/api/summary/${encodeURIComponent(queueId)}`);
  }

  /** The PNG itself is fetched by the <img> tag; only the URL is built here. */
  sliceUrl(studyUid: string, index: number, view: SliceView): string {
    const query = new URLSearchParams({
      wc: String(view.wc),
      ww: String(view.ww),
      overlay: String(view.overlay),
    });
    return `${this.base}/api/slice/${encodeURIComponent(studyUid)}/${index}?${query}`;
  }
}
