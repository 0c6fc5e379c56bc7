import { ApiError } from "./api.js";
import type {
  QueueCreated,
  ReviewItem,
  ReviewSummary,
  SliceView,
  Verdict,
} from "./types.js";

/** The API operations the session drives; ReviewApi satisfies this. */
export interface ReviewBackend {
  nextItem(queueId: string, reviewer: string): Promise<ReviewItem>;
  submitVerdict(
    itemId: string,
    reviewerId: string,
    verdict: Verdict,
  ): Promise<ReviewItem>;
  summary(queueId: string): Promise<ReviewSummary>;
  sliceUrl(studyUid: string, index: number, view: SliceView): string;
  createQueue?(n: number, seed: number): Promise<QueueCreated>;
}

export type SessionState =
  | { phase: "idle" }
  | { phase: "reviewing"; item: ReviewItem }
  | { phase: "done"; summary: ReviewSummary };

/**
 * One reviewer working through one queue.
 *
 * Invariants the server also enforces, kept locally so the UI never has
 * to show a round-trip error for them:
 * - slice URLs are built only from the item's positive_slice_indices
 *   (the cursor clamps instead of walking off the list),
 * - a verdict needs at least one viewed slice,
 * - one verdict per item (a second submit while one is in flight throws;
 *   a server-side AlreadyVerdicted is treated as already counted).
 */
export class ReviewSession {
  private item: ReviewItem | null = null;
  private summaryData: ReviewSummary | null = null;
  private cursor = 0;
  private viewed = false;
  private submitting = false;
  view: SliceView = { wc: 90, ww: 750, overlay: true };

  constructor(
    private readonly api: ReviewBackend,
    private readonly queueId: string,
    private readonly reviewerId: string,
  ) {}

  state(): SessionState {
    if (this.item) return { phase: "reviewing", item: this.item };
    if (this.summaryData) return { phase: "done", summary: this.summaryData };
    return { phase: "idle" };
  }

  /** Pull the next assignment, or the queue summary once drained. */
  async advance(): Promise<SessionState> {
    try {
      this.item = await this.api.nextItem(this.queueId, this.reviewerId);
    } catch (err) {
      if (err instanceof ApiError && err.kind === "QueueEmpty") {
        this.item = null;
        this.summaryData = await this.api.summary(this.queueId);
        return this.state();
      }
      throw err;
    }
    this.cursor = 0;
    this.viewed = false;
    this.submitting = false;
    return this.state();
  }

  sliceIndex(): number {
    if (!this.item) throw new Error("no item under review");
    const index = this.item.positive_slice_indices[this.cursor];
    if (index === undefined) throw new Error("item has no positive slices");
    return index;
  }

  /** Move the cursor; clamps at both ends. Returns the new slice index. */
  stepSlice(delta: number): number {
    if (!this.item) throw new Error("no item under review");
    const last = this.item.positive_slice_indices.length - 1;
    this.cursor = Math.min(Math.max(this.cursor + delta, 0), last);
    return this.sliceIndex();
  }

  slicePosition(): { at: number; of: number } {
    if (!this.item) throw new Error("no item under review");
    return { at: this.cursor + 1, of: this.item.positive_slice_indices.length };
  }

  /** URL for the current slice; requesting it counts as viewing. */
  sliceUrl(): string {
    if (!this.item) throw new Error("no item under review");
    const url = this.api.sliceUrl(
      this.item.study_uid,
      this.sliceIndex(),
      this.view,
    );
    this.viewed = true;
    return url;
  }

  toggleOverlay(): boolean {
    this.view = { ...this.view, overlay: !this.view.overlay };
    return this.view.overlay;
  }

  setWindow(wc: number, ww: number): void {
    this.view = { ...this.view, wc, ww };
  }

  canSubmit(): boolean {
    return this.item !== null && this.viewed && !this.submitting;
  }

  async submit(verdict: Verdict): Promise<SessionState> {
    if (!this.item) throw new Error("no item under review");
    if (this.submitting) throw new Error("verdict already submitted");
    if (!this.viewed) throw new Error("view a slice before submitting");
    this.submitting = true;
    try {
      await this.api.submitVerdict(this.item.item_id, this.reviewerId, verdict);
    } catch (err) {
      const counted = err instanceof ApiError && err.kind === "AlreadyVerdicted";
      if (!counted) {
        this.submitting = false;
        throw err;
      }
    }
    return this.advance();
  }
}
