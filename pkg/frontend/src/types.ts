/** Payload shapes of the review HTTP API, mirrored field for field. */

export type Verdict = "correct" | "uncertain" | "incorrect";

export interface QueueCreated {
  queue_id: string;
}

export interface ReviewItem {
  item_id: string;
  queue_id: string;
  study_uid: string;
  /** Slice indices that contain lesion voxels; the only ones fetchable. */
  positive_slice_indices: number[];
  ai_rounded: number;
  bin: string;
  assigned_reviewer: string | null;
  verdict: string | null;
  verdict_time: string | null;
}

export interface ReviewSummary {
  n_reviewed: number;
  n_correct: number;
  n_uncertain: number;
  n_incorrect: number;
  proportion_correct: number | null;
}

export interface SliceView {
  wc: number;
  ww: number;
  overlay: boolean;
}

export interface WindowPreset {
  name: string;
  wc: number;
  ww: number;
}

export const WINDOW_PRESETS: readonly WindowPreset[] = [
  { name: "calcium", wc: 90, ww: 750 },
  { name: "mediastinum", wc: 40, ww: 400 },
];
