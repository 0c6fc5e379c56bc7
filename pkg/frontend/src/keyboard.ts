import { WINDOW_PRESETS } from "./types.js";
import type { Verdict } from "./types.js";

export type ReviewAction =
  | { kind: "verdict"; verdict: Verdict }
  | { kind: "step"; delta: number }
  | { kind: "toggle-overlay" }
  | { kind: "window"; wc: number; ww: number };

/** The subset of KeyboardEvent the mapping reads; eases testing. */
export interface KeyLike {
  key: string;
  ctrlKey?: boolean;
  metaKey?: boolean;
  altKey?: boolean;
  target?: { tagName?: string } | null;
}

const TYPING_TAGS = new Set(["INPUT", "TEXTAREA", "SELECT"]);

const calcium = WINDOW_PRESETS[0]!;
const mediastinum = WINDOW_PRESETS[1]!;

/**
 * Key bindings:
 * - 1 / 2 / 3: verdict correct / uncertain / incorrect
 * - ArrowLeft / ArrowRight: previous / next positive slice
 * - o: toggle the lesion overlay
 * - c / m: calcium (90/750) / mediastinum (40/400) window presets
 *
 * Returns null for unbound keys, chorded keys, and keys typed into form
 * fields.
 */
export function actionForKey(event: KeyLike): ReviewAction | null {
  if (event.ctrlKey || event.metaKey || event.altKey) return null;
  const tag = event.target?.tagName;
  if (tag !== undefined && TYPING_TAGS.has(tag)) return null;

  switch (event.key) {
    case "1":
      return { kind: "verdict", verdict: "correct" };
    case "2":
      return { kind: "verdict", verdict: "uncertain" };
    case "3":
      return { kind: "verdict", verdict: "incorrect" };
    case "ArrowLeft":
      return { kind: "step", delta: -1 };
    case "ArrowRight":
      return { kind: "step", delta: 1 };
    case "o":
    case "O":
      return { kind: "toggle-overlay" };
    case "c":
    case "C":
      return { kind: "window", wc: calcium.wc, ww: calcium.ww };
    case "m":
    case "M":
      return { kind: "window", wc: mediastinum.wc, ww: mediastinum.ww };
    default:
      return null;
  }
}
