import { ApiError, ReviewApi } from "./api.js";
import { actionForKey } from "./keyboard.js";
import { ReviewSession } from "./session.js";
import type { SessionState } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const startForm = el<HTMLFormElement>("start-form");
const reviewerInput = el<HTMLInputElement>("reviewer");
const queueSizeInput = el<HTMLInputElement>("queue-size");
const seedInput = el<HTMLInputElement>("seed");
const studyLabel = el<HTMLElement>("study");
const scoreLabel = el<HTMLElement>("score");
const slicePos = el<HTMLElement>("slice-pos");
const sliceImg = el<HTMLImageElement>("slice-img");
const statusLine = el<HTMLElement>("status");
const summaryBox = el<HTMLElement>("summary");

let session: ReviewSession | null = null;

function render(state: SessionState): void {
  if (state.phase === "reviewing" && session) {
    const { item } = state;
    studyLabel.textContent = item.study_uid;
    scoreLabel.textContent = `${item.ai_rounded} (${item.bin})`;
    const pos = session.slicePosition();
    slicePos.textContent = `slice ${pos.at} of ${pos.of}`;
    sliceImg.src = session.sliceUrl();
    statusLine.textContent = "1 correct, 2 uncertain, 3 incorrect";
    return;
  }
  if (state.phase === "done") {
    const s = state.summary;
    const pct =
      s.proportion_correct === null
        ? "n/a"
        : `${(100 * s.proportion_correct).toFixed(1)}%`;
    summaryBox.textContent =
      `${s.n_reviewed} reviewed: ${s.n_correct} correct, ` +
      `${s.n_uncertain} uncertain, ${s.n_incorrect} incorrect (${pct})`;
    statusLine.textContent = "queue complete";
    sliceImg.removeAttribute("src");
  }
}

async function start(): Promise<void> {
  const api = new ReviewApi(
    (url, init) => window.fetch(url, init),
    window.location.origin.replace(/\/$/, ""),
  );
  const n = Number(queueSizeInput.value) || 50;
  const seed = Number(seedInput.value) || 1;
  const { queue_id } = await api.createQueue(n, seed);
  session = new ReviewSession(api, queue_id, reviewerInput.value || "anon");
  render(await session.advance());
}

startForm.addEventListener("submit", (event) => {
  event.preventDefault();
  start().catch((err) => {
    statusLine.textContent =
      err instanceof ApiError ? err.message : "failed to start";
  });
});

document.addEventListener("keydown", (event) => {
  if (!session) return;
  const action = actionForKey({
    key: event.key,
    ctrlKey: event.ctrlKey,
    metaKey: event.metaKey,
    altKey: event.altKey,
    target: event.target instanceof HTMLElement ? event.target : null,
  });
  if (!action) return;
  event.preventDefault();

  if (action.kind === "step") {
    session.stepSlice(action.delta);
  } else if (action.kind === "toggle-overlay") {
    session.toggleOverlay();
  } else if (action.kind === "window") {
    session.setWindow(action.wc, action.ww);
  } else {
    if (!session.canSubmit()) return;
    session
      .submit(action.verdict)
      .then(render)
      .catch((err) => {
        statusLine.textContent =
          err instanceof ApiError ? err.message : "verdict failed";
      });
    return;
  }
  render(session.state());
});
