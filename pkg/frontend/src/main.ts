// DOM wiring: render the controller state, map buttons and keys to choices.

import { HttpApiClient, ItemView, RawChoice } from "./api.js";
import { ControllerState, SessionController } from "./controller.js";

const CHOICE_KEYS: Record<string, RawChoice> = {
  "1": "left",
  "2": "right",
  e: "equivalent",
  d: "discard",
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function render(state: ControllerState): void {
  const status = el<HTMLElement>("status");
  const judging = el<HTMLElement>("judging");
  const summary = el<HTMLElement>("summary");
  const buttons = document.querySelectorAll<HTMLButtonElement>(".choice");

  buttons.forEach((b) => (b.disabled = state.phase !== "showing"));
  judging.hidden = !(state.phase === "showing" || state.phase === "submitting");
  summary.hidden = state.phase !== "done";

  if (state.phase === "error") {
    status.textContent = `connection problem: ${state.error} (retrying is safe)`;
    return;
  }
  if (state.phase === "loading") {
    status.textContent = "loading…";
    return;
  }
  if (state.phase === "done" && state.view) {
    status.textContent = "";
    summary.textContent = `Session complete - ${state.view.judged} of ${state.view.total} images judged. Thank you!`;
    return;
  }
  const view = state.view as ItemView;
  status.textContent = state.phase === "submitting" ? "saving…" : "";
  el<HTMLImageElement>("image").src = view.image_url;
  el<HTMLElement>("score-left").textContent = view.left_score.toFixed(2);
  el<HTMLElement>("score-right").textContent = view.right_score.toFixed(2);
  el<HTMLElement>("progress").textContent = `${view.judged} / ${view.total}`;
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const dataset = params.get("dataset") ?? "network";
  const tester = params.get("tester") ?? `tester-${Math.random().toString(36).slice(2, 8)}`;
  const api = new HttpApiClient("");

  // resume an existing session if the browser was refreshed mid-run
  const storageKey = `stedq-session-${dataset}-${tester}`;
  let sessionId = window.sessionStorage.getItem(storageKey);
  if (!sessionId) {
    const seed = Math.floor(Math.random() * 1_000_000);
    const info = await api.createSession(tester, dataset, seed);
    sessionId = info.session_id;
    window.sessionStorage.setItem(storageKey, sessionId);
  }

  const controller = new SessionController(api, sessionId);
  controller.subscribe(render);

  document.querySelectorAll<HTMLButtonElement>(".choice").forEach((button) => {
    button.addEventListener("click", () => {
      void controller.choose(button.dataset.choice as RawChoice);
    });
  });
  window.addEventListener("keydown", (event) => {
    const choice = CHOICE_KEYS[event.key];
    if (choice) void controller.choose(choice);
  });
  el<HTMLElement>("tester").textContent = tester;

  await controller.refresh();
}

void start();
