// DOM-free session state machine.
//
// Invariants: state is a pure function of server responses (nothing is
// inferred client-side), and at most one request is in flight, so repeated
// clicks cannot produce duplicate judgments.

import { ApiClient, ApiError, NextView, RawChoice } from "./api.js";

export type Phase = "loading" | "showing" | "submitting" | "done" | "error";

export interface ControllerState {
  phase: Phase;
  view: NextView | null;
  error: string | null;
}

export type Listener = (state: ControllerState) => void;

export class SessionController {
  private phase: Phase = "loading";
  private view: NextView | null = null;
  private error: string | null = null;
  private listeners: Listener[] = [];

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
  ) {}

  get state(): ControllerState {
    return { phase: this.phase, view: this.view, error: this.error };
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    const snapshot = this.state;
    for (const listener of this.listeners) {
      listener(snapshot);
    }
  }

  private apply(view: NextView): void {
    this.view = view;
    this.phase = view.done ? "done" : "showing";
    this.error = null;
    this.emit();
  }

  /** Fetch the current item; safe to call any number of times. */
  async refresh(): Promise<void> {
    this.phase = "loading";
    this.emit();
    try {
      this.apply(await this.api.nextItem(this.sessionId));
    } catch (err) {
      this.phase = "error";
      this.error = err instanceof Error ? err.message : String(err);
      this.emit();
    }
  }

  /**
   * Submit a choice for the displayed item.  Returns false when ignored
   * (nothing on screen, or a submission already in flight).
   */
  async choose(choice: RawChoice): Promise<boolean> {
    if (this.phase !== "showing" || this.view === null || this.view.done) {
      return false;
    }
    const item = this.view;
    this.phase = "submitting";
    this.emit();
    try {
      await this.api.submitJudgment(this.sessionId, item.item_id, choice);
    } catch (err) {
      if (err instanceof ApiError && (err.code === "duplicate" || err.code === "out_of_order")) {
        // the server already moved past this item; fall through and resync
      } else {
        this.phase = "showing"; // keep the item; the user may retry
        this.error = err instanceof Error ? err.message : String(err);
        this.emit();
        return false;
      }
    }
    await this.refresh();
    return true;
  }
}
