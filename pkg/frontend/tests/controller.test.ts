// Unit tests for the DOM-free session controller against a scripted fake API.

import { describe, expect, it } from "vitest";

import { Ack, ApiClient, ApiError, NextView, RawChoice, SessionInfo } from "../src/api.js";
import { SessionController } from "../src/controller.js";

interface SubmitRecord {
  itemId: string;
  choice: RawChoice;
}

class FakeApi implements ApiClient {
  submitted: SubmitRecord[] = [];
  submitDelayMs = 0;
  failNextSubmit: Error | null = null;

  constructor(private items: Array<{ id: string; left: number; right: number }>) {}

  private cursor = 0;

  async createSession(): Promise<SessionInfo> {
    return { session_id: "s1", tester_id: "t", dataset_id: "d", total: this.items.length, status: "open" };
  }

  async nextItem(): Promise<NextView> {
    if (this.cursor >= this.items.length) {
      return { done: true, judged: this.items.length, total: this.items.length };
    }
    const item = this.items[this.cursor];
    return {
      done: false,
      item_id: item.id,
      image_url: `/items/${item.id}/image`,
      left_score: item.left,
      right_score: item.right,
      judged: this.cursor,
      total: this.items.length,
    };
  }

  async submitJudgment(_sid: string, itemId: string, choice: RawChoice): Promise<Ack> {
    if (this.submitDelayMs > 0) {
      await new Promise((resolve) => setTimeout(resolve, this.submitDelayMs));
    }
    if (this.failNextSubmit) {
      const err = this.failNextSubmit;
      this.failNextSubmit = null;
      throw err;
    }
    if (itemId !== this.items[this.cursor]?.id) {
      throw new ApiError(409, "out_of_order", `expected ${this.items[this.cursor]?.id}`);
    }
    this.submitted.push({ itemId, choice });
    this.cursor += 1;
    return { accepted: true, judged: this.cursor, total: this.items.length };
  }
}

const ITEMS = [
  { id: "a", left: 0.25, right: 0.75 },
  { id: "b", left: 0.5, right: 0.61 },
];

describe("SessionController", () => {
  it("walks a session to completion", async () => {
    const api = new FakeApi(ITEMS);
    const controller = new SessionController(api, "s1");
    await controller.refresh();
    expect(controller.state.phase).toBe("showing");

    expect(await controller.choose("left")).toBe(true);
    expect(await controller.choose("equivalent")).toBe(true);
    expect(controller.state.phase).toBe("done");
    expect(api.submitted).toEqual([
      { itemId: "a", choice: "left" },
      { itemId: "b", choice: "equivalent" },
    ]);
  });

  it("ignores a second click while a submission is in flight", async () => {
    const api = new FakeApi(ITEMS);
    api.submitDelayMs = 20;
    const controller = new SessionController(api, "s1");
    await controller.refresh();

    const first = controller.choose("left");
    const second = controller.choose("right"); // double click
    const [ok1, ok2] = await Promise.all([first, second]);
    expect(ok1).toBe(true);
    expect(ok2).toBe(false);
    expect(api.submitted).toHaveLength(1);
    expect(api.submitted[0]).toEqual({ itemId: "a", choice: "left" });
  });

  it("refresh is idempotent and resumes at the same item", async () => {
    const api = new FakeApi(ITEMS);
    const controller = new SessionController(api, "s1");
    await controller.refresh();
    const before = controller.state.view;
    await controller.refresh(); // simulated page reload
    expect(controller.state.view).toEqual(before);
  });

  it("keeps the item on a network failure so the user can retry", async () => {
    const api = new FakeApi(ITEMS);
    api.failNextSubmit = new Error("network down");
    const controller = new SessionController(api, "s1");
    await controller.refresh();

    expect(await controller.choose("left")).toBe(false);
    expect(controller.state.phase).toBe("showing");
    expect(controller.state.error).toContain("network down");
    expect(api.submitted).toHaveLength(0);

    expect(await controller.choose("left")).toBe(true);
    expect(api.submitted).toHaveLength(1);
  });

  it("resyncs when the server reports a duplicate", async () => {
    const api = new FakeApi(ITEMS);
    api.failNextSubmit = new ApiError(409, "duplicate", "already judged");
    const controller = new SessionController(api, "s1");
    await controller.refresh();

    expect(await controller.choose("left")).toBe(true);
    // no judgment recorded, but the controller moved on to the server state
    expect(api.submitted).toHaveLength(0);
    expect(controller.state.phase).toBe("showing");
  });

  it("ignores choices before anything is shown", async () => {
    const api = new FakeApi(ITEMS);
    const controller = new SessionController(api, "s1");
    expect(await controller.choose("left")).toBe(false);
    expect(api.submitted).toHaveLength(0);
  });

  it("never reveals which side is the prediction", async () => {
    const api = new FakeApi(ITEMS);
    const controller = new SessionController(api, "s1");
    await controller.refresh();
    const view = controller.state.view;
    expect(view && !view.done ? Object.keys(view).sort() : []).toEqual(
      ["done", "image_url", "item_id", "judged", "left_score", "right_score", "total"],
    );
  });
});
