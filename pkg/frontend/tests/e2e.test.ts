// Scripted end-to-end session against the real judging service.
//
// Spawns `python3 -m stedq.cli serve` on a freshly generated 10-item study
// dataset, drives a full session through the same client + controller the
// browser uses, then inspects the journal on disk.

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, readdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, HttpApiClient, RawChoice } from "../src/api.js";
import { SessionController } from "../src/controller.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

const MAKE_DATASET = `
import sys, numpy as np
from pathlib import Path
from stedq import data
from stedq.service import DatasetItem, save_study_dataset

root = Path(sys.argv[1])
dataset_dir = root / "datasets" / "demo"
image_dir = dataset_dir / "images"
image_dir.mkdir(parents=True)
rng = np.random.default_rng(0)
items = []
for i in range(10):
    path = image_dir / f"img{i}.pgm"
    data.write_pgm(path, rng.uniform(size=(16, 16)))
    target = round(float(rng.uniform()), 6)
    pred = round(float(np.clip(target + rng.normal(scale=0.2), 0, 1)), 6)
    items.append(DatasetItem(f"img{i}", path, target, pred))
save_study_dataset(dataset_dir, items)
`;

let server: ChildProcess;
let dataDir: string;

async function waitForServer(): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt++) {
    try {
      const resp = await fetch(`${BASE}/sessions/none/next`);
      if (resp.status === 404) return; // service is answering
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  dataDir = mkdtempSync(join(tmpdir(), "stedq-e2e-"));
  const made = spawnSync("python3", ["-c", MAKE_DATASET, dataDir], { encoding: "utf-8" });
  if (made.status !== 0) {
    throw new Error(`dataset generation failed: ${made.stderr}`);
  }
  server = spawn("python3", [
    "-m", "stedq.cli", "serve",
    "--data-dir", dataDir,
    "--host", "127.0.0.1",
    "--port", String(PORT),
  ], { stdio: "ignore" });
  await waitForServer();
}, 60_000);

afterAll(() => {
  server?.kill();
});

describe("end-to-end judging session", () => {
  const api = new HttpApiClient(BASE);

  it("runs 10 items and journals 10 blind-resolved judgments in order", async () => {
    const session = await api.createSession("e2e-tester", "demo", 7);
    expect(session.total).toBe(10);

    const controller = new SessionController(api, session.session_id);
    await controller.refresh();

    const pattern: RawChoice[] = ["left", "right", "equivalent", "discard"];
    const chosen: Array<{ itemId: string; choice: RawChoice }> = [];
    for (let i = 0; i < 10; i++) {
      const view = controller.state.view;
      expect(view && !view.done).toBe(true);
      if (!view || view.done) break;
      const choice = pattern[i % pattern.length];
      chosen.push({ itemId: view.item_id, choice });
      expect(await controller.choose(choice)).toBe(true);
    }
    expect(controller.state.phase).toBe("done");

    // inspect the journal on disk
    const journalDir = join(dataDir, "journals");
    const files = readdirSync(journalDir).filter((f) => f.endsWith(".jsonl"));
    expect(files).toHaveLength(1);
    const lines = readFileSync(join(journalDir, files[0]), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    const header = lines[0];
    const records = lines.slice(1);
    expect(header.type).toBe("session");
    expect(records).toHaveLength(10);

    records.forEach((record, i) => {
      expect(record.type).toBe("judgment");
      expect(record.seq).toBe(i);
      expect(record.item_id).toBe(chosen[i].itemId);
      expect(record.raw).toBe(chosen[i].choice);
      const blind = header.blind[record.item_id];
      const expected =
        record.raw === "equivalent" || record.raw === "discard"
          ? record.raw
          : record.raw === blind
            ? "prediction"
            : "target";
      expect(record.resolved).toBe(expected);
    });
  }, 30_000);

  it("rejects duplicate submissions without adding records", async () => {
    const session = await api.createSession("dup-tester", "demo", 8);
    const view = await api.nextItem(session.session_id);
    expect(view.done).toBe(false);
    if (view.done) return;

    await api.submitJudgment(session.session_id, view.item_id, "left");
    await expect(
      api.submitJudgment(session.session_id, view.item_id, "left"),
    ).rejects.toThrowError(ApiError);
    try {
      await api.submitJudgment(session.session_id, view.item_id, "right");
    } catch (err) {
      expect((err as ApiError).code).toBe("duplicate");
      expect((err as ApiError).status).toBe(409);
    }

    const journalDir = join(dataDir, "journals");
    const file = readdirSync(journalDir)
      .filter((f) => f.endsWith(".jsonl"))
      .map((f) => join(journalDir, f))
      .find((f) => readFileSync(f, "utf-8").includes("dup-tester"));
    expect(file).toBeDefined();
    const records = readFileSync(file!, "utf-8").trim().split("\n").slice(1);
    expect(records).toHaveLength(1);
  }, 30_000);

  it("a refreshed client resumes at the same item", async () => {
    const session = await api.createSession("resume-tester", "demo", 9);
    const first = new SessionController(api, session.session_id);
    await first.refresh();
    await first.choose("equivalent");
    const current = first.state.view;

    // simulate a page reload: a brand new controller over the same session
    const second = new SessionController(api, session.session_id);
    await second.refresh();
    expect(second.state.view).toEqual(current);
  }, 30_000);

  it("serves the judged image as PNG", async () => {
    const resp = await fetch(`${BASE}/items/img0/image`);
    expect(resp.status).toBe(200);
    expect(resp.headers.get("content-type")).toBe("image/png");
    const bytes = new Uint8Array(await resp.arrayBuffer());
    expect(Array.from(bytes.slice(0, 4))).toEqual([0x89, 0x50, 0x4e, 0x47]);
  });
});
