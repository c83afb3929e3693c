/**
 * End-to-end: drive the UI session logic for both annotators against the
 * real annotation service on a 10-item fixture study, then check the stored
 * ratings, the blinding guarantee, and that the stats endpoint agrees with
 * the library-side computation on the same records.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, FetchLike } from "../src/api.js";
import { AnnotationSession } from "../src/session.js";

const DIST_DIR = join(dirname(fileURLToPath(import.meta.url)), "..", "dist");

const MAKE_STUDY = `
import sys
from pathlib import Path
from PIL import Image
from chartkit.humaneval import StudyItem, write_study

study_dir = Path(sys.argv[1])
items = [
    StudyItem(
        item_id=f"item-{i:03d}",
        chart_image=f"chart-{i:03d}.png",
        candidates={
            "candidate_a": f"The series climbs steadily and peaks near point {i}.",
            "candidate_b": f"Values fall after point {i}, ending below the start.",
        },
    )
    for i in range(10)
]
write_study(
    study_dir,
    items,
    annotators=["anno-1", "anno-2"],
    seed=11,
    model_names={"candidate_a": "alpha-chart-3b", "candidate_b": "beta-chart-13b"},
)
for i in range(10):
    Image.new("RGB", (32, 24), ((i * 23) % 256, 80, 120)).save(
        study_dir / "charts" / f"chart-{i:03d}.png"
    )
print("study ready")
`;

const COMPUTE_STATS = `
import json, sys
from pathlib import Path
from chartkit.humaneval import RatingStore, Study, study_stats

study_dir = Path(sys.argv[1])
study = Study.load(study_dir)
store = RatingStore(study_dir / "ratings.jsonl")
print(json.dumps(study_stats(study, store), sort_keys=True))
`;

let studyDir: string;
let server: ChildProcess;
let baseUrl: string;
const servedBodies: string[] = [];

/** fetch wrapper that archives every served payload for the blinding scan */
const recordingFetch: FetchLike = async (url, init) => {
  const resp = await fetch(url, init);
  const copy = resp.clone();
  try {
    servedBodies.push(await copy.text());
  } catch {
    // binary bodies are scanned separately
  }
  return resp;
};

async function waitForServer(proc: ChildProcess): Promise<string> {
  return new Promise((resolve, reject) => {
    let stderr = "";
    const timer = setTimeout(
      () => reject(new Error(`service did not start; stderr so far:\n${stderr}`)),
      15_000,
    );
    proc.stderr!.on("data", (chunk: Buffer) => {
      stderr += chunk.toString();
      const match = stderr.match(/annotation service on (http:\/\/[\d.]+:\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`service exited early (${code}):\n${stderr}`));
    });
  });
}

beforeAll(async () => {
  studyDir = mkdtempSync(join(tmpdir(), "anno-study-"));
  execFileSync("python3", ["-c", MAKE_STUDY, studyDir]);
  server = spawn("python3", [
    "-m",
    "chartkit.cli",
    "serve-anno",
    "--study",
    studyDir,
    "--port",
    "0",
    "--ui-dir",
    DIST_DIR,
  ]);
  baseUrl = await waitForServer(server);
}, 30_000);

afterAll(() => {
  server?.kill();
  if (studyDir) {
    rmSync(studyDir, { recursive: true, force: true });
  }
});

function scoreFor(annotator: string, item: string, panel: number, axis: number): number {
  // deterministic, varied, always in 1..5
  const seed = annotator.length + item.charCodeAt(item.length - 1) + panel * 2 + axis * 3;
  return (seed % 5) + 1;
}

async function driveToCompletion(annotator: string): Promise<number> {
  const session = new AnnotationSession(new ApiClient(baseUrl, recordingFetch), annotator);
  await session.start();
  let submitted = 0;
  let guard = 0;
  while (session.snapshot().phase === "rating") {
    if (++guard > 50) {
      throw new Error("session did not converge");
    }
    const state = session.snapshot();
    const item = state.assignment!.item_id;
    for (let panel = 0; panel < 2; panel++) {
      for (let axis = 0; axis < state.assignment!.axes.length; axis++) {
        session.setScore(panel, axis, scoreFor(annotator, item, panel, axis));
      }
    }
    await session.submitAndAdvance();
    submitted++;
  }
  expect(session.snapshot().phase).toBe("done");
  return submitted;
}

describe("end-to-end annotation study", () => {
  it("drives both annotators to completion with exactly 20 stored ratings", async () => {
    expect(await driveToCompletion("anno-1")).toBe(10);
    expect(await driveToCompletion("anno-2")).toBe(10);

    const ratingLines = readFileSync(join(studyDir, "ratings.jsonl"), "utf-8")
      .split("\n")
      .filter((line) => line.trim() !== "");
    expect(ratingLines).toHaveLength(20);

    const stats = (await (await fetch(`${baseUrl}/api/stats`)).json()) as {
      n_ratings: number;
      complete: boolean;
    };
    expect(stats.n_ratings).toBe(20);
    expect(stats.complete).toBe(true);
  }, 60_000);

  it("leaks no model identity in any served payload", async () => {
    const models = JSON.parse(readFileSync(join(studyDir, "models.json"), "utf-8")) as Record<
      string,
      string
    >;
    const needles = Object.values(models);
    expect(needles).toContain("alpha-chart-3b"); // sanity: the study does know the names

    servedBodies.push(await (await fetch(`${baseUrl}/api/stats`)).text());
    servedBodies.push(await (await fetch(`${baseUrl}/`)).text());
    servedBodies.push(await (await fetch(`${baseUrl}/api/assignment?annotator=anno-1`)).text());

    expect(servedBodies.length).toBeGreaterThan(40); // assignments + posts + stats
    for (const body of servedBodies) {
      for (const needle of needles) {
        expect(body).not.toContain(needle);
      }
    }
  });

  it("reports stats equal to the library-side computation on the same records", async () => {
    const endpoint = (await (await fetch(`${baseUrl}/api/stats`)).json()) as unknown;
    const direct = JSON.parse(
      execFileSync("python3", ["-c", COMPUTE_STATS, studyDir], { encoding: "utf-8" }),
    ) as unknown;
    expect(endpoint).toEqual(direct);
  });

  it("serves the built UI bundle", async () => {
    const index = await (await fetch(`${baseUrl}/`)).text();
    expect(index).toContain('<div id="app">');
    expect(index).toContain("/assets/main.js");
    const mainJs = await fetch(`${baseUrl}/assets/main.js`);
    expect(mainJs.status).toBe(200);
    expect(await mainJs.text()).toContain("AnnotationSession");
    const css = await fetch(`${baseUrl}/assets/styles.css`);
    expect(css.status).toBe(200);
    const chart = await fetch(`${baseUrl}/charts/chart-000.png`);
    expect(chart.status).toBe(200);
    expect((await chart.arrayBuffer()).byteLength).toBeGreaterThan(8);
  });
});
