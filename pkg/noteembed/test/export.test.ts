import { execFileSync } from "node:child_process";
import fs from "node:fs";
import os from "node:os";
import path from "node:path";

import { afterAll, describe, expect, it } from "vitest";

import { EMBEDDING_DIM } from "../src/encode.js";
import { readEmbeddings } from "../src/files.js";
import { exportEmbeddings } from "../src/index.js";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "noteembed-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function writeNotes(rows: string[][], withText = true): string {
  const header = withText
    ? "note_id,stay_id,charttime,text"
    : "note_id,stay_id,charttime";
  const csv = [header]
    .concat(rows.map((r) => r.map((c) => `"${c.replace(/"/g, '""')}"`).join(",")))
    .join("\n");
  const p = path.join(tmp, `notes-${rows.length}-${withText}.csv`);
  fs.writeFileSync(p, csv + "\n");
  return p;
}

const FIXTURE_ROWS = [
  ["N1", "S2", "2140-01-01T08:00:00Z", "[**Name**] CHEST: clear,\nno effusion"],
  ["N2", "S1", "2140-01-02T09:30:00Z", "IMPRESSION: low lung volumes"],
  ["N0", "S1", "2140-01-01T04:00:00Z", "CT abd/pelvis unremarkable"],
  ["Nempty", "S3", "2140-01-03T00:00:00Z", "[**gone**]  "],
];

describe("embedding export", () => {
  it("writes ordered records and skips empty notes", async () => {
    const notesPath = writeNotes(FIXTURE_ROWS);
    const outPath = path.join(tmp, "emb.csv");
    const result = await exportEmbeddings({ notesPath, outPath });
    expect(result.written).toBe(3);
    expect(result.skippedEmpty).toEqual(["Nempty"]);

    const back = readEmbeddings(outPath);
    // ordered by (stay_id, charttime)
    expect(back.map((r) => r.noteId)).toEqual(["N0", "N2", "N1"]);
    for (const record of back) {
      expect(record.vector.length).toBe(EMBEDDING_DIM);
    }
  });

  it("round-trips losslessly at float32 through its own reader", async () => {
    const notesPath = writeNotes(FIXTURE_ROWS);
    const outPath = path.join(tmp, "emb-rt.csv");
    await exportEmbeddings({ notesPath, outPath });
    const first = readEmbeddings(outPath);
    const { makeEncoder } = await import("../src/encode.js");
    const { preprocess } = await import("../src/preprocess.js");
    const encoder = makeEncoder();
    for (const record of first) {
      const row = FIXTURE_ROWS.find((r) => r[0] === record.noteId)!;
      const fresh = await encoder.encode(preprocess(row[3]));
      expect([...record.vector]).toEqual([...fresh]);
    }
  });

  it("round-trips through the core pipeline's python reader", async () => {
    const notesPath = writeNotes(FIXTURE_ROWS);
    const outPath = path.join(tmp, "emb-core.csv");
    await exportEmbeddings({ notesPath, outPath });

    let pythonOut: string;
    try {
      pythonOut = execFileSync(
        "python3",
        [
          "-c",
          [
            "import json, sys",
            "from icurisk.sampling import load_embeddings",
            "notes = load_embeddings(sys.argv[1])",
            "out = {sid: {'ids': sn.note_ids,",
            "             'vecs': [[float(x) for x in v] for v in sn.vectors]}",
            "       for sid, sn in notes.items()}",
            "print(json.dumps(out))",
          ].join("\n"),
          outPath,
        ],
        { encoding: "utf-8" },
      );
    } catch {
      console.warn("python core reader unavailable; skipping cross check");
      return;
    }
    const core = JSON.parse(pythonOut) as Record<
      string,
      { ids: string[]; vecs: number[][] }
    >;
    const ours = readEmbeddings(outPath);
    let checked = 0;
    for (const record of ours) {
      const stay = core[record.stayId];
      expect(stay).toBeDefined();
      const idx = stay.ids.indexOf(record.noteId);
      expect(idx).toBeGreaterThanOrEqual(0);
      const coreVec = stay.vecs[idx];
      expect(coreVec.length).toBe(EMBEDDING_DIM);
      for (let d = 0; d < EMBEDDING_DIM; d++) {
        expect(Math.fround(coreVec[d])).toBe(record.vector[d]);
      }
      checked += 1;
    }
    expect(checked).toBe(3);
  });

  it("reads sidecar text files when the text column is absent", async () => {
    const textDir = path.join(tmp, "texts");
    fs.mkdirSync(textDir, { recursive: true });
    fs.writeFileSync(path.join(textDir, "N9.txt"), "Chest CLEAR today");
    const notesPath = writeNotes(
      [["N9", "S9", "2140-01-05T00:00:00Z"]],
      false,
    );
    const outPath = path.join(tmp, "emb-sidecar.csv");
    const result = await exportEmbeddings({ notesPath, outPath, textDir });
    expect(result.written).toBe(1);
  });

  it("rejects notes files missing required columns", async () => {
    const p = path.join(tmp, "bad.csv");
    fs.writeFileSync(p, "note_id,text\nN1,hello\n");
    await expect(
      exportEmbeddings({ notesPath: p, outPath: path.join(tmp, "x.csv") }),
    ).rejects.toThrow(/stay_id/);
  });
});
