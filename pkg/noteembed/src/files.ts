/**
 * Note input and embedding output in the pipeline's file formats.
 *
 * Input: notes.csv with columns note_id, stay_id, charttime and either a
 * text column or sidecar files <text-dir>/<note_id>.txt.
 * Output: CSV with header note_id,stay_id,charttime,e0..e767; values
 * printed with 9 significant digits so float32 round-trips exactly.
 */

import fs from "node:fs";
import path from "node:path";
import Papa from "papaparse";

import { EMBEDDING_DIM } from "./encode.js";

export interface NoteRecord {
  noteId: string;
  stayId: string;
  charttime: string;
  text: string;
}

export interface EmbeddingRecord {
  noteId: string;
  stayId: string;
  charttime: string;
  vector: Float32Array;
}

export function readNotes(notesPath: string, textDir?: string): NoteRecord[] {
  if (!fs.existsSync(notesPath)) {
    throw new Error(`notes file not found: ${notesPath}`);
  }
  const parsed = Papa.parse<Record<string, string>>(
    fs.readFileSync(notesPath, "utf-8"),
    { header: true, skipEmptyLines: true },
  );
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new Error(`failed to parse ${notesPath}: ${first.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const column of ["note_id", "stay_id", "charttime"]) {
    if (!fields.includes(column)) {
      throw new Error(`${notesPath}: missing required column '${column}'`);
    }
  }
  const hasText = fields.includes("text");
  if (!hasText && !textDir) {
    throw new Error(
      `${notesPath} has no text column; pass a sidecar text directory`,
    );
  }
  return parsed.data.map((row) => {
    let text = row.text ?? "";
    if (!hasText && textDir) {
      const sidecar = path.join(textDir, `${row.note_id}.txt`);
      text = fs.existsSync(sidecar) ? fs.readFileSync(sidecar, "utf-8") : "";
    }
    return {
      noteId: row.note_id,
      stayId: row.stay_id,
      charttime: row.charttime,
      text,
    };
  });
}

/** Format one float32 value with 9 significant digits. */
export function formatValue(value: number): string {
  return Number(Math.fround(value)).toPrecision(9);
}

export function writeEmbeddings(
  records: EmbeddingRecord[],
  outPath: string,
): void {
  const ordered = [...records].sort(
    (a, b) =>
      a.stayId.localeCompare(b.stayId) ||
      a.charttime.localeCompare(b.charttime) ||
      a.noteId.localeCompare(b.noteId),
  );
  const dims = Array.from({ length: EMBEDDING_DIM }, (_, i) => `e${i}`);
  const header = `note_id,stay_id,charttime,${dims.join(",")}`;
  const lines = [header];
  for (const record of ordered) {
    if (record.vector.length !== EMBEDDING_DIM) {
      throw new Error(
        `embedding for note ${record.noteId} has length ${record.vector.length}`,
      );
    }
    const values = Array.from(record.vector, formatValue);
    lines.push(
      `${record.noteId},${record.stayId},${record.charttime},${values.join(",")}`,
    );
  }
  fs.writeFileSync(outPath, lines.join("\n") + "\n");
}

export function readEmbeddings(filePath: string): EmbeddingRecord[] {
  const parsed = Papa.parse<Record<string, string>>(
    fs.readFileSync(filePath, "utf-8"),
    { header: true, skipEmptyLines: true },
  );
  const fields = parsed.meta.fields ?? [];
  const dims = fields.filter((f) => /^e\d+$/.test(f));
  if (dims.length !== EMBEDDING_DIM) {
    throw new Error(
      `${filePath}: expected ${EMBEDDING_DIM} embedding columns, found ${dims.length}`,
    );
  }
  return parsed.data.map((row) => {
    const vector = new Float32Array(EMBEDDING_DIM);
    for (let d = 0; d < EMBEDDING_DIM; d++) {
      vector[d] = Math.fround(parseFloat(row[`e${d}`]));
    }
    return {
      noteId: row.note_id,
      stayId: row.stay_id,
      charttime: row.charttime,
      vector,
    };
  });
}
