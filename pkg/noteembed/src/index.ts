/**
 * Note preprocessing and embedding export: reads the pipeline's notes.csv,
 * preprocesses each note, encodes it with a frozen encoder, and writes the
 * embedding file the core's sampler consumes.
 */

import { preprocess } from "./preprocess.js";
import { Encoder, makeEncoder } from "./encode.js";
import {
  EmbeddingRecord,
  NoteRecord,
  readNotes,
  writeEmbeddings,
} from "./files.js";

export { preprocess, removePlaceholders } from "./preprocess.js";
export {
  EMBEDDING_DIM,
  MAX_TOKENS,
  HASHED_MODEL_ID,
  DEFAULT_MODEL_ID,
  makeEncoder,
  tokenize,
  truncateTokens,
} from "./encode.js";
export type { Encoder } from "./encode.js";
export {
  formatValue,
  readEmbeddings,
  readNotes,
  writeEmbeddings,
} from "./files.js";
export type { EmbeddingRecord, NoteRecord } from "./files.js";

export interface ExportResult {
  written: number;
  skippedEmpty: string[];
  failed: string[];
}

/** Encode preprocessed notes; empty notes are skipped with a logged reason. */
export async function embedNotes(
  notes: NoteRecord[],
  encoder: Encoder,
  log: (line: string) => void = () => {},
): Promise<{ records: EmbeddingRecord[]; result: ExportResult }> {
  const records: EmbeddingRecord[] = [];
  const result: ExportResult = { written: 0, skippedEmpty: [], failed: [] };
  for (const note of notes) {
    const clean = preprocess(note.text);
    if (clean.length === 0) {
      result.skippedEmpty.push(note.noteId);
      log(`skip ${note.noteId}: empty after preprocessing`);
      continue;
    }
    try {
      const vector = await encoder.encode(clean);
      records.push({
        noteId: note.noteId,
        stayId: note.stayId,
        charttime: note.charttime,
        vector,
      });
      result.written += 1;
    } catch (err) {
      result.failed.push(note.noteId);
      log(`skip ${note.noteId}: inference failed: ${String(err)}`);
    }
  }
  return { records, result };
}

export async function exportEmbeddings(options: {
  notesPath: string;
  outPath: string;
  modelId?: string;
  textDir?: string;
  log?: (line: string) => void;
}): Promise<ExportResult> {
  const log = options.log ?? (() => {});
  const notes = readNotes(options.notesPath, options.textDir);
  const encoder = makeEncoder(options.modelId);
  const { records, result } = await embedNotes(notes, encoder, log);
  writeEmbeddings(records, options.outPath);
  log(
    `wrote ${result.written} embeddings (${result.skippedEmpty.length} empty, ` +
      `${result.failed.length} failed) with model ${encoder.modelId}`,
  );
  return result;
}
