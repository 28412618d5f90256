#!/usr/bin/env node
/** Thin CLI over exportEmbeddings. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { HASHED_MODEL_ID } from "./encode.js";
import { exportEmbeddings } from "./index.js";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .scriptName("noteembed")
    .option("notes", {
      type: "string",
      demandOption: true,
      describe: "notes.csv with note_id,stay_id,charttime[,text]",
    })
    .option("out", {
      type: "string",
      demandOption: true,
      describe: "output embedding CSV path",
    })
    .option("model", {
      type: "string",
      default: HASHED_MODEL_ID,
      describe:
        "encoder id: the built-in deterministic 'hashed-768' or a " +
        "pretrained transformer model id",
    })
    .option("text-dir", {
      type: "string",
      describe: "sidecar directory with <note_id>.txt files",
    })
    .strict()
    .help()
    .parse();

  try {
    await exportEmbeddings({
      notesPath: argv.notes,
      outPath: argv.out,
      modelId: argv.model,
      textDir: argv["text-dir"],
      log: (line) => console.error(line),
    });
    return 0;
  } catch (err) {
    console.error(`noteembed: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

main().then((code) => process.exit(code));
